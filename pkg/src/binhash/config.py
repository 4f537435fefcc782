"""Strict JSON run configuration for the command-line pipeline.

Unknown keys are rejected everywhere so a typo cannot silently fall back to a
default. The effective configuration (defaults filled in) is echoed into the
run's output directory; re-running from that echo reproduces the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .continuation import ContinuationSchedule, OptimizerConfig, default_schedule
from .encoder import EncoderConfig
from .loss import LossConfig
from .pairdata import SPLIT_MODES


class ConfigError(ValueError):
    """A run configuration failed validation."""


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 8
    per_class: int = 250
    dim: int = 32
    spread: float = 4.0
    multilabel: bool = False
    seed: int | None = None  # defaults to the run seed


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "standard"
    fractions: tuple[float, float, float] = (0.5, 0.4, 0.1)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str | None = None
    code_bits: int = 16
    features: str | None = None
    synthetic: SyntheticSpec | None = None
    split: SplitSpec | None = None
    hidden: tuple[int, ...] = (256,)
    hash_lr_multiplier: float = 10.0
    loss: LossConfig = LossConfig()
    stages: int = 10
    max_epochs: int = 30
    tolerance: float = 1e-4
    patience: int = 3
    carry_momentum: bool = True
    optimizer: OptimizerConfig = OptimizerConfig()
    eval_points: int = 512

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.hidden, self.code_bits, self.hash_lr_multiplier)

    def schedule(self) -> ContinuationSchedule:
        return default_schedule(
            self.stages,
            max_epochs=self.max_epochs,
            tolerance=self.tolerance,
            patience=self.patience,
            carry_momentum=self.carry_momentum,
        )


def _take(section: dict, context: str, known: dict) -> dict:
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    merged = dict(known)
    merged.update(section)
    return merged


def _positive(value, context: str):
    if not value > 0:
        raise ConfigError(f"{context}: must be positive, got {value}")
    return value


def parse_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    top = _take(
        raw,
        "config",
        {
            "seed": 0,
            "output_dir": None,
            "code_bits": 16,
            "data": None,
            "split": None,
            "encoder": {},
            "loss": {},
            "schedule": {},
            "optimizer": {},
            "eval_points": 512,
        },
    )

    data = top["data"]
    if not isinstance(data, dict):
        raise ConfigError("config: a 'data' object with 'features' or 'synthetic' is required")
    data = _take(data, "data", {"features": None, "synthetic": None})
    features, synthetic = data["features"], data["synthetic"]
    if (features is None) == (synthetic is None):
        raise ConfigError("data: exactly one of 'features' or 'synthetic' must be set")
    synth_spec = None
    if synthetic is not None:
        synth = _take(
            synthetic,
            "data.synthetic",
            {"classes": 8, "per_class": 250, "dim": 32, "spread": 4.0, "multilabel": False, "seed": None},
        )
        synth_spec = SyntheticSpec(
            classes=int(synth["classes"]),
            per_class=int(synth["per_class"]),
            dim=int(synth["dim"]),
            spread=float(synth["spread"]),
            multilabel=bool(synth["multilabel"]),
            seed=None if synth["seed"] is None else int(synth["seed"]),
        )

    split_spec = None
    if top["split"] is not None:
        sp = _take(top["split"], "split", {"mode": "standard", "fractions": [0.5, 0.4, 0.1]})
        if sp["mode"] not in SPLIT_MODES:
            raise ConfigError(f"split.mode: must be one of {SPLIT_MODES}, got {sp['mode']!r}")
        fractions = tuple(float(f) for f in sp["fractions"])
        if len(fractions) != 3 or any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
            raise ConfigError(f"split.fractions: need three positive values summing to <= 1, got {fractions}")
        split_spec = SplitSpec(sp["mode"], fractions)

    encoder = _take(top["encoder"], "encoder", {"hidden": [256], "hash_lr_multiplier": 10.0})
    hidden = tuple(int(h) for h in encoder["hidden"])
    if any(h < 1 for h in hidden):
        raise ConfigError(f"encoder.hidden: widths must be positive, got {hidden}")

    loss = _take(
        top["loss"], "loss", {"alpha": 0.2, "weighted": True, "continuous_similarity": False}
    )
    _positive(float(loss["alpha"]), "loss.alpha")

    schedule = _take(
        top["schedule"],
        "schedule",
        {"stages": 10, "max_epochs": 30, "tolerance": 1e-4, "patience": 3, "carry_momentum": True},
    )
    optimizer = _take(
        top["optimizer"],
        "optimizer",
        {
            "learning_rate": 1e-2,
            "momentum": 0.9,
            "weight_decay": 5e-4,
            "batch_size": 256,
            "lr_decay_factor": 1.0,
            "lr_decay_period": 0,
        },
    )

    code_bits = int(top["code_bits"])
    if not 1 <= code_bits <= 4096:
        raise ConfigError(f"code_bits: must be in [1, 4096], got {code_bits}")
    eval_points = int(top["eval_points"])
    if eval_points < 2:
        raise ConfigError("eval_points: must be at least 2")

    try:
        return RunConfig(
            seed=int(top["seed"]),
            output_dir=top["output_dir"],
            code_bits=code_bits,
            features=features,
            synthetic=synth_spec,
            split=split_spec,
            hidden=hidden,
            hash_lr_multiplier=float(encoder["hash_lr_multiplier"]),
            loss=LossConfig(
                alpha=float(loss["alpha"]),
                weighted=bool(loss["weighted"]),
                use_continuous_similarity=bool(loss["continuous_similarity"]),
            ),
            stages=_positive(int(schedule["stages"]), "schedule.stages"),
            max_epochs=int(schedule["max_epochs"]),
            tolerance=_positive(float(schedule["tolerance"]), "schedule.tolerance"),
            patience=_positive(int(schedule["patience"]), "schedule.patience"),
            carry_momentum=bool(schedule["carry_momentum"]),
            optimizer=OptimizerConfig(
                learning_rate=float(optimizer["learning_rate"]),
                momentum=float(optimizer["momentum"]),
                weight_decay=float(optimizer["weight_decay"]),
                batch_size=int(optimizer["batch_size"]),
                lr_decay_factor=float(optimizer["lr_decay_factor"]),
                lr_decay_period=int(optimizer["lr_decay_period"]),
            ),
            eval_points=eval_points,
        )
    except ValueError as exc:  # range checks inside the dataclasses
        raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    config = parse_run_config(raw)
    if config.features is not None and not os.path.exists(config.features):
        raise ConfigError(f"data.features: no such file {config.features!r}")
    return config


def effective_dict(config: RunConfig) -> dict:
    """The fully defaulted configuration, suitable for byte-stable re-runs."""
    data: dict = {"features": config.features, "synthetic": None}
    if config.synthetic is not None:
        s = config.synthetic
        data["synthetic"] = {
            "classes": s.classes,
            "per_class": s.per_class,
            "dim": s.dim,
            "spread": s.spread,
            "multilabel": s.multilabel,
            "seed": s.seed,
        }
    return {
        "seed": config.seed,
        "output_dir": config.output_dir,
        "code_bits": config.code_bits,
        "data": data,
        "split": None
        if config.split is None
        else {"mode": config.split.mode, "fractions": list(config.split.fractions)},
        "encoder": {"hidden": list(config.hidden), "hash_lr_multiplier": config.hash_lr_multiplier},
        "loss": {
            "alpha": config.loss.alpha,
            "weighted": config.loss.weighted,
            "continuous_similarity": config.loss.use_continuous_similarity,
        },
        "schedule": {
            "stages": config.stages,
            "max_epochs": config.max_epochs,
            "tolerance": config.tolerance,
            "patience": config.patience,
            "carry_momentum": config.carry_momentum,
        },
        "optimizer": {
            "learning_rate": config.optimizer.learning_rate,
            "momentum": config.optimizer.momentum,
            "weight_decay": config.optimizer.weight_decay,
            "batch_size": config.optimizer.batch_size,
            "lr_decay_factor": config.optimizer.lr_decay_factor,
            "lr_decay_period": config.optimizer.lr_decay_period,
        },
        "eval_points": config.eval_points,
    }
