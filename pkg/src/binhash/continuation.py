"""Staged training that sharpens tanh toward the sign function.

Training runs through a strictly increasing sequence of bandwidths
``1 = beta_0 < beta_1 < ... < beta_m``. Each stage minimizes the weighted
pairwise loss with ``tanh(beta_t * z)`` as the code activation until the loss
stops improving, then the next stage starts from the converged parameters
(and, by default, the momentum buffers). Because tanh never changes the sign
of its input, the loss measured on *binarized* codes is exactly unchanged at
every stage switch; inference always uses the hard sign, which realizes the
infinite-bandwidth limit without any large finite arithmetic.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import pairdata as pd
from .errors import DegenerateDatasetError, NumericFailureError
from .loss import LossConfig, dense_code_grad, dense_pair_losses

VARIANTS = ("hashnet", "hashnet_plus_c", "hashnet_minus_w", "hashnet_sgn")

_VARIANT_ALIASES = {
    "hashnet": "hashnet",
    "hashnet+c": "hashnet_plus_c",
    "hashnet_plus_c": "hashnet_plus_c",
    "hashnet-w": "hashnet_minus_w",
    "hashnet_minus_w": "hashnet_minus_w",
    "hashnet-sgn": "hashnet_sgn",
    "hashnet_sgn": "hashnet_sgn",
}


@dataclass(frozen=True)
class ContinuationSchedule:
    """Bandwidth ladder plus the per-stage convergence policy."""

    betas: tuple[float, ...]
    max_epochs: int = 30
    tolerance: float = 1e-4
    patience: int = 3
    carry_momentum: bool = True

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) < 1:
            raise ValueError("schedule needs at least one stage")
        if betas[0] != 1.0:
            raise ValueError(f"the first bandwidth must be 1, got {betas[0]}")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError(f"bandwidths must be strictly increasing, got {betas}")
        if any(b <= 0 for b in betas):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "betas", betas)
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    @property
    def stages(self) -> int:
        return len(self.betas)


def default_schedule(stages: int, **kwargs) -> ContinuationSchedule:
    """Geometric bandwidths 1, 2, 4, ... doubling once per stage."""
    if stages < 1:
        raise ValueError("stages must be at least 1")
    return ContinuationSchedule(tuple(2.0**t for t in range(stages)), **kwargs)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 256
    lr_decay_factor: float = 1.0
    lr_decay_period: int = 0  # epochs; 0 disables step decay

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if self.lr_decay_period < 0:
            raise ValueError("lr_decay_period must be non-negative")


@dataclass(frozen=True)
class TrainRecord:
    """One evaluation snapshot; epoch 0 is the state at stage entry."""

    stage: int
    epoch: int
    continuous_loss_sum: float
    continuous_loss_mean: float
    binary_loss_sum: float
    binary_loss_mean: float
    mean_abs_code: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "epoch": self.epoch,
                "J_sum": self.continuous_loss_sum,
                "J_mean": self.continuous_loss_mean,
                "L_sum": self.binary_loss_sum,
                "L_mean": self.binary_loss_mean,
                "mean_abs_g": self.mean_abs_code,
                "seconds": self.seconds,
            }
        )


@dataclass
class TrainLog:
    """Ordered evaluation records plus run metadata, serializable as NDJSON."""

    meta: dict = field(default_factory=dict)
    records: list[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)

    def final(self) -> TrainRecord:
        if not self.records:
            raise ValueError("log has no records")
        return self.records[-1]

    def stage_boundaries(self) -> list[tuple[TrainRecord, TrainRecord]]:
        """(last record of stage t, first record of stage t+1) for each switch."""
        pairs = []
        for prev, nxt in zip(self.records, self.records[1:]):
            if nxt.stage != prev.stage:
                pairs.append((prev, nxt))
        return pairs

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.meta}) + "\n")
            for rec in self.records:
                fh.write(rec.to_json() + "\n")


def _stage_rng(seed, stage: int) -> np.random.Generator:
    # Per-stage stream derived from (seed, stage) so a run resumed at any
    # stage boundary replays the exact same batch order.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2, stage)))


class _Evaluator:
    """Fixed evaluation pair sample, reused at every snapshot of a run."""

    def __init__(self, dataset, stats, loss_config, eval_points, seed):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        size = min(len(dataset), eval_points)
        positions = np.sort(rng.choice(len(dataset), size=size, replace=False))
        self.features = dataset.features[positions].astype(np.float64)
        similar, continuous = pd.pair_matrices(dataset, positions)
        self.similar = similar
        self.weights = pd.weight_matrix(
            similar, continuous, stats, loss_config.weighted, loss_config.use_continuous_similarity
        )
        self.alpha = loss_config.alpha
        self.all_features = dataset.features.astype(np.float64)

    def snapshot(self, params, beta, stage, epoch, seconds) -> TrainRecord:
        codes, _ = enc.forward(params, beta, self.features)
        j_sum, l_sum, n_pairs = dense_pair_losses(codes, self.similar, self.weights, self.alpha)
        mean_abs = float(np.mean(np.abs(np.tanh(beta * enc.hash_preactivation(params, self.all_features)))))
        return TrainRecord(
            stage=stage,
            epoch=epoch,
            continuous_loss_sum=j_sum,
            continuous_loss_mean=j_sum / n_pairs,
            binary_loss_sum=l_sum,
            binary_loss_mean=l_sum / n_pairs,
            mean_abs_code=mean_abs,
            seconds=seconds,
        )


def train(
    dataset: pd.Dataset,
    encoder_config: enc.EncoderConfig,
    loss_config: LossConfig,
    schedule: ContinuationSchedule,
    optimizer_config: OptimizerConfig,
    rng_seed,
    eval_points: int = 512,
    checkpoint_dir=None,
    resume_from=None,
) -> tuple[enc.EncoderParams, TrainLog]:
    """Run the full staged optimization; deterministic given the seed.

    Parameters and momentum buffers carry across stage switches (momentum
    optionally resets per stage). When ``checkpoint_dir`` is given, a
    checkpoint is written after every completed stage plus a final
    ``checkpoint.hnck``; ``resume_from`` restarts after the checkpoint's last
    completed stage and reproduces the uninterrupted run bit-exactly.
    """
    n = len(dataset)
    if n < 2:
        raise ValueError("training needs at least 2 points")
    if eval_points < 2:
        raise ValueError("eval_points must be at least 2")

    stats = None
    if loss_config.weighted:
        stats = pd.estimate_stats(dataset)
        if stats.similar < 1 or stats.dissimilar < 1:
            raise DegenerateDatasetError(
                "weighted training needs both similar and dissimilar pairs; "
                f"got similar={stats.similar}, dissimilar={stats.dissimilar}"
            )

    if resume_from is not None:
        state = enc.load_checkpoint(resume_from)
        params, velocities = state.params, state.velocities
        start_stage = state.completed_stage + 1
        if start_stage > schedule.stages:
            raise ValueError(
                f"checkpoint already covers stage {state.completed_stage} "
                f"of a {schedule.stages}-stage schedule"
            )
    else:
        init_rng = np.random.default_rng(np.random.SeedSequence(entropy=rng_seed, spawn_key=(0,)))
        params = enc.init_params(dataset.dim, encoder_config, init_rng)
        velocities = enc.zero_velocities(params)
        start_stage = 0

    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    evaluator = _Evaluator(dataset, stats, loss_config, eval_points, rng_seed)
    log = TrainLog(
        meta={
            "betas": list(schedule.betas),
            "stages": schedule.stages,
            "weighted": loss_config.weighted,
            "use_continuous_similarity": loss_config.use_continuous_similarity,
            "alpha": loss_config.alpha,
            "seed": rng_seed if isinstance(rng_seed, int) else str(rng_seed),
            "points": n,
            "code_bits": encoder_config.code_bits,
            "start_stage": start_stage,
        }
    )
    opt = optimizer_config
    t0 = time.perf_counter()
    features = dataset.features.astype(np.float64)
    global_epoch = start_stage * schedule.max_epochs

    for stage in range(start_stage, schedule.stages):
        beta = schedule.betas[stage]
        if not schedule.carry_momentum:
            velocities = enc.zero_velocities(params)
        rng = _stage_rng(rng_seed, stage)
        log.append(evaluator.snapshot(params, beta, stage, 0, time.perf_counter() - t0))
        prev_loss = None
        flat_evals = 0
        for epoch in range(1, schedule.max_epochs + 1):
            lr = opt.learning_rate
            if opt.lr_decay_period:
                lr *= opt.lr_decay_factor ** (global_epoch // opt.lr_decay_period)
            order = rng.permutation(n)
            try:
                for start in range(0, n, opt.batch_size):
                    batch = order[start : start + opt.batch_size]
                    if batch.size < 2:
                        continue
                    codes, trace = enc.forward(params, beta, features[batch])
                    similar, continuous = pd.pair_matrices(dataset, batch)
                    weights = pd.weight_matrix(
                        similar,
                        continuous,
                        stats,
                        loss_config.weighted,
                        loss_config.use_continuous_similarity,
                    )
                    n_pairs = batch.size * (batch.size - 1) // 2
                    upstream = dense_code_grad(codes, similar, weights, loss_config.alpha) / n_pairs
                    grads = enc.backward(trace, params, beta, upstream)
                    enc.sgd_step(params, grads, velocities, lr, opt.momentum, opt.weight_decay)
            except NumericFailureError as exc:
                raise NumericFailureError(
                    f"stage {stage} epoch {epoch}: {exc}", stage=stage, epoch=epoch
                ) from exc
            global_epoch += 1
            record = evaluator.snapshot(params, beta, stage, epoch, time.perf_counter() - t0)
            log.append(record)
            if prev_loss is not None:
                improvement = (prev_loss - record.continuous_loss_mean) / max(abs(prev_loss), 1e-12)
                flat_evals = flat_evals + 1 if improvement < schedule.tolerance else 0
            prev_loss = record.continuous_loss_mean
            if flat_evals >= schedule.patience:
                break
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"checkpoint_stage{stage:02d}.hnck"
            enc.save_checkpoint(path, params, velocities, beta, stage)

    if checkpoint_dir is not None:
        enc.save_checkpoint(
            Path(checkpoint_dir) / "checkpoint.hnck",
            params,
            velocities,
            schedule.betas[-1],
            schedule.stages - 1,
        )
    return params, log


def normalize_variant(name: str) -> str:
    try:
        return _VARIANT_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(set(_VARIANT_ALIASES))}")


def train_ablation(
    variant: str,
    dataset: pd.Dataset,
    encoder_config: enc.EncoderConfig,
    loss_config: LossConfig,
    schedule: ContinuationSchedule,
    optimizer_config: OptimizerConfig,
    rng_seed,
    **kwargs,
) -> tuple[enc.EncoderParams, TrainLog]:
    """Train one of the named variants.

    ``hashnet`` is the full method (weighted, staged). ``hashnet_plus_c``
    additionally grades similar-pair weights by label overlap.
    ``hashnet_minus_w`` sets every pair weight to 1. ``hashnet_sgn`` trains a
    single stage at bandwidth 1 (plain tanh, same total epoch budget) and
    leaves binarization to a separate post-step.
    """
    variant = normalize_variant(variant)
    if variant == "hashnet":
        loss_config = LossConfig(loss_config.alpha, weighted=True, use_continuous_similarity=False)
    elif variant == "hashnet_plus_c":
        loss_config = LossConfig(loss_config.alpha, weighted=True, use_continuous_similarity=True)
    elif variant == "hashnet_minus_w":
        loss_config = LossConfig(loss_config.alpha, weighted=False, use_continuous_similarity=False)
    else:  # hashnet_sgn: one tanh stage, matched epoch budget
        loss_config = LossConfig(loss_config.alpha, weighted=True, use_continuous_similarity=False)
        schedule = ContinuationSchedule(
            betas=(1.0,),
            max_epochs=schedule.max_epochs * schedule.stages,
            tolerance=schedule.tolerance,
            patience=schedule.patience,
            carry_momentum=schedule.carry_momentum,
        )
    params, log = train(
        dataset, encoder_config, loss_config, schedule, optimizer_config, rng_seed, **kwargs
    )
    log.meta["variant"] = variant
    return params, log
