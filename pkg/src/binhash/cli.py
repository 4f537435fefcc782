"""Command-line pipeline: synthesize, train, encode, query, evaluate.

Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failure during
training (checkpoints of completed stages are kept). Every command is
deterministic given its flags and seed. ``BINHASH_OUT`` supplies the default
output directory when a command does not receive one explicitly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import codes as cd
from . import continuation as cont
from . import encoder as enc
from . import evaluation as ev
from . import pairdata as pd
from . import retrieval as rt
from .config import ConfigError, effective_dict, load_run_config
from .errors import DegenerateDatasetError, NumericFailureError

OUTPUT_DIR_ENV = "BINHASH_OUT"

VARIANT_CHOICES = ("hashnet", "hashnet+c", "hashnet-w", "hashnet-sgn")
METRIC_CHOICES = ("map", "ph2", "pn", "pr")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _ids_sidecar_path(features_path) -> Path:
    p = Path(features_path)
    stem = p.name[: -len(".hnfv")] if p.name.endswith(".hnfv") else p.name
    return p.with_name(stem + ".ids.json")


def _load_features(path) -> pd.Dataset:
    dataset = pd.read_feature_file(path)
    sidecar = _ids_sidecar_path(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            ids = json.load(fh)
        if len(ids) != len(dataset):
            raise ValueError(f"{sidecar}: {len(ids)} ids for {len(dataset)} points")
        dataset = pd.Dataset(dataset.features, dataset.labels, np.asarray(ids, dtype=np.int64), dataset.label_count)
    return dataset


def _write_split_part(out_dir: Path, name: str, part: pd.Dataset) -> None:
    pd.write_feature_file(out_dir / f"{name}.hnfv", part)
    with open(out_dir / f"{name}.ids.json", "w") as fh:
        json.dump(part.ids.tolist(), fh)
        fh.write("\n")


def cmd_synth(args) -> int:
    if args.preset == "imbalanced":
        spec = dict(pd.IMBALANCED_PRESET)
    else:
        spec = {"classes": 8, "per_class": 250, "dim": 32, "spread": 4.0, "multilabel": False}
    for key in ("classes", "per_class", "dim", "spread"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    if args.multilabel:
        spec["multilabel"] = True
    dataset = pd.generate_synthetic(rng_seed=args.seed, **spec)
    pd.write_feature_file(args.out, dataset)
    stats = pd.estimate_stats(dataset)
    ratio = stats.dissimilar / stats.similar if stats.similar else float("inf")
    print(
        f"wrote {args.out}: points={len(dataset)} dim={dataset.dim} classes={dataset.label_count} "
        f"similar={stats.similar} dissimilar={stats.dissimilar} "
        f"similar_fraction={stats.similar / stats.total:.6f} dissimilar_to_similar={ratio:.2f}"
    )
    return 0


def _resolve_out_dir(explicit) -> Path:
    out = explicit or os.environ.get(OUTPUT_DIR_ENV)
    if not out:
        raise ConfigError(
            f"no output directory: set output_dir in the config, pass a flag, or export {OUTPUT_DIR_ENV}"
        )
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    out_dir = _resolve_out_dir(args.output_dir or config.output_dir)

    if config.features is not None:
        dataset = _load_features(config.features)
    else:
        s = config.synthetic
        data_seed = s.seed if s.seed is not None else config.seed
        dataset = pd.generate_synthetic(
            classes=s.classes,
            per_class=s.per_class,
            dim=s.dim,
            spread=s.spread,
            multilabel=s.multilabel,
            rng_seed=data_seed,
        )
        pd.write_feature_file(out_dir / "dataset.hnfv", dataset)

    if config.split is not None:
        train_set, database, queries = pd.split(
            dataset, config.split.mode, config.split.fractions, config.seed
        )
        _write_split_part(out_dir, "train", train_set)
        _write_split_part(out_dir, "database", database)
        _write_split_part(out_dir, "queries", queries)
        with open(out_dir / "splits.json", "w") as fh:
            json.dump(
                {
                    "mode": config.split.mode,
                    "fractions": list(config.split.fractions),
                    "train": train_set.ids.tolist(),
                    "database": database.ids.tolist(),
                    "queries": queries.ids.tolist(),
                },
                fh,
                sort_keys=True,
            )
            fh.write("\n")
    else:
        train_set = dataset

    with open(out_dir / "config.json", "w") as fh:
        json.dump(effective_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")

    params, log = cont.train_ablation(
        args.variant,
        train_set,
        config.encoder_config(),
        config.loss,
        config.schedule(),
        config.optimizer,
        config.seed,
        eval_points=config.eval_points,
        checkpoint_dir=out_dir,
        resume_from=args.resume,
    )
    log.write_ndjson(out_dir / "train_log.ndjson")
    final = log.final()
    print(
        f"trained variant={cont.normalize_variant(args.variant)} stages={log.meta['stages']} "
        f"J_sum={final.continuous_loss_sum:.6f} J_mean={final.continuous_loss_mean:.6f} "
        f"L_sum={final.binary_loss_sum:.6f} L_mean={final.binary_loss_mean:.6f} "
        f"mean_abs_g={final.mean_abs_code:.4f}"
    )
    print(f"checkpoint: {out_dir / 'checkpoint.hnck'}")
    return 0


def cmd_encode(args) -> int:
    state = enc.load_checkpoint(args.checkpoint)
    dataset = _load_features(args.features)
    codes = rt.encode_dataset(state.params, dataset)
    index = rt.CodeIndex.from_codes(codes, ids=dataset.ids, labels=dataset.labels)
    codes_path = args.out if str(args.out).endswith(".hnbc") else f"{args.out}.hnbc"
    rt.save_index(index, codes_path)
    print(f"wrote {codes_path}: codes={len(index)} bits={index.code_bits}")
    print(f"wrote {rt.default_manifest_path(codes_path)}")
    return 0


def cmd_eval(args) -> int:
    queries = rt.load_index(args.queries, args.queries_manifest, require_manifest=True)
    database = rt.load_index(args.database, args.database_manifest, require_manifest=True)
    if queries.labels is None or database.labels is None:
        return _fail("labels manifest is required for evaluation")
    metrics = tuple(m.strip() for m in args.metrics.split(",")) if args.metrics else METRIC_CHOICES
    for m in metrics:
        if m not in METRIC_CHOICES:
            return _fail(f"unknown metric {m!r}; choose from {METRIC_CHOICES}")
    n_values = None
    if args.n_values:
        n_values = [int(v) for v in args.n_values.split(",")]
    report = ev.evaluate(
        queries,
        database,
        k=args.k,
        n_values=n_values,
        denominator=args.ap_denominator,
        metrics=metrics,
    )
    out_dir = _resolve_out_dir(args.out)
    with open(out_dir / "report.json", "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    if "pr" in metrics:
        ev.write_pr_csv(out_dir / "pr.csv", report.pr_curve)
    if "pn" in metrics:
        ev.write_pn_csv(out_dir / "pn.csv", report.p_at_n)
    parts = []
    if "map" in metrics:
        parts.append(f"MAP@{report.k}={report.map_at_k:.6f}")
    if "ph2" in metrics:
        parts.append(f"P@H<=2={report.p_at_h2:.6f}")
    print(f"queries={report.query_count} database={len(database)} " + " ".join(parts))
    print(f"report: {out_dir / 'report.json'}")
    return 0


def cmd_query(args) -> int:
    index = rt.load_index(args.database)
    if (args.id is None) == (args.vector is None):
        return _fail("provide exactly one of --id or --vector")
    if args.id is not None:
        matches = np.flatnonzero(index.ids == args.id)
        if matches.size == 0:
            return _fail(f"id {args.id} not found in the database")
        query = index.code(int(matches[0]))
    else:
        if not args.checkpoint:
            return _fail("--vector needs --checkpoint to encode it")
        state = enc.load_checkpoint(args.checkpoint)
        vector = np.asarray([float(v) for v in args.vector.split(",")], dtype=np.float64)
        if vector.shape[0] != state.params.input_dim:
            return _fail(
                f"vector has dim {vector.shape[0]}, encoder expects {state.params.input_dim}"
            )
        z = enc.hash_preactivation(state.params, vector[np.newaxis, :])[0]
        query = cd.binarize(z)
    if args.radius is not None:
        result = rt.radius_query(index, query, args.radius)
    else:
        result = rt.rank(index, query, args.top_n)
    for item_id, distance in result:
        print(f"{item_id}\t{distance}")
    return 0


def cmd_histogram(args) -> int:
    state = enc.load_checkpoint(args.checkpoint)
    dataset = _load_features(args.features)
    z = enc.hash_preactivation(state.params, dataset.features.astype(np.float64))
    continuous = cd.scaled_tanh(z, state.beta)
    counts = ev.code_histogram(continuous, bins=args.bins)
    ev.write_histogram_csv(args.out, counts)
    top_fraction = counts[-1] / counts.sum()
    print(
        f"wrote {args.out}: entries={int(counts.sum())} bins={args.bins} "
        f"top_bin_fraction={top_fraction:.6f} (beta={state.beta:g})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binhash",
        description="Train binary hash codes on pairwise similarity and run Hamming-ranking retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clustered dataset (HNFV file)")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--spread", type=float, default=None)
    p.add_argument("--multilabel", action="store_true")
    p.add_argument("--preset", choices=("imbalanced",), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run staged training from a JSON config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--variant", choices=VARIANT_CHOICES, default="hashnet")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binarize a feature file with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output stem or .hnbc path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="score query codes against database codes")
    p.add_argument("--queries", required=True)
    p.add_argument("--database", required=True)
    p.add_argument("--queries-manifest", default=None)
    p.add_argument("--database-manifest", default=None)
    p.add_argument("-k", type=int, default=100)
    p.add_argument("--metrics", default=None, help="comma list from map,ph2,pn,pr (default all)")
    p.add_argument("--n-values", default=None, help="comma list of cutoffs for P@N")
    p.add_argument("--ap-denominator", choices=ev.AP_DENOMINATORS, default="retrieved")
    p.add_argument("--out", default=None, help="output directory (default $BINHASH_OUT)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="rank database codes against one query")
    p.add_argument("--database", required=True)
    p.add_argument("--id", type=int, default=None)
    p.add_argument("--vector", default=None, help="comma-separated features (needs --checkpoint)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--top-n", dest="top_n", type=int, default=10)
    p.add_argument("--radius", type=int, default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("histogram", help="histogram of non-binarized code magnitudes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=100)
    p.set_defaults(func=cmd_histogram)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DegenerateDatasetError, ValueError, OSError, json.JSONDecodeError) as exc:
        return _fail(str(exc))


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
