"""Session-scoped training runs shared by the acceptance and trainer tests."""

import time
from dataclasses import dataclass

import pytest

from binhash import continuation as cont
from binhash import pairdata as pd
from binhash import retrieval as rt
from binhash.continuation import OptimizerConfig, default_schedule
from binhash.encoder import EncoderConfig
from binhash.loss import LossConfig

# The synthetic benchmark: 8 Gaussian clusters, D=32, N=2000, K=16, m=10,
# 200 held-out queries, everything seeded.
BENCHMARK = {
    "classes": 8,
    "per_class": 250,
    "dim": 32,
    "spread": 6.0,
    "seed": 7,
    "fractions": (0.5, 0.4, 0.1),
    "code_bits": 16,
    "hidden": (256,),
    "alpha": 0.2,
    "stages": 10,
    "max_epochs": 50,
    "tolerance": 1e-5,
    "patience": 3,
    "learning_rate": 0.05,
}


@dataclass
class TrainedRun:
    dataset: pd.Dataset
    train: pd.Dataset
    database: pd.Dataset
    queries: pd.Dataset
    params: object
    log: cont.TrainLog
    seconds: float

    def database_index(self) -> rt.CodeIndex:
        codes = rt.encode_dataset(self.params, self.database)
        return rt.CodeIndex.from_codes(codes, ids=self.database.ids, labels=self.database.labels)

    def query_index(self) -> rt.CodeIndex:
        codes = rt.encode_dataset(self.params, self.queries)
        return rt.CodeIndex.from_codes(codes, ids=self.queries.ids, labels=self.queries.labels)


def _train_benchmark(variant: str) -> TrainedRun:
    cfg = BENCHMARK
    dataset = pd.generate_synthetic(
        cfg["classes"], cfg["per_class"], cfg["dim"], spread=cfg["spread"], rng_seed=cfg["seed"]
    )
    train, database, queries = pd.split(dataset, "standard", cfg["fractions"], cfg["seed"])
    started = time.perf_counter()
    params, log = cont.train_ablation(
        variant,
        train,
        EncoderConfig(cfg["hidden"], cfg["code_bits"]),
        LossConfig(cfg["alpha"]),
        default_schedule(
            cfg["stages"],
            max_epochs=cfg["max_epochs"],
            tolerance=cfg["tolerance"],
            patience=cfg["patience"],
        ),
        OptimizerConfig(learning_rate=cfg["learning_rate"]),
        cfg["seed"],
    )
    seconds = time.perf_counter() - started
    return TrainedRun(dataset, train, database, queries, params, log, seconds)


@pytest.fixture(scope="session")
def benchmark_run() -> TrainedRun:
    return _train_benchmark("hashnet")


@pytest.fixture(scope="session")
def sgn_run() -> TrainedRun:
    return _train_benchmark("hashnet-sgn")
