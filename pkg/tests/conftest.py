"""Shared fixtures.  The heavy multi-seed pipeline is built once per session
and reused by the trend/efficacy/latency/constraint acceptance checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pytest

from churn_recourse.countergan import (
    CounterGanModel,
    TrainConfig,
    distill_surrogate,
    generate_recourse_batch,
    train,
)
from churn_recourse.data import Dataset, SynthConfig, split, synthesize
from churn_recourse.rgd import RgdConfig, rgd_batch
from churn_recourse.survival import ChurnClassifier, ForestConfig, fit

ACCEPTANCE_SEEDS = (101, 202, 303)
RGD_USERS_PER_SEED = 80
RGD_MAX_STEPS = 150


@dataclass
class SeedRun:
    seed: int
    train_data: Dataset
    test_data: Dataset
    forests: dict  # n_trees -> ChurnClassifier
    gans: dict  # n_trees -> CounterGanModel
    gan_actions: dict  # n_trees -> list[RecourseAction]
    gan_timings: dict  # n_trees -> list[(start, end)]
    rgd_actions: list = field(default_factory=list)
    rgd_timings: list = field(default_factory=list)
    rgd_user_ids: list = field(default_factory=list)
    forest_seconds: float = 0.0
    gan_seconds: float = 0.0


def build_seed_run(seed: int) -> SeedRun:
    import time

    dataset = synthesize(SynthConfig(n_users=2200, seed=seed))
    train_ds, test_ds = split(dataset, 0.5, seed=seed + 1)
    x_test = test_ds.feature_matrix()

    t0 = time.perf_counter()
    forests = {n: fit(train_ds, ForestConfig(n_trees=n, seed=seed + 2)) for n in (1, 5, 20)}
    forest_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    gans, gan_actions, gan_timings = {}, {}, {}
    for n in (1, 20):
        surrogate, agreement = distill_surrogate(forests[n], train_ds, seed=seed + 4)
        gans[n] = train(
            train_ds, forests[n], TrainConfig(seed=seed + 3),
            surrogate=surrogate, surrogate_agreement=agreement,
        )
        denied = np.nonzero(forests[n].classify_batch(x_test) == 0)[0]
        ids = [test_ds.records[i].user_id for i in denied]
        gan_actions[n], gan_timings[n] = generate_recourse_batch(gans[n], x_test[denied], ids)
    gan_seconds = time.perf_counter() - t0

    denied20 = np.nonzero(forests[20].classify_batch(x_test) == 0)[0][:RGD_USERS_PER_SEED]
    rgd_ids = [test_ds.records[i].user_id for i in denied20]
    rgd_actions, rgd_timings = rgd_batch(
        forests[20], x_test[denied20], rgd_ids, train_ds.meta,
        RgdConfig(max_steps=RGD_MAX_STEPS, seed=seed + 5),
    )
    return SeedRun(
        seed=seed,
        train_data=train_ds,
        test_data=test_ds,
        forests=forests,
        gans=gans,
        gan_actions=gan_actions,
        gan_timings=gan_timings,
        rgd_actions=rgd_actions,
        rgd_timings=rgd_timings,
        rgd_user_ids=rgd_ids,
        forest_seconds=forest_seconds,
        gan_seconds=gan_seconds,
    )


@pytest.fixture(scope="session")
def seed_runs() -> list[SeedRun]:
    return [build_seed_run(seed) for seed in ACCEPTANCE_SEEDS]


@pytest.fixture(scope="session")
def small_world():
    """A small trained stack for service/bundle tests: forest + gan + data."""
    dataset = synthesize(SynthConfig(n_users=400, seed=11))
    train_ds, test_ds = split(dataset, 0.5, seed=12)
    forest = fit(train_ds, ForestConfig(n_trees=5, seed=13))
    surrogate, agreement = distill_surrogate(forest, train_ds, seed=14, epochs=60)
    gan = train(
        train_ds, forest, TrainConfig(seed=15, max_iterations=120),
        surrogate=surrogate, surrogate_agreement=agreement,
    )
    return {"train": train_ds, "test": test_ds, "forest": forest, "gan": gan}
