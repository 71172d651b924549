import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from invgame.config import BenchConfig


def small_bench(**dataset) -> BenchConfig:
    cfg = BenchConfig.from_dict(
        {
            "dataset": {"n_agents": 3, "T": 30, "n_demos": 4, **dataset},
            "policy": {"epochs": 5, "batch_size": 64},
            "inverse": {"epochs": 2, "batch_size": 4, "n_candidates": 4, "window_stride": 10, "unroll": 5},
            "eval": {"n_trials": 1, "ilq_max_iters": 10, "n_candidates": 4},
        }
    )
    return cfg


@pytest.fixture(scope="session")
def bench():
    return small_bench()


@pytest.fixture(scope="session")
def small_dataset(bench):
    from invgame.dataset import generate_dataset

    return generate_dataset(bench.dataset.n_demos, 0, bench)


@pytest.fixture(scope="session")
def small_policy(bench, small_dataset):
    from invgame.dataset import extract_windows
    from invgame.policy import train_policy

    pc = bench.policy
    windows = extract_windows(small_dataset, pc.horizon, 1)
    return train_policy(windows, pc.epochs, pc.batch_size, pc.learning_rate, pc.seed, pc)
