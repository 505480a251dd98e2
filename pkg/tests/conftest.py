from typing import Iterator

import numpy as np
import pytest

from sebn_adapter.autograd import float64
from sebn_adapter.model import ParameterStore, init_params
from sebn_adapter.types import ModelConfig, paper_config, tiny_config


def micro_config(**kwargs) -> ModelConfig:
    """Smallest model that still has every structural feature."""
    params = {
        "channels": (4, 8, 8, 8),
        "blocks_per_group": (1, 1, 1, 1),
        "mel_bins": 16,
        "embedding_dim": 8,
        "num_classes": 4,
        "attention_dim": 4,
    }
    params.update(kwargs)
    return ModelConfig(**params)


def seeded(cfg: ModelConfig, seed: int = 0) -> ParameterStore:
    params = init_params(cfg, seed)
    params.seed_running_stats()
    return params


@pytest.fixture()
def f64() -> Iterator[None]:
    with float64():
        yield


@pytest.fixture()
def gen() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def paper_params() -> ParameterStore:
    return init_params(paper_config(), 0)


@pytest.fixture()
def tiny_params() -> ParameterStore:
    return seeded(tiny_config())


@pytest.fixture()
def micro_params() -> ParameterStore:
    return seeded(micro_config())
