import os

os.environ["TESTING"] = "1"
os.environ["TENSOR_DTYPE"] = "float64"

import numpy as np
import pytest

from dcnet_model.schemes import DCNetConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> DCNetConfig:
    """Маленькая сеть для быстрых проверок: 16x16 панели, 4/8 каналов."""
    return DCNetConfig(
        image_size=16,
        channels=(4, 8),
        pooled_size=2,
        mlp_input_dim=32,
        hidden_dim=8,
        seed=0,
    )
