from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from advpose import build_dataset, train
from advpose.config import TrainConfig

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


# config used by the shared trained fixture; small enough to train in seconds
# but strong enough that refinement gradients carry signal
TOY_TRAIN = TrainConfig(
    mode="quat",
    lam=1e-3,
    lr=2e-3,
    batch_size=32,
    total_epochs=40,
    warmup_epochs=4,
    seed=7,
    trunk=(64, 32),
)


@pytest.fixture(scope="session")
def toy_dataset():
    return build_dataset(
        7, 16, (1.0, 1.0, 1.0), 160, 48, smoothness=8.0, obs_noise=0.005, feature_dim=70
    )


@pytest.fixture(scope="session")
def trained_toy(toy_dataset):
    return train(toy_dataset, TOY_TRAIN)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
