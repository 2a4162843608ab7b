import numpy as np
import pytest

from regionaug import network, trainer
from regionaug.geometry import PyramidLevel

TINY_PYRAMID = (
    PyramidLevel(stride=8, base_size=16.0, scales=(1.0, 1.26), ratios=(0.5, 1.0, 2.0)),
    PyramidLevel(stride=16, base_size=24.0, scales=(1.0, 1.26), ratios=(0.5, 1.0, 2.0)),
)


def tiny_config(num_classes=4, dtype=np.float64, **overrides):
    """A small config for fast tests: 32px input, thin backbone."""
    kwargs = dict(
        num_classes=num_classes,
        input_size=32,
        backbone_channels=(8, 12, 16, 24),
        fpn_channels=8,
        pyramid=TINY_PYRAMID,
        batch_size=2,
        epochs=1,
        regions_m=3,
        regions_k=2,
    )
    kwargs.update(overrides)
    return trainer.TrainConfig(**kwargs)


def tiny_model(config=None, seed=0, dtype=np.float64):
    config = config or tiny_config()
    m = network.init_model(config.model_config(), seed=seed, dtype=dtype)
    network.add_fusion_head(m, config.regions_k)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def model(cfg):
    return tiny_model(cfg)
