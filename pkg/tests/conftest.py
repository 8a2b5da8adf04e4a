import numpy as np
import pytest

from eris.linalg import Rng
from eris.model import ArchConfig, ModelParams, init_params, tensor_shapes


def tiny_arch(**overrides) -> ArchConfig:
    """Small architecture used throughout the gradient and forward tests."""
    spec = dict(channels_per_layer=(2,), kernel_size=3, in_channels=2,
                encoding_dim=4, projection_dim=3, mlp_hidden=4,
                n_classes=3, n_domains=3)
    spec.update(overrides)
    return ArchConfig(**spec)


def random_params(arch: ArchConfig, rng: Rng, stddev: float = 1.0) -> ModelParams:
    """Params with every tensor (including biases and prototypes) randomized,
    so gradient checks exercise all paths."""
    tensors = {name: rng.normal_array(shape, stddev)
               for name, shape in tensor_shapes(arch).items()}
    return ModelParams(arch, tensors)


def random_batch(arch: ArchConfig, rng: Rng, n: int = 3, length: int = 8):
    x = rng.normal_array((n, arch.in_channels, length), 1.0)
    y = rng.integers(0, arch.n_classes, size=n)
    d = rng.integers(0, arch.n_domains, size=n)
    return x, np.asarray(y), np.asarray(d)


@pytest.fixture
def rng():
    return Rng(12345)
