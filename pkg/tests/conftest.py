import numpy as np
import pytest

from floatfl.model import LabeledExample, ModelSpec, init_parameters


@pytest.fixture
def small_spec():
    return ModelSpec(input_dim=4, hidden_dim=6, num_classes=3)


@pytest.fixture
def small_params(small_spec):
    return init_parameters(small_spec, seed=7)


def make_batch(spec, n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return [
        LabeledExample(rng.normal(0, scale, spec.input_dim), int(rng.integers(spec.num_classes)))
        for _ in range(n)
    ]


def make_blobs(spec, per_class, seed=0, separation=6.0):
    """Well-separated per-class Gaussian blobs for learnability checks."""
    rng = np.random.default_rng(seed)
    out = []
    for c in range(spec.num_classes):
        mean = np.zeros(spec.input_dim)
        mean[c % spec.input_dim] = separation
        for _ in range(per_class):
            out.append(LabeledExample(mean + rng.normal(0, 1.0, spec.input_dim), c))
    return out
