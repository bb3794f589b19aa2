import numpy as np
import pytest

from spiq.modelio import LayerSpec, ModelGraph
from spiq.ranges import BatchNormStats


def random_bn(rng, channels, var_lo=0.05, var_hi=2.0, zero_variance=False):
    """Heterogeneous per-channel stats; optionally force one zero-variance channel."""
    mean = rng.normal(0.0, 1.0, channels)
    variance = np.exp(rng.uniform(np.log(var_lo), np.log(var_hi), channels))
    if zero_variance:
        variance[rng.integers(channels)] = 0.0
    return BatchNormStats(mean, variance)


def single_fc_graph(w, bias=None, bn=None, activation="none"):
    """A flatten + FC model around one weight matrix, for engine-level tests."""
    n_in = w.shape[0]
    return ModelGraph(
        (n_in, 1, 1),
        (
            LayerSpec(kind="flatten"),
            LayerSpec(kind="fc", weights=w, bias=bias, pre_bn=bn, activation=activation),
        ),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
