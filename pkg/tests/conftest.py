import numpy as np
import pytest

from bgcnet.backbone import BackboneConfig, ForecastModel
from bgcnet.bgcn import BayesianGraph


@pytest.fixture
def tiny_config():
    return BackboneConfig(layers=2, dilations=(2, 3), residual_channels=3,
                          skip_channels=4, end_channels=5, t_in=6, horizon=2,
                          features_in=1, features_out=1)


def make_tiny_model(config=None, n_nodes=4, seed=0, dropout=0.5):
    config = config or BackboneConfig(
        layers=2, dilations=(2, 3), residual_channels=3, skip_channels=4,
        end_channels=5, t_in=6, horizon=2, features_in=1, features_out=1)
    rng = np.random.default_rng(seed + 100)
    a = rng.random((n_nodes, n_nodes)) * 0.3
    np.fill_diagonal(a, 0.0)
    a = 0.5 * (a + a.T)
    from bgcnet.graphmap import normalize_adjacency
    bg = BayesianGraph.create(normalize_adjacency(a), dropout_rate=dropout,
                              rng_seed=seed)
    return ForecastModel.create(config, n_nodes=n_nodes, seed=seed, bgraph=bg)


@pytest.fixture
def tiny_model(tiny_config):
    return make_tiny_model(tiny_config)


def two_block_graph(block=10, seed=0):
    """Two dense cliques with no cross edges."""
    n = 2 * block
    a = np.zeros((n, n))
    a[:block, :block] = 1.0
    a[block:, block:] = 1.0
    np.fill_diagonal(a, 0.0)
    return a
