import json

import numpy as np
import pytest

from src.datasets import split_and_partition, synthetic_classification
from src.models import ObjectiveParams, create_objectives
from src.topology import build_topology, random_connected_topology


@pytest.fixture
def path3():
    return build_topology(3, [(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return build_topology(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def ring5():
    return build_topology(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])


@pytest.fixture
def random5():
    return random_connected_topology(5, 0.5, seed=11)


@pytest.fixture
def quadratic_centers():
    return np.random.default_rng(5).normal(size=(5, 3))


@pytest.fixture
def quadratic_problem(random5, quadratic_centers):
    return random5, create_objectives(centers=quadratic_centers), quadratic_centers.mean(axis=0)


@pytest.fixture
def small_erm(random5):
    """5 nodes, 300 synthetic samples (48 per node), d = 5"""
    features, labels = synthetic_classification(300, 5, 2.0, seed=3)
    data = split_and_partition(features, labels, 5, 0.2, seed=3)
    params = ObjectiveParams(C=min(data.batch_sizes), rho=0.22, n_nodes=5)
    return random5, data, params


@pytest.fixture
def write_config(tmp_path):
    def _write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def small_config():
    return {
        "data": {"synthetic": {"n_samples": 300, "d": 5, "separation": 2.0}, "test_fraction": 0.2, "seed": 3},
        "topology": {"n_nodes": 5, "random": {"edge_probability": 0.5, "seed": 11}},
        "variant": "mr_admm",
        "schedule": {"kind": "geometric", "base": 1.0, "q": 1.04},
        "gamma": 0.5,
        "outer_pairs": 8,
        "n_repeats": 2,
        "base_seed": 0,
    }
