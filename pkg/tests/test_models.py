import math

import numpy as np
import pytest

from src.errors import DimensionMismatch
from src.models import (
    Dataset,
    ERMObjective,
    InstrumentedObjective,
    ObjectiveParams,
    QuadraticObjective,
    centralized_solve,
    create_objectives,
    gradient_lipschitz_bound,
    logistic_loss,
    objective_gradient,
    objective_hessian,
    objective_value,
)


def random_instance(rng, d=None, B=None):
    d = d or int(rng.integers(1, 11))
    B = B or int(rng.integers(1, 21))
    x = rng.normal(size=(B, d))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None] * rng.uniform(1.0, 2.0, size=(B, 1))
    y = rng.choice([-1.0, 1.0], size=B)
    n_nodes = int(rng.integers(1, 6))
    params = ObjectiveParams(C=rng.uniform(0.1, B), rho=rng.uniform(0.0, 1.0), n_nodes=n_nodes)
    return Dataset(x, y), params


def test_logistic_loss_at_zero():
    value, first, second = logistic_loss(0.0)
    assert value == pytest.approx(math.log(2))
    assert first == pytest.approx(-0.5)
    assert second == pytest.approx(0.25)


def test_logistic_loss_no_overflow():
    value, first, second = logistic_loss(1000.0)
    assert np.isfinite(value) and value == pytest.approx(0.0, abs=1e-300)
    assert logistic_loss(-1000.0)[0] == pytest.approx(1000.0)
    assert -1.0 < first <= 0.0
    assert 0.0 <= second <= 0.25


def test_logistic_loss_negative_two():
    assert logistic_loss(-2.0)[0] == pytest.approx(2.126928, abs=1e-6)


def test_logistic_loss_vectorized():
    value, first, second = logistic_loss(np.array([-3.0, 0.0, 4.0]))
    assert value.shape == (3,)
    assert np.all((first > -1) & (first < 0))
    assert np.all((second > 0) & (second <= 0.25))


def test_value_at_zero_classifier():
    data = Dataset(np.eye(4)[:, :3] * 0.5, [1, -1, 1, 1])
    params = ObjectiveParams(C=3.0, rho=0.5, n_nodes=2)
    assert objective_value(np.zeros(3), data, params) == pytest.approx(3.0 * math.log(2))


def test_value_single_sample():
    data = Dataset([[1.0, 0.0]], [1.0])
    params = ObjectiveParams(C=1.0, rho=0.0, n_nodes=1)
    assert objective_value(np.array([1.0, 0.0]), data, params) == pytest.approx(0.313262, abs=1e-6)


def test_value_pure_regularizer():
    data = Dataset([[0.6, 0.8]], [1.0])
    params = ObjectiveParams(C=0.0, rho=2.0, n_nodes=2)
    assert objective_value(np.array([0.6, 0.8]), data, params) == pytest.approx(0.5)


def test_gradient_at_zero():
    rng = np.random.default_rng(0)
    data, _ = random_instance(rng, d=4, B=6)
    params = ObjectiveParams(C=2.0, rho=0.0, n_nodes=3)
    expected = -(2.0 / 6) * (0.5 * data.labels[:, None] * data.features).sum(axis=0)
    assert np.allclose(objective_gradient(np.zeros(4), data, params), expected)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    h = 1e-6
    for _ in range(100):
        data, params = random_instance(rng)
        f = rng.normal(size=data.dimension)
        grad = objective_gradient(f, data, params)
        fd = np.array([
            (objective_value(f + h * e, data, params) - objective_value(f - h * e, data, params)) / (2 * h)
            for e in np.eye(data.dimension)
        ])
        assert np.linalg.norm(grad - fd) / (1 + np.linalg.norm(grad)) <= 1e-5


def test_loss_gradient_norm_bounded_by_C():
    rng = np.random.default_rng(1)
    for _ in range(20):
        data, params = random_instance(rng)
        params = ObjectiveParams(C=params.C, rho=0.0, n_nodes=params.n_nodes)
        f = rng.normal(size=data.dimension) * 5
        assert np.linalg.norm(objective_gradient(f, data, params)) <= params.C + 1e-12


def test_hessian_matches_gradient_differences():
    rng = np.random.default_rng(2)
    data, params = random_instance(rng, d=5, B=10)
    f = rng.normal(size=5)
    h = 1e-6
    fd = np.column_stack([
        (objective_gradient(f + h * e, data, params) - objective_gradient(f - h * e, data, params)) / (2 * h)
        for e in np.eye(5)
    ])
    assert np.allclose(objective_hessian(f, data, params), fd, atol=1e-6)


def test_lipschitz_bound_values():
    data = Dataset([[1.0]], [1.0])
    assert gradient_lipschitz_bound(data, ObjectiveParams(C=1.0, rho=0.22, n_nodes=5)) == pytest.approx(0.294)
    assert gradient_lipschitz_bound(data, ObjectiveParams(C=0.0, rho=0.22, n_nodes=5)) == pytest.approx(0.044)
    assert gradient_lipschitz_bound(data, ObjectiveParams(C=1.0, rho=0.0, n_nodes=5)) == pytest.approx(0.25)


def test_lipschitz_and_strong_convexity_hold():
    rng = np.random.default_rng(3)
    for _ in range(50):
        data, params = random_instance(rng)
        obj = ERMObjective(data, params)
        f1, f2 = rng.normal(size=(2, data.dimension)) * 3
        g1, g2 = obj.gradient(f1), obj.gradient(f2)
        gap = np.linalg.norm(f1 - f2)
        assert np.linalg.norm(g1 - g2) <= obj.gradient_lipschitz() * gap * (1 + 1e-9)
        assert (f1 - f2) @ (g1 - g2) >= obj.strong_convexity() * gap ** 2 * (1 - 1e-9)


def test_dimension_mismatch():
    data = Dataset([[0.5, 0.5]], [1.0])
    params = ObjectiveParams(C=1.0, rho=0.1, n_nodes=1)
    with pytest.raises(DimensionMismatch):
        objective_value(np.zeros(3), data, params)


@pytest.mark.parametrize("features,labels", [
    ([[0.1, 0.2]], [0.0]),
    ([[0.9, 0.9]], [1.0]),
])
def test_dataset_validation(features, labels):
    with pytest.raises(ValueError):
        Dataset(features, labels)


def test_dataset_row_label_mismatch():
    with pytest.raises(DimensionMismatch):
        Dataset([[0.1], [0.2]], [1.0])


def test_params_validation():
    with pytest.raises(ValueError):
        ObjectiveParams(C=1.0, rho=-0.1, n_nodes=2)
    with pytest.raises(ValueError):
        ObjectiveParams(C=1.0, rho=0.1, n_nodes=2, c1=0.0)


def test_create_objectives_enforces_C():
    datasets = [Dataset([[0.1]], [1.0]), Dataset([[0.2], [0.3]], [1.0, -1.0])]
    with pytest.raises(ValueError):
        create_objectives(datasets=datasets, params=ObjectiveParams(C=2.0, rho=0.1, n_nodes=2))
    objectives = create_objectives(datasets=datasets, params=ObjectiveParams(C=1.0, rho=0.1, n_nodes=2))
    assert all(isinstance(o, ERMObjective) for o in objectives)


def test_create_objectives_requires_one_source():
    with pytest.raises(ValueError):
        create_objectives()


def test_instrumented_objective_counts():
    obj = InstrumentedObjective(QuadraticObjective([1.0, 2.0]))
    obj.value(np.zeros(2))
    obj.gradient(np.zeros(2))
    obj.gradient(np.ones(2))
    assert obj.counts == {"value": 1, "gradient": 2, "hessian": 0}
    assert obj.access_count == 3
    obj.gradient_lipschitz()
    assert obj.access_count == 3
    assert np.array_equal(obj.center, [1.0, 2.0])


def test_quadratic_objective():
    obj = QuadraticObjective([1.0, -1.0])
    assert obj.value(np.array([1.0, -1.0])) == 0.0
    assert np.array_equal(obj.gradient(np.zeros(2)), [-1.0, 1.0])
    assert obj.gradient_lipschitz() == obj.strong_convexity() == 1.0


def test_centralized_solve_quadratic_mean():
    centers = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]])
    f = centralized_solve(create_objectives(centers=centers))
    assert np.allclose(f, centers.mean(axis=0), atol=1e-10)


def test_centralized_solve_erm_stationary():
    rng = np.random.default_rng(4)
    datasets = [random_instance(rng, d=3, B=15)[0] for _ in range(3)]
    params = ObjectiveParams(C=5.0, rho=0.3, n_nodes=3)
    objectives = create_objectives(datasets=datasets, params=params)
    f = centralized_solve(objectives, tol=1e-10)
    assert np.linalg.norm(sum(o.gradient(f) for o in objectives)) <= 1e-10
