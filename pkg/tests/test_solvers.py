import numpy as np
import pytest

from src.errors import ConfigError, MaxIterationsExceeded, MissingCache, ScheduleViolation
from src.models import Dataset, ERMObjective, ObjectiveParams, QuadraticObjective
from src.solvers import (
    IterationRecord,
    IterationTrace,
    NodeState,
    PenaltySchedule,
    SolverConfig,
    conventional_step,
    dual_update,
    even_update,
    export_trace_jsonl,
    init_states,
    inner_solve,
    load_trace_jsonl,
    odd_update,
)


@pytest.fixture
def cfg():
    return SolverConfig("r_admm", PenaltySchedule.constant(1.0), inner_tolerance=1e-12)


@pytest.fixture
def path_states():
    return [
        NodeState(primal=np.array([1.0, 0.0]), dual=np.array([0.1, -0.2])),
        NodeState(primal=np.array([0.0, 2.0]), dual=np.array([0.0, 0.3])),
        NodeState(primal=np.array([-1.0, 1.0]), dual=np.array([-0.1, -0.1])),
    ]


def erm_objective(rho=0.3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 3))
    x /= 1.5 * np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None]
    y = rng.choice([-1.0, 1.0], size=12)
    return ERMObjective(Dataset(x, y), ObjectiveParams(C=4.0, rho=rho, n_nodes=3))


# Penalty schedules

def test_constant_schedule():
    s = PenaltySchedule.constant(0.5)
    assert s.is_constant
    assert np.array_equal(s.values(3, 4), [0.5] * 4)
    s.validate(10, 4)


def test_geometric_schedule():
    s = PenaltySchedule.geometric([1.0, 2.0], 1.5)
    assert not s.is_constant
    assert np.allclose(s.values(1, 2), [1.5, 3.0])
    assert np.allclose(s.values(2, 2), [2.25, 4.5])
    assert s.eta(1, 2, 2) == pytest.approx(4.5)


def test_geometric_with_unit_ratio_is_constant():
    assert PenaltySchedule.geometric(0.7, 1.0).is_constant


def test_geometric_size_mismatch():
    with pytest.raises(ScheduleViolation):
        PenaltySchedule.geometric([1.0, 2.0], [1.0, 1.1, 1.2])


def test_schedule_node_count_mismatch():
    with pytest.raises(ScheduleViolation):
        PenaltySchedule.geometric([1.0, 2.0], 1.1).values(1, 3)


def test_decreasing_schedule_rejected():
    s = PenaltySchedule.from_table([[1.0, 2.0, 1.5], [1.0, 1.0, 1.0]])
    with pytest.raises(ScheduleViolation, match="node 0"):
        s.validate(3, 2)
    s.validate(2, 2)


@pytest.mark.parametrize("table", [[[0.0, 1.0]], [[1.0, np.inf]]])
def test_nonpositive_or_infinite_schedule_rejected(table):
    with pytest.raises(ScheduleViolation):
        PenaltySchedule.from_table(table).validate(2, 1)


def test_table_too_short():
    with pytest.raises(ScheduleViolation):
        PenaltySchedule.from_table([[1.0]]).values(2, 1)


def test_ratio_below_one_rejected():
    with pytest.raises(ScheduleViolation):
        PenaltySchedule.geometric(1.0, 0.9).validate(3, 2)


# Config

@pytest.mark.parametrize("kwargs", [
    {"variant": "admm"},
    {"variant": "mr_admm", "outer_pairs": 0},
    {"variant": "mr_admm", "gamma": -1.0},
    {"variant": "mr_admm", "inner_tolerance": 0.0},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(schedule=PenaltySchedule.constant(1.0), **kwargs)


# Inner solver

def test_inner_solve_quadratic_closed_form():
    a = np.array([1.0, -2.0, 0.5])
    linear = np.array([0.2, 0.1, -0.3])
    center = np.array([1.0, 1.0, 1.0])
    w = 2.0
    result = inner_solve(QuadraticObjective(a), linear, center, w, np.zeros(3), tol=1e-12)
    assert result.converged
    assert np.allclose(result.x, (a - linear + 2 * center) / (1 + 2 * w), atol=1e-12)


def test_inner_solve_erm_stationary():
    obj = erm_objective()
    linear = np.array([0.3, -0.1, 0.2])
    center = np.array([0.5, 0.0, -0.5])
    result = inner_solve(obj, linear, center, 1.5, np.ones(3), tol=1e-10)
    grad = obj.gradient(result.x) + linear + 3.0 * result.x - 2.0 * center
    assert result.converged
    assert np.linalg.norm(grad) <= 1e-10


def test_inner_solve_needs_strong_convexity():
    with pytest.raises(ValueError):
        inner_solve(erm_objective(rho=0.0), np.zeros(3), np.zeros(3), 0.0, np.zeros(3))


def test_inner_solve_cap_warns(caplog):
    result = inner_solve(erm_objective(), np.zeros(3), np.zeros(3), 0.1, 5 * np.ones(3), tol=1e-14, max_iter=1)
    assert not result.converged
    assert result.iterations == 1
    assert "inner solve stopped" in caplog.text


def test_inner_solve_cap_strict():
    with pytest.raises(MaxIterationsExceeded) as exc:
        inner_solve(erm_objective(), np.zeros(3), np.zeros(3), 0.1, 5 * np.ones(3), tol=1e-14, max_iter=1, strict=True)
    assert exc.value.best is not None
    assert exc.value.grad_norm > 1e-14


# Per-node updates

def test_odd_update_quadratic(path3, path_states, cfg):
    a = np.array([0.5, 0.5])
    state = odd_update(1, path_states, path3, 1.0, QuadraticObjective(a), cfg)
    # w = eta * V = 2, c = 0.5 * (2 f_1 + f_0 + f_2)
    c = 0.5 * (2 * path_states[1].primal + path_states[0].primal + path_states[2].primal)
    expected = (a - 2 * path_states[1].dual + 2 * c) / 5.0
    assert np.allclose(state.primal, expected, atol=1e-12)
    assert np.array_equal(state.dual, path_states[1].dual)
    assert np.allclose(state.cached_gradient, expected - a)
    assert state.cached_neighbor_diff is None


def test_odd_update_kkt_cache_matches_gradient(path3, path_states, cfg):
    obj = erm_objective()
    obj = ERMObjective(
        Dataset(obj.data.features[:, :2] / 1.5, obj.data.labels),
        ObjectiveParams(C=4.0, rho=0.3, n_nodes=3),
    )
    noise = np.array([0.7, -1.3])
    state = odd_update(0, path_states, path3, 0.8, obj, cfg, perturbation=noise)
    assert np.allclose(state.cached_gradient, obj.gradient(state.primal) + noise, atol=1e-9)


def test_dual_update_formula(path3, path_states):
    state = dual_update(1, path_states, path3, 0.5)
    diff = 2 * path_states[1].primal - path_states[0].primal - path_states[2].primal
    assert np.allclose(state.dual, path_states[1].dual + 0.25 * diff)
    assert np.allclose(state.cached_neighbor_diff, 0.5 * diff)


def test_even_update_needs_cache(path3, path_states):
    with pytest.raises(MissingCache):
        even_update(0, path_states[0], path3, 1.0, 0.0)


def test_even_update_formula(path3):
    state = NodeState(
        primal=np.array([1.0, 1.0]),
        dual=np.array([0.5, 0.0]),
        cached_gradient=np.array([1.0, -1.0]),
        cached_neighbor_diff=np.array([0.0, 2.0]),
    )
    new = even_update(1, state, path3, 1.0, 1.0)
    # direction (2, 1), step scale 2 * 1 * 2 + 1 = 5
    assert np.allclose(new.primal, [0.6, 0.8])
    assert np.array_equal(new.dual, state.dual)
    assert not new.has_cache


def test_conventional_step_clears_caches(path3, path_states, cfg):
    objectives = [QuadraticObjective(np.zeros(2)) for _ in range(3)]
    states = conventional_step(path_states, path3, [1.0] * 3, objectives, cfg)
    assert len(states) == 3
    assert all(not s.has_cache for s in states)
    assert not np.allclose(states[1].dual, path_states[1].dual)


def test_init_states_seeded():
    a = init_states(4, 3, seed=9)
    b = init_states(4, 3, seed=9)
    assert all(np.array_equal(x.primal, y.primal) for x, y in zip(a, b))
    assert all(np.all(np.abs(s.primal) <= 0.5) for s in a)
    assert all(not s.dual.any() for s in a)


# Traces

def test_trace_at_checks_index():
    records = [IterationRecord(t=0, phase="init", primal=np.zeros((1, 1)), dual=np.zeros((1, 1))),
               IterationRecord(t=2, phase="odd", primal=np.zeros((1, 1)), dual=np.zeros((1, 1)))]
    trace = IterationTrace("r_admm", records)
    assert trace.at(0).phase == "init"
    with pytest.raises(IndexError):
        trace.at(1)


def test_trace_jsonl_export(tmp_path):
    records = [
        IterationRecord(t=0, phase="init", primal=np.array([[0.25, -1.0]]), dual=np.zeros((1, 2))),
        IterationRecord(t=1, phase="odd", primal=np.array([[0.5, 0.125]]), dual=np.ones((1, 2)), data_accesses=3,
                        noise_draws=1),
        IterationRecord(t=2, phase="even", primal=np.array([[0.75, 0.0]]), dual=np.ones((1, 2)), data_accesses=0),
    ]
    path = export_trace_jsonl(IterationTrace("mr_admm", records), tmp_path / "trace.jsonl")
    loaded = load_trace_jsonl(path)
    assert loaded.variant == "mr_admm"
    assert [r.noise_draws for r in loaded.records] == [0, 1, 0]
    assert load_trace_jsonl(path, variant="r_admm").variant == "r_admm"
    assert [r.phase for r in loaded.records] == ["init", "odd", "even"]
    assert loaded.at(2).data_accesses == 0
    assert np.array_equal(loaded.final.primal, records[-1].primal)
    assert len(loaded.odd()) == len(loaded.even()) == 1
