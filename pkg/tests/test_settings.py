import pytest

import src.orchestrator
from src.errors import ConfigError
from src.experiments import config_from_dict
from src.privacy import NoiseParams, run_private
from src.settings import load_settings
from src.solvers import PenaltySchedule, SolverConfig


@pytest.fixture
def inner_env(monkeypatch):
    monkeypatch.setenv("ADMM_INNER_TOL", "1e-6")
    monkeypatch.setenv("ADMM_INNER_MAX_ITER", "25")


def test_defaults(monkeypatch):
    for name in ("ADMM_WORKERS", "ADMM_INNER_TOL", "ADMM_INNER_MAX_ITER", "ADMM_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    settings = load_settings()
    assert (settings.workers, settings.inner_tolerance, settings.inner_max_iterations) == (1, 1e-8, 100)
    assert settings.log_level == "WARNING"


@pytest.mark.parametrize("name,value", [
    ("ADMM_WORKERS", "0"),
    ("ADMM_WORKERS", "two"),
    ("ADMM_INNER_TOL", "-1"),
    ("ADMM_INNER_MAX_ITER", "0"),
])
def test_invalid_values_name_the_variable(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ConfigError) as exc:
        load_settings()
    assert exc.value.field == name


def test_solver_config_takes_inner_defaults_from_env(inner_env):
    cfg = SolverConfig("r_admm", PenaltySchedule.constant(1.0))
    assert cfg.inner_tolerance == 1e-6
    assert cfg.inner_max_iterations == 25


def test_explicit_inner_settings_win(inner_env):
    cfg = SolverConfig("r_admm", PenaltySchedule.constant(1.0), inner_tolerance=1e-9, inner_max_iterations=7)
    assert (cfg.inner_tolerance, cfg.inner_max_iterations) == (1e-9, 7)


def test_experiment_config_takes_inner_defaults_from_env(inner_env, small_config):
    cfg = config_from_dict(small_config)
    assert (cfg.inner_tolerance, cfg.inner_max_iterations) == (1e-6, 25)
    overridden = config_from_dict(dict(small_config, inner_tolerance=1e-10))
    assert overridden.inner_tolerance == 1e-10


def test_run_private_takes_inner_defaults_from_env(inner_env, small_erm, monkeypatch):
    topology, data, params = small_erm
    seen = {}

    def capture(topology, objectives, cfg, **kwargs):
        seen["cfg"] = cfg
        raise RuntimeError("stop")

    monkeypatch.setattr(src.orchestrator, "run_solver", capture)
    with pytest.raises(RuntimeError):
        run_private(topology, data.train, params, PenaltySchedule.constant(1.0), NoiseParams.constant(1.0), 0.5, 2, 0)
    assert seen["cfg"].inner_tolerance == 1e-6
    assert seen["cfg"].inner_max_iterations == 25
