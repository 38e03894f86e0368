"""
Experiment Harness

Configuration-driven runs that reproduce the reported metrics:

- L(t): average plain logistic loss of the local classifiers on the training data
- E:    test error of the averaged classifier
- P(t): cumulative privacy-loss bound (infinite for non-private runs)

Each experiment repeats the solver `n_repeats` times with seeds
base_seed + l and aggregates mean and range per iteration. Results are
written as CSV (`t,L_mean,L_range,P`) with a sibling JSON summary.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from langsmith import traceable

from .errors import ConfigError, EmptyTestSet, InfeasiblePrivacy
from .models import ObjectiveParams, create_objectives
from .orchestrator import run_solver
from .privacy import NoiseParams, conventional_privacy_bound, privacy_bound, run_private
from .settings import load_settings
from .solvers import VARIANTS, PenaltySchedule, SolverConfig, stack_primal
from .datasets import (
    load_csv,
    load_schema,
    preprocess,
    split_and_partition,
    synthetic_classification,
)
from .topology import build_topology, load_edge_list, random_connected_topology

logger = logging.getLogger(__name__)

DEFAULT_C = 1750.0
DEFAULT_RHO = 0.22
DEFAULT_GAMMA = 0.5
DEFAULT_Q = 1.04


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSpec:
    csv: Optional[str] = None
    schema: Optional[str] = None
    n_samples: int = 2500
    d: int = 10
    separation: float = 2.0
    test_fraction: float = 0.2
    drop_missing: bool = True
    seed: int = 0


@dataclass(frozen=True)
class TopologySpec:
    n_nodes: int = 5
    edges: Optional[tuple] = None
    edge_file: Optional[str] = None
    edge_probability: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    eta: float = 1.0
    base: object = 1.0
    q: object = DEFAULT_Q

    def build(self):
        if self.kind == "constant":
            return PenaltySchedule.constant(self.eta)
        return PenaltySchedule.geometric(self.base, self.q)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "constant"
    alpha: object = 1.0

    def build(self):
        if self.kind == "constant":
            return NoiseParams.constant(self.alpha)
        return NoiseParams.per_node(self.alpha)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment. Field names match the JSON config keys.

    `C` defaults to min(1750, min_i B_i) once the data is partitioned.
    """
    data: DataSpec = field(default_factory=DataSpec)
    topology: TopologySpec = field(default_factory=TopologySpec)
    variant: str = "mr_admm"
    private: bool = False
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    gamma: float = DEFAULT_GAMMA
    outer_pairs: int = 50
    C: Optional[float] = None
    rho: float = DEFAULT_RHO
    c1: float = 0.25
    noise: Optional[NoiseSpec] = None
    n_repeats: int = 10
    base_seed: int = 0
    inner_tolerance: float = field(default_factory=lambda: load_settings().inner_tolerance)
    inner_max_iterations: int = field(default_factory=lambda: load_settings().inner_max_iterations)
    error_every_iteration: bool = False
    ignore_eta1_condition: bool = False
    L: float = 2.0
    mu: float = 2.0

    def to_dict(self):
        return asdict(self)


def _section(raw, key, path):
    value = raw.get(key, {})
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    return value


def _typed(raw, key, cast, default, path, check=None, message=""):
    if key not in raw or raw[key] is None:
        return default
    try:
        value = cast(raw[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}{key}", f"cannot read {raw[key]!r}") from exc
    if check is not None and not check(value):
        raise ConfigError(f"{path}{key}", message)
    return value


def _float_or_list(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return float(value)


def _reject_unknown(raw, allowed, path):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}{unknown[0]}", "unknown field")


def _resolve(path_value, base_dir):
    if path_value is None:
        return None
    path = Path(path_value)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return str(path)


def config_from_dict(raw, base_dir=None):
    """
    Validate a config mapping into ExperimentConfig.

    Relative file paths resolve against `base_dir`.

    Raises:
        ConfigError: with the dotted path of the offending field
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    settings = load_settings()
    _reject_unknown(raw, ExperimentConfig.__dataclass_fields__, "")

    data_raw = _section(raw, "data", "") or {}
    _reject_unknown(data_raw, {"csv", "schema", "synthetic", "test_fraction", "drop_missing", "seed"}, "data.")
    synthetic = _section(data_raw, "synthetic", "data.") or {}
    if data_raw.get("csv") and not data_raw.get("schema"):
        raise ConfigError("data.schema", "required when data.csv is set")
    data = DataSpec(
        csv=_resolve(data_raw.get("csv"), base_dir),
        schema=_resolve(data_raw.get("schema"), base_dir),
        n_samples=_typed(synthetic, "n_samples", int, 2500, "data.synthetic.", lambda v: v >= 2, "must be >= 2"),
        d=_typed(synthetic, "d", int, 10, "data.synthetic.", lambda v: v >= 1, "must be >= 1"),
        separation=_typed(synthetic, "separation", float, 2.0, "data.synthetic.", lambda v: v >= 0, "must be >= 0"),
        test_fraction=_typed(data_raw, "test_fraction", float, 0.2, "data.", lambda v: 0 <= v < 1, "must lie in [0, 1)"),
        drop_missing=_typed(data_raw, "drop_missing", bool, True, "data."),
        seed=_typed(data_raw, "seed", int, 0, "data.", lambda v: v >= 0, "must be >= 0"),
    )

    topo_raw = _section(raw, "topology", "") or {}
    _reject_unknown(topo_raw, {"n_nodes", "edges", "edge_file", "random"}, "topology.")
    random_raw = _section(topo_raw, "random", "topology.") or {}
    edges = topo_raw.get("edges")
    if edges is not None:
        try:
            edges = tuple((int(i), int(j)) for i, j in edges)
        except (TypeError, ValueError) as exc:
            raise ConfigError("topology.edges", "expected a list of [i, j] pairs") from exc
    topology = TopologySpec(
        n_nodes=_typed(topo_raw, "n_nodes", int, 5, "topology.", lambda v: v >= 1, "must be >= 1"),
        edges=edges,
        edge_file=_resolve(topo_raw.get("edge_file"), base_dir),
        edge_probability=_typed(random_raw, "edge_probability", float, 0.5, "topology.random.",
                                lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
        seed=_typed(random_raw, "seed", int, 0, "topology.random.", lambda v: v >= 0, "must be >= 0"),
    )

    sched_raw = _section(raw, "schedule", "") or {}
    _reject_unknown(sched_raw, ScheduleSpec.__dataclass_fields__, "schedule.")
    kind = sched_raw.get("kind", "constant")
    if kind not in ("constant", "geometric"):
        raise ConfigError("schedule.kind", "expected 'constant' or 'geometric'")
    schedule = ScheduleSpec(
        kind=kind,
        eta=_typed(sched_raw, "eta", float, 1.0, "schedule.", lambda v: v > 0, "must be > 0"),
        base=_typed(sched_raw, "base", _float_or_list, 1.0, "schedule.",
                    lambda v: np.all(np.asarray(v) > 0), "must be > 0"),
        q=_typed(sched_raw, "q", _float_or_list, DEFAULT_Q, "schedule.",
                 lambda v: np.all(np.asarray(v) >= 1), "must be >= 1 (non-decreasing schedule)"),
    )

    noise = None
    noise_raw = _section(raw, "noise", "")
    if noise_raw:
        _reject_unknown(noise_raw, NoiseSpec.__dataclass_fields__, "noise.")
        noise_kind = noise_raw.get("kind", "constant")
        if noise_kind not in ("constant", "per_node"):
            raise ConfigError("noise.kind", "expected 'constant' or 'per_node'")
        noise = NoiseSpec(
            kind=noise_kind,
            alpha=_typed(noise_raw, "alpha", _float_or_list, 1.0, "noise.",
                         lambda v: np.all(np.asarray(v) > 0), "must be > 0"),
        )

    variant = raw.get("variant", "mr_admm")
    if variant not in VARIANTS:
        raise ConfigError("variant", f"expected one of {list(VARIANTS)}")
    private = _typed(raw, "private", bool, False, "")
    if private and noise is None:
        raise ConfigError("noise", "required for private runs")
    if variant in ("conventional", "r_admm") and schedule.kind != "constant":
        raise ConfigError("schedule.kind", f"{variant} needs a constant schedule")

    return ExperimentConfig(
        data=data,
        topology=topology,
        variant=variant,
        private=private,
        schedule=schedule,
        gamma=_typed(raw, "gamma", float, DEFAULT_GAMMA, "", lambda v: v >= 0, "must be >= 0"),
        outer_pairs=_typed(raw, "outer_pairs", int, 50, "", lambda v: v >= 1, "must be >= 1"),
        C=_typed(raw, "C", float, None, "", lambda v: v >= 0, "must be >= 0"),
        rho=_typed(raw, "rho", float, DEFAULT_RHO, "", lambda v: v >= 0, "must be >= 0"),
        c1=_typed(raw, "c1", float, 0.25, "", lambda v: v > 0, "must be > 0"),
        noise=noise,
        n_repeats=_typed(raw, "n_repeats", int, 10, "", lambda v: v >= 1, "must be >= 1"),
        base_seed=_typed(raw, "base_seed", int, 0, "", lambda v: v >= 0, "must be >= 0"),
        inner_tolerance=_typed(raw, "inner_tolerance", float, settings.inner_tolerance, "", lambda v: v > 0, "must be > 0"),
        inner_max_iterations=_typed(raw, "inner_max_iterations", int, settings.inner_max_iterations, "", lambda v: v >= 1, "must be >= 1"),
        error_every_iteration=_typed(raw, "error_every_iteration", bool, False, ""),
        ignore_eta1_condition=_typed(raw, "ignore_eta1_condition", bool, False, ""),
        L=_typed(raw, "L", float, 2.0, "", lambda v: v > 0, "must be > 0"),
        mu=_typed(raw, "mu", float, 2.0, "", lambda v: v > 1, "must be > 1"),
    )


def load_config(path):
    """Read and validate a JSON experiment config"""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _as_primal(states):
    if isinstance(states, np.ndarray):
        return np.atleast_2d(states)
    if all(isinstance(s, np.ndarray) for s in states):
        return np.vstack(states)
    return stack_primal(states)


def average_loss(states, train_datasets):
    """L = (1/N) sum_i (1/B_i) sum_n log(1 + exp(-y f_i^T x)), no C or rho weighting"""
    primal = _as_primal(states)
    per_node = []
    for f, data in zip(primal, train_datasets):
        if data.size == 0:
            per_node.append(0.0)
            continue
        margins = data.labels * (data.features @ f)
        per_node.append(float(np.logaddexp(0.0, -margins).mean()))
    return float(np.mean(per_node))


def error_rate(states, test_dataset):
    """Misclassification rate of the averaged classifier; a zero score predicts +1"""
    if test_dataset.size == 0:
        raise EmptyTestSet("error rate needs at least one test sample")
    f_bar = _as_primal(states).mean(axis=0)
    predictions = np.where(test_dataset.features @ f_bar >= 0, 1.0, -1.0)
    return float(np.mean(predictions != test_dataset.labels))


@dataclass
class MetricsTrace:
    """Aggregated metrics over repeats for t = 1..2K"""
    t: np.ndarray
    L_mean: np.ndarray
    L_range: np.ndarray
    P: np.ndarray
    E_mean: float
    E_range: float
    beta: float
    E_mean_t: Optional[np.ndarray] = None
    E_range_t: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)


@dataclass
class ExperimentContext:
    """Everything a run needs that does not depend on the repeat seed"""
    topology: object
    partition: object
    params: ObjectiveParams
    schedule: PenaltySchedule
    noise: Optional[NoiseParams]


def build_topology_from_spec(spec):
    if spec.edge_file:
        return load_edge_list(spec.edge_file)
    if spec.edges is not None:
        return build_topology(spec.n_nodes, spec.edges)
    return random_connected_topology(spec.n_nodes, spec.edge_probability, spec.seed)


def build_data(spec):
    if spec.csv:
        raw = load_csv(spec.csv, load_schema(spec.schema))
        return preprocess(raw, drop_missing=spec.drop_missing)
    return synthetic_classification(spec.n_samples, spec.d, spec.separation, spec.seed)


def _check_node_lengths(cfg, n_nodes):
    if cfg.schedule.kind == "geometric":
        for path, value in (("schedule.base", cfg.schedule.base), ("schedule.q", cfg.schedule.q)):
            size = np.atleast_1d(value).size
            if size > 1 and size != n_nodes:
                raise ConfigError(path, f"has {size} entries, network has {n_nodes} nodes")
    if cfg.noise is not None:
        size = np.atleast_1d(cfg.noise.alpha).size
        if cfg.noise.kind == "per_node" and size != n_nodes:
            raise ConfigError("noise.alpha", f"has {size} entries, network has {n_nodes} nodes")
        if cfg.noise.kind == "constant" and size != 1:
            raise ConfigError("noise.alpha", "constant noise takes a single value")


def prepare_experiment(cfg):
    """Build topology, partitioned data, objective params, schedule and noise"""
    topology = build_topology_from_spec(cfg.topology)
    _check_node_lengths(cfg, topology.n_nodes)
    features, labels = build_data(cfg.data)
    partition = split_and_partition(
        features, labels, topology.n_nodes, cfg.data.test_fraction, cfg.data.seed
    )
    C = cfg.C if cfg.C is not None else min(DEFAULT_C, min(partition.batch_sizes))
    try:
        params = ObjectiveParams(C=C, rho=cfg.rho, n_nodes=topology.n_nodes, c1=cfg.c1)
        params.check_batch_sizes(partition.batch_sizes)
    except ValueError as exc:
        raise ConfigError("C", str(exc)) from exc
    noise = cfg.noise.build() if cfg.noise is not None else None
    return ExperimentContext(topology, partition, params, cfg.schedule.build(), noise)


def accountant_report(cfg, ctx, noise=None):
    """Privacy report of the configured variant (all iterations charged for conventional)"""
    noise = noise or ctx.noise
    if noise is None:
        raise ConfigError("noise", "required for privacy accounting")
    if cfg.variant == "conventional":
        return conventional_privacy_bound(
            ctx.params, ctx.topology, ctx.schedule, noise, 2 * cfg.outer_pairs, ctx.partition.batch_sizes
        )
    return privacy_bound(ctx.params, ctx.topology, ctx.schedule, noise, cfg.outer_pairs, ctx.partition.batch_sizes)


def _run_once(cfg, ctx, seed, workers, verbose):
    if cfg.private:
        trace, _ = run_private(
            ctx.topology,
            ctx.partition.train,
            ctx.params,
            ctx.schedule,
            ctx.noise,
            cfg.gamma,
            cfg.outer_pairs,
            seed,
            variant=cfg.variant,
            inner_tolerance=cfg.inner_tolerance,
            inner_max_iterations=cfg.inner_max_iterations,
            workers=workers,
            ignore_eta1_condition=cfg.ignore_eta1_condition,
            verbose=verbose,
        )
        return trace
    solver_cfg = SolverConfig(
        variant=cfg.variant,
        schedule=ctx.schedule,
        gamma=cfg.gamma,
        outer_pairs=cfg.outer_pairs,
        inner_tolerance=cfg.inner_tolerance,
        inner_max_iterations=cfg.inner_max_iterations,
        seed=seed,
        workers=workers,
    )
    objectives = create_objectives(datasets=ctx.partition.train, params=ctx.params)
    return run_solver(ctx.topology, objectives, solver_cfg, verbose=verbose)


@traceable(name="run_experiment", tags=["experiment"])
def run_experiment(cfg, workers=None, verbose=False):
    """
    Run `n_repeats` seeded repeats and aggregate the metrics.

    Returns:
        MetricsTrace
    """
    ctx = prepare_experiment(cfg)
    test = ctx.partition.test
    T = 2 * cfg.outer_pairs

    losses = np.zeros((cfg.n_repeats, T))
    final_errors = np.zeros(cfg.n_repeats)
    errors_t = np.zeros((cfg.n_repeats, T)) if cfg.error_every_iteration else None

    for rep in range(cfg.n_repeats):
        seed = cfg.base_seed + rep
        if verbose:
            print(f"\n→ repeat {rep + 1}/{cfg.n_repeats} (seed {seed})")
        trace = _run_once(cfg, ctx, seed, workers, verbose)
        for idx, record in enumerate(trace.iterations):
            losses[rep, idx] = average_loss(record.primal, ctx.partition.train)
            if errors_t is not None:
                errors_t[rep, idx] = error_rate(record.primal, test)
        final_errors[rep] = error_rate(trace.final.primal, test)

    if cfg.private:
        report = accountant_report(cfg, ctx)
        P = report.cumulative()
        beta = report.beta
    else:
        P = np.full(T, np.inf)
        beta = math.inf

    return MetricsTrace(
        t=np.arange(1, T + 1),
        L_mean=losses.mean(axis=0),
        L_range=losses.max(axis=0) - losses.min(axis=0),
        P=P,
        E_mean=float(final_errors.mean()),
        E_range=float(final_errors.max() - final_errors.min()),
        beta=beta,
        E_mean_t=None if errors_t is None else errors_t.mean(axis=0),
        E_range_t=None if errors_t is None else errors_t.max(axis=0) - errors_t.min(axis=0),
        config=cfg.to_dict(),
    )


def emit_results(trace, path):
    """
    Write `t,L_mean,L_range,P` (+ `E_mean,E_range` per iteration when present)
    and a sibling `.json` summary with E_mean, E_range, beta_final and the config.

    Returns:
        Path of the CSV
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"t": trace.t, "L_mean": trace.L_mean, "L_range": trace.L_range, "P": trace.P})
    if trace.E_mean_t is not None:
        frame["E_mean"] = trace.E_mean_t
        frame["E_range"] = trace.E_range_t
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    summary = {
        "E_mean": trace.E_mean,
        "E_range": trace.E_range,
        "beta_final": None if math.isinf(trace.beta) else trace.beta,
        "config": trace.config,
    }
    path.with_suffix(".json").write_text(json.dumps(summary, indent=2, default=str), encoding="utf-8")
    return path


def load_results(path):
    """Read back a CSV + JSON pair written by emit_results"""
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip")
    summary = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    beta = summary["beta_final"]
    return MetricsTrace(
        t=frame["t"].to_numpy(),
        L_mean=frame["L_mean"].to_numpy(dtype=float),
        L_range=frame["L_range"].to_numpy(dtype=float),
        P=frame["P"].to_numpy(dtype=float),
        E_mean=float(summary["E_mean"]),
        E_range=float(summary["E_range"]),
        beta=math.inf if beta is None else float(beta),
        E_mean_t=frame["E_mean"].to_numpy(dtype=float) if "E_mean" in frame else None,
        E_range_t=frame["E_range"].to_numpy(dtype=float) if "E_range" in frame else None,
        config=summary.get("config", {}),
    )


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def bisect_alpha(bound, target_beta, tol=1e-10, max_iter=400):
    """
    Find a constant alpha with |bound(alpha) - target_beta| <= tol, where
    `bound` is increasing in alpha.

    Raises:
        InfeasiblePrivacy: even alpha -> 0 exceeds the target
    """
    tiny = np.finfo(float).tiny
    floor = bound(tiny)
    if floor >= target_beta:
        raise InfeasiblePrivacy(
            f"target beta={target_beta} is below the noise-free part of the bound ({floor:.6g})"
        )
    lo, hi = 0.0, 1.0
    while bound(hi) < target_beta:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise InfeasiblePrivacy("no finite alpha reaches the target")

    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        value = bound(max(mid, tiny))
        if abs(value - target_beta) <= tol:
            break
        if value < target_beta:
            lo = mid
        else:
            hi = mid
    return mid


@traceable(name="calibrate_alpha", tags=["privacy"])
def calibrate_alpha(target_beta, cfg, ctx=None):
    """
    Constant alpha that makes the configured variant's bound equal target_beta.

    Returns:
        float alpha
    """
    ctx = ctx or prepare_experiment(cfg)

    def bound(alpha):
        return accountant_report(cfg, ctx, NoiseParams.constant(alpha)).beta

    alpha = bisect_alpha(bound, target_beta)
    logger.info("calibrated alpha=%.12g for beta=%.6g (%s)", alpha, target_beta, cfg.variant)
    return alpha
