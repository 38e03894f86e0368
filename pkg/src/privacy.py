"""
Differential Privacy

Objective perturbation for the recycled ADMM variants:

- sample_noise draws the linear perturbation (Gamma-distributed norm,
  uniform direction)
- private_odd_update solves the perturbed odd subproblem and caches the
  noise-plus-gradient combination recovered from its optimality condition
- private_even_update reuses that cache, so even iterations read no data and
  draw no noise
- privacy_bound / conventional_privacy_bound evaluate the cumulative
  privacy-loss upper bound beta
- check_eta1_condition gates the first penalty value
"""
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from langsmith import traceable

from .errors import InfeasiblePrivacy, UnsupportedObjective
from .models import ERMObjective, create_objectives, unwrap
from .settings import load_settings
from .solvers import SolverConfig, conventional_step, even_update, map_nodes, odd_update

logger = logging.getLogger(__name__)

SENSITIVITY_FACTOR = 1.4


class NoiseParams:
    """
    Noise scale alpha_i(k) > 0 per node and odd iteration (larger = less noise).

    Build with `constant`, `per_node` or `from_table`.
    """

    def __init__(self, kind, value=None, per_node=None, table=None):
        self.kind = kind
        self._value = value
        self._per_node = per_node
        self._table = table
        for arr in (np.atleast_1d(v) for v in (value, per_node, table) if v is not None):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise InfeasiblePrivacy("alpha must be positive and finite")

    @classmethod
    def constant(cls, alpha):
        return cls("constant", value=float(alpha))

    @classmethod
    def per_node(cls, alphas):
        return cls("per_node", per_node=np.asarray(alphas, dtype=float))

    @classmethod
    def from_table(cls, table):
        """N x K table; column k-1 holds alpha_i(k)"""
        return cls("table", table=np.asarray(table, dtype=float))

    def alpha(self, i, k):
        if self.kind == "constant":
            return self._value
        if self.kind == "per_node":
            return float(self._per_node[i])
        return float(self._table[i, k - 1])

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "alpha": self._value}
        if self.kind == "per_node":
            return {"kind": "per_node", "alpha": self._per_node.tolist()}
        return {"kind": "table", "alpha": self._table.tolist()}


@dataclass
class PrivacyReport:
    """
    Cumulative privacy-loss bound.

    Attributes:
        per_node: Length-N cumulative bound per node
        beta: max over nodes
        per_k: N x K matrix of per-release terms
        per_iteration: T x N matrix over iterations t = 1..T; rows of
            recycled (even) iterations are exactly zero
    """
    per_node: np.ndarray
    beta: float
    per_k: np.ndarray
    per_iteration: np.ndarray = field(repr=False)

    def cumulative(self):
        """P(t) = max_i sum_{s <= t} term_i(s), for t = 1..T"""
        if self.per_iteration.size == 0:
            return np.zeros(0)
        return np.cumsum(self.per_iteration, axis=0).max(axis=1)

    def to_dict(self):
        return {"beta": self.beta, "per_node": self.per_node.tolist(), "per_k": self.per_k.tolist()}


def node_rng(seed, node, k):
    """Independent generator per (seed, node, k), so draws ignore scheduling order"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(node), int(k)]))


def sample_noise(alpha, d, rng):
    """
    Draw eps in R^d with density proportional to exp(-alpha * ||eps||).

    The norm is Gamma(shape=d, scale=1/alpha); the direction is a normalized
    standard Gaussian vector.
    """
    if alpha <= 0 or not np.isfinite(alpha):
        raise InfeasiblePrivacy(f"alpha must be positive and finite, got {alpha}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    return rng.gamma(shape=d, scale=1.0 / alpha) * direction


class NoiseSource:
    """
    Per-run noise provider for the orchestrator.

    `rng(i, k)` opens the stream for node i at release k and counts it; the
    optional `injector(i, k, d)` hook replaces sampling with fixed vectors.
    """

    def __init__(self, noise, seed, injector=None):
        self.noise = noise
        self.seed = seed
        self.injector = injector
        self.streams_opened = 0
        self._lock = threading.Lock()

    def alpha(self, i, k):
        return self.noise.alpha(i, k)

    def rng(self, i, k):
        with self._lock:
            self.streams_opened += 1
        return node_rng(self.seed, i, k)

    def injected(self, i, k, d):
        if self.injector is None:
            return None
        return np.asarray(self.injector(i, k, d), dtype=float)

    def draw(self, i, k, d):
        injected = self.injected(i, k, d)
        if injected is not None:
            with self._lock:
                self.streams_opened += 1
            return injected
        return sample_noise(self.alpha(i, k), d, self.rng(i, k))


def private_odd_update(i, states_prev, topology, eta, objective, alpha_ik, rng, cfg, noise=None):
    """
    Perturbed odd update for node i.

    Minimises O + (2 lambda + eps)^T f + eta * sum_j ||0.5 (f_i + f_j)(prev) - f||^2
    and caches eps + grad O at the solution through the subproblem's
    optimality condition; eps itself is not kept.

    Args:
        alpha_ik: Noise scale for this node and release
        rng: Generator for this node and release
        noise: Fixed perturbation (skips sampling)
    """
    eps = noise if noise is not None else sample_noise(alpha_ik, objective.dimension, rng)
    return odd_update(i, states_prev, topology, eta, objective, cfg, perturbation=eps)


def private_even_update(i, state, topology, eta, gamma):
    """Recycled step from the cached eps + grad O; touches no data and no rng"""
    return even_update(i, state, topology, eta, gamma)


def private_conventional_step(states, topology, etas, objectives, cfg, noise_source, t, executor=None):
    """
    Conventional iteration t with fresh objective perturbation on every node.

    Every iteration is a release here, so the accountant charges all of them.
    """
    d = objectives[0].dimension
    perturbations = map_nodes(executor, lambda i: noise_source.draw(i, t, d), topology.n_nodes)
    return conventional_step(
        states, topology, etas, objectives, cfg, executor=executor, perturbations=perturbations
    )


def _release_term(params, degree, batch_size, eta, alpha):
    """(2C/B_i) * (1.4 c1 / (rho/N + 2 eta V_i) + alpha)"""
    curvature = params.rho / params.n_nodes + 2.0 * eta * degree
    return (2.0 * params.C / batch_size) * (SENSITIVITY_FACTOR * params.c1 / curvature + alpha)


def _release_matrix(params, topology, schedule, noise, releases, batch_sizes, schedule_index):
    n = topology.n_nodes
    if len(batch_sizes) != n:
        raise ValueError(f"{len(batch_sizes)} batch sizes for {n} nodes")
    terms = np.zeros((n, releases))
    for r in range(1, releases + 1):
        etas = schedule.values(schedule_index(r), n)
        for i in range(n):
            terms[i, r - 1] = _release_term(
                params, int(topology.degrees[i]), batch_sizes[i], etas[i], noise.alpha(i, r)
            )
    return terms


def privacy_bound(params, topology, schedule, noise, K, batch_sizes):
    """
    Privacy-loss bound of the private recycled variants after K pairs:

        beta = max_i sum_{k=1..K} (2C/B_i) (1.4 c1 / (rho/N + 2 eta_i(2k-1) V_i) + alpha_i(k))

    Even iterations are post-processing of the odd releases and add nothing.

    Returns:
        PrivacyReport (per_iteration has 2K rows, even rows zero)
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    terms = _release_matrix(params, topology, schedule, noise, K, batch_sizes, lambda k: k)
    per_iteration = np.zeros((2 * K, topology.n_nodes))
    per_iteration[0::2, :] = terms.T
    per_node = terms.sum(axis=1)
    beta = float(per_node.max()) if K > 0 else 0.0
    return PrivacyReport(per_node=per_node, beta=beta, per_k=terms, per_iteration=per_iteration)


def conventional_privacy_bound(params, topology, schedule, noise, T, batch_sizes):
    """
    Same per-release term charged at every one of the T conventional iterations;
    alpha_i(t) is read at release index t.
    """
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    terms = _release_matrix(params, topology, schedule, noise, T, batch_sizes, lambda t: 1)
    per_node = terms.sum(axis=1)
    beta = float(per_node.max()) if T > 0 else 0.0
    return PrivacyReport(per_node=per_node, beta=beta, per_k=terms, per_iteration=terms.T.copy())


def check_eta1_condition(params, topology, schedule, batch_sizes):
    """True iff 2 c1 < min_i (B_i / C) (rho/N + 2 eta_i(1) V_i), strictly"""
    if params.C == 0:
        return True
    etas = schedule.values(1, topology.n_nodes)
    rhs = min(
        (batch_sizes[i] / params.C) * (params.rho / params.n_nodes + 2.0 * etas[i] * topology.degrees[i])
        for i in range(topology.n_nodes)
    )
    return bool(2.0 * params.c1 < rhs)


def require_erm(objectives):
    """The privacy bound is only valid for the logistic ERM objective"""
    for i, obj in enumerate(objectives):
        if not isinstance(unwrap(obj), ERMObjective):
            raise UnsupportedObjective(
                f"node {i}: privacy accounting needs the ERM objective, got {type(unwrap(obj)).__name__}"
            )


@traceable(name="run_private", tags=["admm", "privacy"])
def run_private(
    topology,
    datasets,
    params,
    schedule,
    noise,
    gamma,
    K,
    seed,
    variant="mr_admm",
    inner_tolerance=None,
    inner_max_iterations=None,
    workers=None,
    ignore_eta1_condition=False,
    objectives=None,
    injector=None,
    verbose=False,
):
    """
    Private solver run plus its privacy report.

    Args:
        topology: Topology
        datasets: Per-node Dataset list
        params: ObjectiveParams
        schedule: PenaltySchedule
        noise: NoiseParams
        gamma: Even-step damping
        K: Number of pairs
        seed: Seeds the initial primal draw and every noise stream
        variant: "mr_admm", "r_admm" or "conventional" (per-iteration perturbation)
        inner_tolerance, inner_max_iterations: Inner-solve overrides (None: ADMM_INNER_TOL, ADMM_INNER_MAX_ITER)
        ignore_eta1_condition: Warn instead of raising when the eta_i(1) gate fails
        objectives: Pre-built objectives (e.g. instrumented); defaults to ERM over datasets
        injector: Test hook replacing sampled noise with fixed vectors

    Returns:
        tuple: (IterationTrace, PrivacyReport)

    Raises:
        InfeasiblePrivacy: eta_i(1) gate fails and is not overridden
    """
    from .orchestrator import run_solver

    if objectives is None:
        objectives = create_objectives(datasets=datasets, params=params)
    require_erm(objectives)
    batch_sizes = [ds.size for ds in datasets]

    if not check_eta1_condition(params, topology, schedule, batch_sizes):
        message = "eta_i(1) is below the worst-case privacy gate 2 c1 < min_i (B_i/C)(rho/N + 2 eta_i(1) V_i)"
        if not ignore_eta1_condition:
            raise InfeasiblePrivacy(message)
        logger.warning("%s; proceeding", message)

    settings = load_settings()
    cfg = SolverConfig(
        variant=variant,
        schedule=schedule,
        gamma=gamma,
        outer_pairs=K,
        inner_tolerance=inner_tolerance if inner_tolerance is not None else settings.inner_tolerance,
        inner_max_iterations=inner_max_iterations if inner_max_iterations is not None else settings.inner_max_iterations,
        seed=seed,
        workers=workers,
    )
    source = NoiseSource(noise, seed, injector=injector)
    trace = run_solver(topology, objectives, cfg, noise_source=source, verbose=verbose)

    if variant == "conventional":
        report = conventional_privacy_bound(params, topology, schedule, noise, 2 * K, batch_sizes)
    else:
        report = privacy_bound(params, topology, schedule, noise, K, batch_sizes)
    logger.info("private %s finished, beta=%.6g", variant, report.beta)
    return trace, report


def export_report_json(report, path):
    """Write {"beta", "per_node", "per_k"}"""
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return path
