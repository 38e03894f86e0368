"""
ADMM Solver Core

Per-node update rules for three decentralized ADMM variants:

1. conventional - every iteration solves the full local subproblem, then
   updates the dual
2. r_admm - odd iterations solve the subproblem and update the dual; even
   iterations take a closed-form step built only from quantities cached at
   the preceding odd iteration (no data access)
3. mr_admm - r_admm with a per-node, non-decreasing penalty schedule

Everything here is a pure function of immutable NodeState snapshots. The
half-iteration loop that sequences these updates lives in orchestrator.py.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import (
    ConfigError,
    MaxIterationsExceeded,
    MissingCache,
    NonfiniteValue,
    ScheduleViolation,
)
from .settings import load_settings

logger = logging.getLogger(__name__)

VARIANTS = ("conventional", "r_admm", "mr_admm")


@dataclass(frozen=True)
class NodeState:
    """
    One node's variables at a given iteration.

    Attributes:
        primal: f_i
        dual: lambda_i
        cached_gradient: gradient (plus perturbation, in private mode) at the
            last odd primal; present only between an odd and an even update
        cached_neighbor_diff: eta_i * sum_j (f_i - f_j) from the last dual update
    """
    primal: np.ndarray
    dual: np.ndarray
    cached_gradient: Optional[np.ndarray] = field(default=None, repr=False)
    cached_neighbor_diff: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def has_cache(self):
        return self.cached_gradient is not None and self.cached_neighbor_diff is not None


class PenaltySchedule:
    """
    Per-node penalty eta_i(2k-1) indexed by pair number k = 1, 2, ...

    Build with `constant`, `geometric` or `from_table`.
    """

    def __init__(self, kind, n_nodes=None, eta=None, base=None, ratio=None, table=None):
        self.kind = kind
        self.n_nodes = n_nodes
        self._eta = eta
        self._base = base
        self._ratio = ratio
        self._table = table

    @classmethod
    def constant(cls, eta):
        """eta_i(2k-1) = eta for every node and pair"""
        return cls("constant", eta=float(eta))

    @classmethod
    def geometric(cls, base, ratio):
        """
        eta_i(2k-1) = base_i * ratio_i ** k

        Args:
            base: Scalar or per-node initial scale eta_hat_i
            ratio: Scalar or per-node growth factor q_i (>= 1 keeps it non-decreasing)
        """
        base = np.atleast_1d(np.asarray(base, dtype=float))
        ratio = np.atleast_1d(np.asarray(ratio, dtype=float))
        sizes = {s for s in (base.size, ratio.size) if s > 1}
        if len(sizes) > 1:
            raise ScheduleViolation(f"base has {base.size} entries but ratio has {ratio.size}")
        n_nodes = sizes.pop() if sizes else None
        return cls("geometric", n_nodes=n_nodes, base=base, ratio=ratio)

    @classmethod
    def from_table(cls, table):
        """Explicit N x K table; column k-1 holds eta_i(2k-1)"""
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ScheduleViolation(f"schedule table must be 2-D, got shape {table.shape}")
        return cls("table", n_nodes=table.shape[0], table=table)

    @property
    def is_constant(self):
        """True when every node uses the same eta at every pair"""
        if self.kind == "constant":
            return True
        if self.kind == "geometric":
            return bool(np.all(self._ratio == 1.0) and np.all(self._base == self._base[0]))
        return bool(np.all(self._table == self._table[0, 0]))

    def values(self, k, n_nodes):
        """Vector (eta_1(2k-1), ..., eta_N(2k-1)) for pair k >= 1"""
        if k < 1:
            raise ScheduleViolation(f"pair index starts at 1, got {k}")
        if self.n_nodes is not None and self.n_nodes != n_nodes:
            raise ScheduleViolation(f"schedule covers {self.n_nodes} nodes, network has {n_nodes}")
        if self.kind == "constant":
            return np.full(n_nodes, self._eta)
        if self.kind == "geometric":
            return np.broadcast_to(self._base * self._ratio ** k, (n_nodes,)).copy()
        if k > self._table.shape[1]:
            raise ScheduleViolation(f"schedule table has {self._table.shape[1]} pairs, pair {k} requested")
        return self._table[:, k - 1].copy()

    def eta(self, i, k, n_nodes):
        return float(self.values(k, n_nodes)[i])

    def validate(self, outer_pairs, n_nodes):
        """
        Check 0 < eta_i(2k-1) <= eta_i(2k+1) < inf for k = 1..K.

        Raises:
            ScheduleViolation
        """
        previous = None
        for k in range(1, outer_pairs + 1):
            current = self.values(k, n_nodes)
            if not np.all(np.isfinite(current)) or np.any(current <= 0):
                raise ScheduleViolation(f"eta must be positive and finite (pair {k})")
            if previous is not None and np.any(current < previous):
                node = int(np.flatnonzero(current < previous)[0])
                raise ScheduleViolation(f"eta decreases at node {node} between pairs {k - 1} and {k}")
            previous = current

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "eta": self._eta}
        if self.kind == "geometric":
            return {"kind": "geometric", "base": self._base.tolist(), "q": self._ratio.tolist()}
        return {"kind": "table", "table": self._table.tolist()}

    def __repr__(self):
        return f"PenaltySchedule({self.to_dict()})"


@dataclass(frozen=True)
class SolverConfig:
    """
    Settings for one solver run.

    Attributes:
        variant: "conventional", "r_admm" or "mr_admm"
        schedule: PenaltySchedule (must be constant for conventional/r_admm)
        gamma: Even-step damping (>= 0)
        outer_pairs: K; the run has 2K iterations
        inner_tolerance: Gradient-norm stopping rule of the inner solve (default: ADMM_INNER_TOL)
        inner_max_iterations: Inner Newton iteration cap (default: ADMM_INNER_MAX_ITER)
        seed: Seed for the initial primal draw
        strict_inner: Raise MaxIterationsExceeded instead of warning
        workers: Thread count for per-node updates (None: ADMM_WORKERS)
    """
    variant: str
    schedule: PenaltySchedule
    gamma: float = 0.0
    outer_pairs: int = 1
    inner_tolerance: float = field(default_factory=lambda: load_settings().inner_tolerance)
    inner_max_iterations: int = field(default_factory=lambda: load_settings().inner_max_iterations)
    seed: int = 0
    strict_inner: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"expected one of {VARIANTS}, got {self.variant!r}")
        if self.outer_pairs < 1:
            raise ConfigError("outer_pairs", "must be >= 1")
        if self.inner_tolerance <= 0:
            raise ConfigError("inner_tolerance", "must be > 0")
        if self.inner_max_iterations < 1:
            raise ConfigError("inner_max_iterations", "must be >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma", "must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")


@dataclass
class IterationRecord:
    """Snapshot of all nodes after iteration t"""
    t: int
    phase: str
    primal: np.ndarray
    dual: np.ndarray
    wall_time: float = 0.0
    data_accesses: Optional[int] = None
    noise_draws: int = 0


@dataclass
class IterationTrace:
    """Initial state (t = 0) followed by one record per iteration"""
    variant: str
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        """Records for t >= 1"""
        return self.records[1:]

    def at(self, t):
        record = self.records[t]
        if record.t != t:
            raise IndexError(f"trace record {t} holds iteration {record.t}")
        return record

    def odd(self):
        return [r for r in self.records if r.phase == "odd"]

    def even(self):
        return [r for r in self.records if r.phase == "even"]

    @property
    def final(self):
        return self.records[-1]


@dataclass
class InnerResult:
    """Outcome of inner_solve"""
    x: np.ndarray
    converged: bool
    grad_norm: float
    iterations: int


def _newton_direction(hessian, grad):
    try:
        factor = linalg.cho_factor(hessian, check_finite=False)
        return -linalg.cho_solve(factor, grad, check_finite=False)
    except linalg.LinAlgError:
        return -linalg.lstsq(hessian, grad)[0]


def inner_solve(
    objective,
    linear_term,
    proximal_center_sum,
    proximal_weight,
    warm_start,
    tol=1e-8,
    max_iter=100,
    strict=False,
):
    """
    Minimise the local subproblem

        S(f) = O(f) + linear_term^T f + w * ||f||^2 - 2 * c^T f

    with damped Newton steps, where w = proximal_weight and
    c = proximal_center_sum.

    A step is accepted when it gives sufficient decrease in S (Armijo) or
    reduces the gradient norm; the second test keeps progress going once S
    is flat to machine precision.

    Args:
        objective: Objective (value, gradient, hessian)
        linear_term: Vector added linearly (2 * lambda_i, plus noise if private)
        proximal_center_sum: c
        proximal_weight: w >= 0
        warm_start: Starting point (previous primal)
        tol: Stop when ||grad S|| <= tol
        max_iter: Newton iteration cap
        strict: Raise MaxIterationsExceeded on the cap instead of warning

    Returns:
        InnerResult
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if proximal_weight < 0:
        raise ValueError(f"proximal_weight must be >= 0, got {proximal_weight}")
    if proximal_weight == 0 and objective.strong_convexity() <= 0:
        raise ValueError("subproblem is not strongly convex (zero proximal weight)")

    linear_term = np.asarray(linear_term, dtype=float)
    center = np.asarray(proximal_center_sum, dtype=float)
    w = float(proximal_weight)
    d = objective.dimension

    def value(x):
        return objective.value(x) + float(linear_term @ x) + w * float(x @ x) - 2.0 * float(center @ x)

    def gradient(x):
        return objective.gradient(x) + linear_term + 2.0 * w * x - 2.0 * center

    x = np.array(warm_start, dtype=float)
    current = value(x)
    grad = gradient(x)
    grad_norm = float(np.linalg.norm(grad))
    if not (np.isfinite(current) and np.isfinite(grad_norm)):
        raise NonfiniteValue("non-finite subproblem at warm start")

    iterations = 0
    while grad_norm > tol and iterations < max_iter:
        hessian = objective.hessian(x) + 2.0 * w * np.eye(d)
        step = _newton_direction(hessian, grad)
        slope = float(grad @ step)

        t = 1.0
        accepted = False
        while t >= 1e-12:
            candidate = x + t * step
            cand_value = value(candidate)
            cand_grad = gradient(candidate)
            cand_norm = float(np.linalg.norm(cand_grad))
            if np.isfinite(cand_value) and np.isfinite(cand_norm):
                if cand_value <= current + 1e-4 * t * slope or cand_norm < grad_norm:
                    accepted = True
                    break
            t *= 0.5
        iterations += 1
        if not accepted:
            break
        x, current, grad, grad_norm = candidate, cand_value, cand_grad, cand_norm

    if not np.all(np.isfinite(x)):
        raise NonfiniteValue("inner solve produced a non-finite iterate")

    converged = grad_norm <= tol
    if not converged:
        message = f"inner solve stopped at ||grad||={grad_norm:.3e} > tol={tol:.1e} after {iterations} iterations"
        if strict:
            raise MaxIterationsExceeded(message, best=x, grad_norm=grad_norm)
        logger.warning(message)
    return InnerResult(x=x, converged=converged, grad_norm=grad_norm, iterations=iterations)


def _proximal_terms(i, states, topology, eta):
    """(w, c) = (eta * V_i, eta * sum_j 0.5 * (f_i + f_j)) in ascending neighbor order"""
    f_i = states[i].primal
    center = np.zeros_like(f_i)
    for j in topology.neighbors(i):
        center = center + 0.5 * (f_i + states[j].primal)
    return eta * len(topology.neighbors(i)), eta * center


def odd_update(i, states_prev, topology, eta, objective, cfg, perturbation=None):
    """
    Odd-iteration primal update for node i.

    Solves the local subproblem around the neighbor averages of the previous
    iterate. Without a perturbation the gradient at the new primal is cached
    directly; with one, the cache holds perturbation + gradient recovered
    from the first-order optimality condition of the subproblem.

    Returns:
        NodeState for node i (dual unchanged, neighbor-diff cache cleared)
    """
    prev = states_prev[i]
    weight, center = _proximal_terms(i, states_prev, topology, eta)
    linear = 2.0 * prev.dual
    if perturbation is not None:
        linear = linear + perturbation

    result = inner_solve(
        objective,
        linear_term=linear,
        proximal_center_sum=center,
        proximal_weight=weight,
        warm_start=prev.primal,
        tol=cfg.inner_tolerance,
        max_iter=cfg.inner_max_iterations,
        strict=cfg.strict_inner,
    )
    f_new = result.x

    if perturbation is None:
        cached = objective.gradient(f_new)
    else:
        neighbors = topology.neighbors(i)
        neighbor_sum = np.zeros_like(f_new)
        for j in neighbors:
            neighbor_sum = neighbor_sum + states_prev[j].primal
        v_i = len(neighbors)
        cached = -2.0 * prev.dual - eta * (2.0 * v_i * f_new - v_i * prev.primal - neighbor_sum)

    return NodeState(primal=f_new, dual=prev.dual, cached_gradient=cached, cached_neighbor_diff=None)


def dual_update(i, states_odd, topology, eta):
    """
    lambda_i += (eta / 2) * sum_j (f_i - f_j); caches eta * sum_j (f_i - f_j).
    """
    state = states_odd[i]
    diff = np.zeros_like(state.primal)
    for j in topology.neighbors(i):
        diff = diff + (state.primal - states_odd[j].primal)
    return replace(state, dual=state.dual + 0.5 * eta * diff, cached_neighbor_diff=eta * diff)


def even_update(i, state, topology, eta, gamma):
    """
    Recycled even-iteration step for node i; reads only the cached values.

        f <- f - (cached_gradient + 2 * lambda + cached_neighbor_diff) / (2 * eta * V_i + gamma)

    Raises:
        MissingCache: no odd/dual update preceded this call
    """
    if not state.has_cache:
        raise MissingCache(f"node {i}: even update needs the caches of an odd update")
    step_scale = 2.0 * eta * len(topology.neighbors(i)) + gamma
    if step_scale <= 0:
        raise NonfiniteValue(f"node {i}: even step undefined (2*eta*V + gamma = 0)")
    direction = state.cached_gradient + 2.0 * state.dual + state.cached_neighbor_diff
    return NodeState(primal=state.primal - direction / step_scale, dual=state.dual)


def map_nodes(executor, fn, n_nodes):
    """Run fn(i) for every node; results are ordered by node index"""
    if executor is None:
        return [fn(i) for i in range(n_nodes)]
    return list(executor.map(fn, range(n_nodes)))


def conventional_step(states, topology, etas, objectives, cfg, executor=None, perturbations=None):
    """
    One conventional ADMM iteration: full local solve on every node, then
    the dual update.

    Args:
        states: NodeState list at iteration t
        etas: Per-node penalties
        perturbations: Optional per-node linear noise terms

    Returns:
        NodeState list at iteration t + 1 (no caches)
    """
    n = topology.n_nodes

    def primal(i):
        noise = None if perturbations is None else perturbations[i]
        return odd_update(i, states, topology, etas[i], objectives[i], cfg, perturbation=noise)

    primal_states = map_nodes(executor, primal, n)
    dual_states = map_nodes(executor, lambda i: dual_update(i, primal_states, topology, etas[i]), n)
    return [NodeState(primal=s.primal, dual=s.dual) for s in dual_states]


def init_states(n_nodes, dimension, seed):
    """f_i(0) ~ U[-0.5, 0.5]^d (seeded), lambda_i(0) = 0"""
    rng = np.random.default_rng(seed)
    primal = rng.uniform(-0.5, 0.5, size=(n_nodes, dimension))
    return [NodeState(primal=primal[i].copy(), dual=np.zeros(dimension)) for i in range(n_nodes)]


def stack_primal(states):
    return np.vstack([s.primal for s in states])


def stack_dual(states):
    return np.vstack([s.dual for s in states])


def export_trace_jsonl(trace, path):
    """
    Write a trace as JSON lines:
    {"t", "phase", "primal", "dual", "wall_time", "data_accesses", "noise_draws"}

    The init record also carries the solver "variant".
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in trace.records:
            row = {
                "t": record.t,
                "phase": record.phase,
                "primal": record.primal.tolist(),
                "dual": record.dual.tolist(),
                "wall_time": record.wall_time,
                "data_accesses": record.data_accesses,
                "noise_draws": record.noise_draws,
            }
            if record.phase == "init":
                row["variant"] = trace.variant
            fh.write(json.dumps(row) + "\n")
    return path


def load_trace_jsonl(path, variant=None):
    """Read a trace written by export_trace_jsonl; `variant` overrides the stored one"""
    records = []
    stored = None
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            stored = stored or row.get("variant")
            records.append(IterationRecord(
                t=int(row["t"]),
                phase=row["phase"],
                primal=np.asarray(row["primal"], dtype=float),
                dual=np.asarray(row["dual"], dtype=float),
                wall_time=float(row.get("wall_time", 0.0)),
                data_accesses=row.get("data_accesses"),
                noise_draws=int(row.get("noise_draws", 0)),
            ))
    variant = variant or stored
    if variant is None:
        phases = {r.phase for r in records}
        variant = "conventional" if "conventional" in phases else "r_admm"
    return IterationTrace(variant=variant, records=records)
