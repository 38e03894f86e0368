"""
Convergence and Sample-Complexity Analysis

1. Sufficient convergence conditions for the recycled variants, checked as
   positive definiteness of symmetric parts:
   - check_mr_conditions: general schedule, constants L > 0 and mu > 1
   - check_r_conditions: the constant-penalty form with L = mu = 2
   - check_schedule_conditions: every consecutive pair of a concrete schedule
2. First-order optimality residuals of a state snapshot
3. Minimum per-node sample sizes for the non-private and private solvers
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InfeasiblePrivacy, InfeasibleTarget, NonfiniteInput
from .solvers import stack_dual, stack_primal
from .topology import is_bipartite, laplacian_matrices

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-12


@dataclass(frozen=True)
class ConditionInputs:
    """
    Attributes:
        topology: Topology
        eta_t: Per-node penalties at iteration t (W(t))
        eta_next: Per-node penalties at iteration t + 1 (W(t+1))
        gamma: Even-step damping
        lipschitz: Per-node gradient-Lipschitz constants M_i (D_M = diag(M_i^2))
        L: Constant > 0
        mu: Constant > 1
    """
    topology: object
    eta_t: np.ndarray
    eta_next: np.ndarray
    gamma: float
    lipschitz: np.ndarray
    L: float = 2.0
    mu: float = 2.0

    def __post_init__(self):
        n = self.topology.n_nodes
        for name in ("eta_t", "eta_next", "lipschitz"):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            if not np.all(np.isfinite(value)):
                raise NonfiniteInput(f"{name} has non-finite entries")
            object.__setattr__(self, name, value)
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise NonfiniteInput(f"gamma must be finite and >= 0, got {self.gamma}")
        if np.any(self.eta_t <= 0) or np.any(self.eta_next <= 0):
            raise ValueError("eta entries must be positive")
        if self.L <= 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if self.mu <= 1:
            raise ValueError(f"mu must be > 1, got {self.mu}")


@dataclass(frozen=True)
class ConditionResult:
    """Verdicts and margins (smallest eigenvalue of each symmetric part)"""
    holds_i: bool
    holds_ii: bool
    margin_i: float
    margin_ii: float

    @property
    def holds(self):
        return self.holds_i and self.holds_ii

    @property
    def margins(self):
        return (self.margin_i, self.margin_ii)


def symmetric_margin(matrix):
    """Smallest eigenvalue of (M + M^T) / 2"""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise NonfiniteInput("condition matrix has non-finite entries")
    return float(linalg.eigvalsh(0.5 * (matrix + matrix.T))[0])


def _step_matrix(topology, eta, gamma):
    """D~ diagonal entries 2 eta_i V_i + gamma and their minimum"""
    diag = 2.0 * eta * topology.degrees + gamma
    sigma = float(diag.min())
    if sigma <= 0:
        raise NonfiniteInput("2 eta_i V_i + gamma vanishes; the even step is undefined")
    return diag, sigma


def _result(first, second):
    margin_i, margin_ii = symmetric_margin(first), symmetric_margin(second)
    return ConditionResult(
        holds_i=margin_i > 0, holds_ii=margin_ii > 0, margin_i=margin_i, margin_ii=margin_ii
    )


def check_mr_conditions(inp):
    """
    Evaluate, with W0 = diag(eta_t), W1 = diag(eta_next), D~ = diag(2 W0 V + gamma),
    sigma = min diag(D~):

        (i)  I + W1 (D+A) D~^-1  -  (L mu / (2 sigma)) (W1 (D-A))^+ D_M
        (ii) W1 (D+A)  -  W1 (D+A) D~^-1 (W0 (D-A) + (2/L) W1 (D+A))
                       -  (L mu / (2 sigma (mu - 1))) D_M

    Each condition holds when the symmetric part of its matrix is positive
    definite.

    Returns:
        ConditionResult
    """
    lap, signless = laplacian_matrices(inp.topology)
    n = inp.topology.n_nodes
    w0 = np.diag(inp.eta_t)
    w1 = np.diag(inp.eta_next)
    d_m = np.diag(inp.lipschitz ** 2)
    diag, sigma = _step_matrix(inp.topology, inp.eta_t, inp.gamma)
    d_inv = np.diag(1.0 / diag)
    L, mu = inp.L, inp.mu

    first = (
        np.eye(n)
        + w1 @ signless @ d_inv
        - (L * mu / (2.0 * sigma)) * linalg.pinv(w1 @ lap, rtol=PINV_RTOL) @ d_m
    )
    second = (
        w1 @ signless
        - w1 @ signless @ d_inv @ (w0 @ lap + (2.0 / L) * w1 @ signless)
        - (L * mu / (2.0 * sigma * (mu - 1.0))) * d_m
    )
    return _result(first, second)


def check_r_conditions(topology, eta, gamma, lipschitz):
    """
    Constant-penalty conditions:

        (iii) I + eta (D+A) D~^-1  -  (2 / (eta sigma)) (D-A)^+ D_M
        (iv)  eta (D+A)  -  2 eta^2 (D+A) D~^-1 D  -  (2 / sigma) D_M

    Returns:
        ConditionResult (fields _i/_ii refer to (iii)/(iv))
    """
    inp = ConditionInputs(topology, eta, eta, gamma, lipschitz)
    eta = float(eta)
    lap, signless = laplacian_matrices(topology)
    degree = np.diag(topology.degrees.astype(float))
    d_m = np.diag(inp.lipschitz ** 2)
    diag, sigma = _step_matrix(topology, inp.eta_t, gamma)
    d_inv = np.diag(1.0 / diag)

    third = (
        np.eye(topology.n_nodes)
        + eta * signless @ d_inv
        - (2.0 / (eta * sigma)) * linalg.pinv(lap, rtol=PINV_RTOL) @ d_m
    )
    fourth = eta * signless - 2.0 * eta ** 2 * signless @ d_inv @ degree - (2.0 / sigma) * d_m
    return _result(third, fourth)


def check_schedule_conditions(topology, schedule, gamma, lipschitz, K, L=2.0, mu=2.0):
    """
    Check the general conditions at every consecutive pair (k, k+1), k < K,
    and return the worst margins (a single pair is checked against itself
    when K = 1).
    """
    n = topology.n_nodes
    pairs = [(1, 1)] if K <= 1 else [(k, k + 1) for k in range(1, K)]
    worst_i, worst_ii = np.inf, np.inf
    for k, k_next in pairs:
        inp = ConditionInputs(
            topology, schedule.values(k, n), schedule.values(k_next, n), gamma, lipschitz, L, mu
        )
        result = check_mr_conditions(inp)
        worst_i = min(worst_i, result.margin_i)
        worst_ii = min(worst_ii, result.margin_ii)
    return ConditionResult(
        holds_i=worst_i > 0, holds_ii=worst_ii > 0, margin_i=worst_i, margin_ii=worst_ii
    )


def condition_report_json(result, topology=None):
    """Report dict {"holds_i", "holds_ii", "margin_i", "margin_ii"} (+ "bipartite")"""
    report = {
        "holds_i": bool(result.holds_i),
        "holds_ii": bool(result.holds_ii),
        "margin_i": float(result.margin_i),
        "margin_ii": float(result.margin_ii),
    }
    if topology is not None:
        # D+A is singular on bipartite graphs, so (ii) fails whenever D_M != 0
        report["bipartite"] = bool(is_bipartite(topology))
    return report


def optimality_residuals(states, topology, objectives):
    """
    (stationarity, consensus) = (||grad O(F) + 2 Lambda||_F, ||(D-A) F||_F)
    for the stacked primal F and dual Lambda.
    """
    primal = stack_primal(states)
    dual = stack_dual(states)
    grads = np.vstack([obj.gradient(primal[i]) for i, obj in enumerate(objectives)])
    lap, _ = laplacian_matrices(topology)
    stationarity = float(np.linalg.norm(grads + 2.0 * dual))
    consensus = float(np.linalg.norm(lap @ primal))
    return stationarity, consensus


@dataclass(frozen=True)
class SampleComplexityInputs:
    """
    Attributes:
        f_ref_norm_sq: ||f_ref||^2
        tau: Accuracy target
        delta: Failure probability in (0, 1)
        delta_k: Convergence gaps Delta_i(k) over k
        w: Calibration constant
        a: Constant > 0 (private bound)
        alpha: Noise scale alpha_i(k) per k (scalar broadcast)
        d: Feature dimension
        C: Loss weight
        N: Network size
    """
    f_ref_norm_sq: float
    tau: float
    delta: float
    delta_k: Sequence[float] = (0.0,)
    w: float = 1.0
    a: float = 0.1
    alpha: object = np.inf
    d: int = 1
    C: float = 1.0
    N: int = 1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        gaps = np.atleast_1d(np.asarray(self.delta_k, dtype=float))
        if gaps.size == 0:
            raise ValueError("delta_k needs at least one entry")
        object.__setattr__(self, "delta_k", gaps)


def sample_complexity_nonprivate(inp):
    """
    B_min = w * max_k ||f_ref||^2 log(1/delta) / (tau - Delta(k))^2

    Raises:
        InfeasibleTarget: tau <= max_k Delta(k)
    """
    slack = inp.tau - inp.delta_k
    if np.any(slack <= 0):
        raise InfeasibleTarget(f"tau={inp.tau} does not exceed the gap {inp.delta_k.max()}")
    return float(inp.w * np.max(inp.f_ref_norm_sq * np.log(1.0 / inp.delta) / slack ** 2))


def sample_complexity_private(inp):
    """
    B_min = w * max_k C N log(1/delta) /
            ( N C (tau - Delta(k))^2 / (2 ||f_ref||^2)
              - (1 + a) (N d^2 / (C alpha(k)^2)) log(d/delta)^2 )

    Raises:
        InfeasibleTarget: tau <= max_k Delta(k)
        InfeasiblePrivacy: a denominator is <= 0 (noise too large for tau)
    """
    slack = inp.tau - inp.delta_k
    if np.any(slack <= 0):
        raise InfeasibleTarget(f"tau={inp.tau} does not exceed the gap {inp.delta_k.max()}")
    alpha = np.broadcast_to(np.asarray(inp.alpha, dtype=float), slack.shape)
    if np.any(alpha <= 0):
        raise InfeasiblePrivacy("alpha must be positive")
    n_c = inp.N * inp.C
    noise_term = (1.0 + inp.a) * (inp.N * inp.d ** 2 / (inp.C * alpha ** 2)) * np.log(inp.d / inp.delta) ** 2
    denominator = n_c * slack ** 2 / (2.0 * inp.f_ref_norm_sq) - noise_term
    if np.any(denominator <= 0):
        raise InfeasiblePrivacy("noise level too large for the accuracy target (non-positive denominator)")
    return float(inp.w * np.max(n_c * np.log(1.0 / inp.delta) / denominator))
