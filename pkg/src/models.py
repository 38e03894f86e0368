"""
Objective Models

Per-node objective functions the solvers minimise:

- ERMObjective: regularized logistic ERM
      O(f, D_i) = (C / B_i) * sum_n log(1 + exp(-y_n f^T x_n)) + (rho / N) * 0.5 * ||f||^2
- QuadraticObjective: 0.5 * ||f - a_i||^2, a closed-form consensus oracle
  (the network optimum is the mean of the a_i)

Both implement the Objective interface (value, gradient, hessian,
gradient_lipschitz, strong_convexity). `create_objectives` builds one
objective per node, the same way the rest of the toolkit expects them.
"""
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, NonfiniteValue

logger = logging.getLogger(__name__)

LOGISTIC_C1 = 0.25


def logistic_loss(z):
    """
    Logistic loss log(1 + exp(-z)) and its first two derivatives.

    Overflow-safe for large |z| (log-sum-exp form). Works on scalars and arrays.

    Returns:
        tuple: (value, derivative, second_derivative)
    """
    z = np.asarray(z, dtype=float)
    value = np.logaddexp(0.0, -z)
    derivative = -expit(-z)
    second = expit(z) * expit(-z)
    if value.ndim == 0:
        return float(value), float(derivative), float(second)
    return value, derivative, second


@dataclass(frozen=True)
class Dataset:
    """
    One node's local samples.

    Attributes:
        features: B x d matrix, every row with L2 norm <= 1
        labels: length-B vector in {-1, +1}
    """
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if features.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.size and not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        norms = np.linalg.norm(features, axis=1) if features.size else np.zeros(0)
        if norms.size and norms.max() > 1.0 + 1e-9:
            raise ValueError(f"feature rows must have norm <= 1, max is {norms.max():.6g}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self):
        return self.labels.shape[0]

    @property
    def dimension(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class ObjectiveParams:
    """
    Constants of the ERM objective.

    Attributes:
        C: Loss weight (C <= min_i B_i)
        rho: Regularization weight
        n_nodes: Network size N
        c1: Bound on the loss second derivative (1/4 for logistic)
    """
    C: float
    rho: float
    n_nodes: int
    c1: float = LOGISTIC_C1

    def __post_init__(self):
        if self.C < 0:
            raise ValueError(f"C must be >= 0, got {self.C}")
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.c1 <= 0:
            raise ValueError(f"c1 must be > 0, got {self.c1}")

    def check_batch_sizes(self, batch_sizes):
        """Raise ValueError unless C <= min_i B_i"""
        smallest = min(batch_sizes)
        if self.C > smallest:
            raise ValueError(f"C={self.C} exceeds the smallest local dataset ({smallest})")


def _check_dimension(f, d):
    f = np.asarray(f, dtype=float)
    if f.shape != (d,):
        raise DimensionMismatch(f"classifier has shape {f.shape}, expected ({d},)")
    return f


def objective_value(f, data, params):
    """O(f, D_i) for the logistic ERM objective"""
    f = _check_dimension(f, data.dimension)
    reg = 0.5 * (params.rho / params.n_nodes) * float(f @ f)
    if data.size == 0:
        return reg
    margins = data.labels * (data.features @ f)
    loss = float(np.logaddexp(0.0, -margins).sum())
    return (params.C / data.size) * loss + reg


def objective_gradient(f, data, params):
    """Gradient of objective_value with respect to f"""
    f = _check_dimension(f, data.dimension)
    grad = (params.rho / params.n_nodes) * f
    if data.size == 0:
        return grad
    margins = data.labels * (data.features @ f)
    weights = -expit(-margins) * data.labels
    return grad + (params.C / data.size) * (data.features.T @ weights)


def objective_hessian(f, data, params):
    """Hessian (C/B) X^T diag(L'') X + (rho/N) I"""
    f = _check_dimension(f, data.dimension)
    hess = (params.rho / params.n_nodes) * np.eye(data.dimension)
    if data.size == 0:
        return hess
    margins = data.labels * (data.features @ f)
    curvature = expit(margins) * expit(-margins)
    weighted = data.features * curvature[:, None]
    return hess + (params.C / data.size) * (data.features.T @ weighted)


def gradient_lipschitz_bound(data, params):
    """
    Closed-form gradient-Lipschitz constant M_i = C * c1 + rho / N.

    Holds because ||x|| <= 1 gives (C/B) sum L'' x x^T <= C c1 I.
    """
    return params.C * params.c1 + params.rho / params.n_nodes


class Objective(ABC):
    """
    Interface every per-node objective implements.

    Solvers only talk to objectives through these methods, so an
    instrumented wrapper can observe every data access.
    """

    @property
    @abstractmethod
    def dimension(self):
        """Length d of the classifier"""

    @abstractmethod
    def value(self, f):
        """Objective value at f"""

    @abstractmethod
    def gradient(self, f):
        """Gradient at f"""

    @abstractmethod
    def hessian(self, f):
        """Hessian at f (d x d)"""

    @abstractmethod
    def gradient_lipschitz(self):
        """Lipschitz constant M_i of the gradient"""

    @abstractmethod
    def strong_convexity(self):
        """Strong convexity modulus (>= 0)"""


class ERMObjective(Objective):
    """Regularized logistic ERM over one node's dataset"""

    def __init__(self, data, params):
        self.data = data
        self.params = params

    @property
    def dimension(self):
        return self.data.dimension

    def value(self, f):
        return objective_value(f, self.data, self.params)

    def gradient(self, f):
        return objective_gradient(f, self.data, self.params)

    def hessian(self, f):
        return objective_hessian(f, self.data, self.params)

    def gradient_lipschitz(self):
        return gradient_lipschitz_bound(self.data, self.params)

    def strong_convexity(self):
        return self.params.rho / self.params.n_nodes

    def training_loss(self, f):
        """Plain average logistic loss (no C, rho weighting)"""
        f = _check_dimension(f, self.dimension)
        if self.data.size == 0:
            return 0.0
        margins = self.data.labels * (self.data.features @ f)
        return float(np.logaddexp(0.0, -margins).mean())


class QuadraticObjective(Objective):
    """0.5 * ||f - a||^2"""

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float).reshape(-1)

    @property
    def dimension(self):
        return self.center.shape[0]

    def value(self, f):
        diff = _check_dimension(f, self.dimension) - self.center
        return 0.5 * float(diff @ diff)

    def gradient(self, f):
        return _check_dimension(f, self.dimension) - self.center

    def hessian(self, f):
        _check_dimension(f, self.dimension)
        return np.eye(self.dimension)

    def gradient_lipschitz(self):
        return 1.0

    def strong_convexity(self):
        return 1.0

    def training_loss(self, f):
        return self.value(f)


class InstrumentedObjective(Objective):
    """
    Wrapper counting every evaluation of the wrapped objective.

    The orchestrator reads `access_count` before and after each
    half-iteration, so recycled even updates can be shown to touch no data.
    """

    def __init__(self, inner):
        self.inner = inner
        self.counts = {"value": 0, "gradient": 0, "hessian": 0}
        self._lock = threading.Lock()

    def _bump(self, kind):
        with self._lock:
            self.counts[kind] += 1

    @property
    def access_count(self):
        with self._lock:
            return sum(self.counts.values())

    @property
    def dimension(self):
        return self.inner.dimension

    def value(self, f):
        self._bump("value")
        return self.inner.value(f)

    def gradient(self, f):
        self._bump("gradient")
        return self.inner.gradient(f)

    def hessian(self, f):
        self._bump("hessian")
        return self.inner.hessian(f)

    def gradient_lipschitz(self):
        return self.inner.gradient_lipschitz()

    def strong_convexity(self):
        return self.inner.strong_convexity()

    def training_loss(self, f):
        return self.inner.training_loss(f)

    def __getattr__(self, name):
        # data / params / center of the wrapped objective
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)


def unwrap(objective):
    """Strip instrumentation wrappers"""
    while isinstance(objective, InstrumentedObjective):
        objective = objective.inner
    return objective


def create_objectives(datasets=None, params=None, centers=None, instrument=False):
    """
    Build one objective per node.

    Args:
        datasets: List of Dataset (ERM objectives; requires params)
        params: ObjectiveParams for the ERM objective
        centers: List/array of a_i vectors (quadratic objectives)
        instrument: Wrap each objective in InstrumentedObjective

    Returns:
        list of Objective
    """
    if (datasets is None) == (centers is None):
        raise ValueError("pass exactly one of datasets or centers")

    if datasets is not None:
        if params is None:
            raise ValueError("ERM objectives need ObjectiveParams")
        if params.n_nodes != len(datasets):
            raise ValueError(f"params.n_nodes={params.n_nodes} but {len(datasets)} datasets")
        dims = {ds.dimension for ds in datasets}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent feature dimensions {sorted(dims)}")
        params.check_batch_sizes([ds.size for ds in datasets])
        objectives = [ERMObjective(ds, params) for ds in datasets]
    else:
        objectives = [QuadraticObjective(a) for a in centers]

    if instrument:
        objectives = [InstrumentedObjective(obj) for obj in objectives]
    return objectives


def centralized_solve(objectives, tol=1e-10, max_iter=200, warm_start=None):
    """
    Minimise sum_i O_i(f) on a single machine with damped Newton steps.

    Used as the reference optimum for consensus checks.

    Returns:
        np.ndarray: minimiser f* with ||sum_i grad O_i(f*)|| <= tol when converged
    """
    d = objectives[0].dimension
    f = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)

    def total_value(x):
        return sum(obj.value(x) for obj in objectives)

    value = total_value(f)
    for _ in range(max_iter):
        grad = sum(obj.gradient(f) for obj in objectives)
        grad_norm = float(np.linalg.norm(grad))
        if not np.isfinite(grad_norm):
            raise NonfiniteValue("non-finite gradient in centralized solve")
        if grad_norm <= tol:
            return f
        hess = sum(obj.hessian(f) for obj in objectives)
        step = -np.linalg.solve(hess, grad)
        t = 1.0
        while t > 1e-12:
            candidate = f + t * step
            cand_value = total_value(candidate)
            if cand_value <= value + 1e-4 * t * float(grad @ step):
                break
            cand_grad_norm = np.linalg.norm(sum(obj.gradient(candidate) for obj in objectives))
            if cand_grad_norm < grad_norm:
                break
            t *= 0.5
        f, value = candidate, cand_value
    logger.warning("centralized solve stopped after %d iterations", max_iter)
    return f
