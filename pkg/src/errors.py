"""
Error Types

Every failure raised by the toolkit derives from AdmmError so entry points
can report them uniformly. Errors describing bad input also derive from
ValueError.
"""


class AdmmError(Exception):
    """Base class for all toolkit errors"""


# Topology

class DisconnectedGraph(AdmmError, ValueError):
    """Network has at least one node unreachable from node 0"""


class InvalidEdge(AdmmError, ValueError):
    """Self-loop, out-of-range endpoint or duplicate edge"""


# Objectives and solvers

class DimensionMismatch(AdmmError, ValueError):
    """Classifier dimension does not match the feature dimension"""


class NonfiniteValue(AdmmError, ArithmeticError):
    """An iterate, gradient or objective value became NaN/inf"""


class MaxIterationsExceeded(AdmmError):
    """
    Inner solver hit its iteration cap before reaching the tolerance.

    Attributes:
        best: Best iterate found (smallest subproblem gradient norm)
        grad_norm: Gradient norm at `best`
    """

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class MissingCache(AdmmError, RuntimeError):
    """Even (recycled) update attempted before the matching odd update"""


class ScheduleViolation(AdmmError, ValueError):
    """Penalty schedule is non-positive, decreasing, or not constant where required"""


class UnsupportedObjective(AdmmError, TypeError):
    """Operation only defined for the ERM objective was given another one"""


# Analysis

class NonfiniteInput(AdmmError, ValueError):
    """Condition checker received NaN/inf matrix entries"""


class InfeasibleTarget(AdmmError, ValueError):
    """Accuracy target tau does not exceed the convergence gap Delta"""


class InfeasiblePrivacy(AdmmError, ValueError):
    """Noise level makes the privacy target or sample bound unattainable"""


# Data pipeline

class ParseError(AdmmError, ValueError):
    """Malformed CSV content; `row` and `column` locate the problem when known"""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaMismatch(AdmmError, ValueError):
    """CSV header does not agree with the schema"""


class EmptyAfterFiltering(AdmmError, ValueError):
    """No rows survived missing-value filtering"""


class UnmappableLabel(AdmmError, ValueError):
    """Label value absent from the schema's label mapping"""


class TooFewSamples(AdmmError, ValueError):
    """Not enough training rows to give every node at least one sample"""


# Experiments

class EmptyTestSet(AdmmError, ValueError):
    """Error rate requested on an empty test set"""


class ConfigError(AdmmError, ValueError):
    """Invalid experiment configuration; `field` is the dotted path"""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
