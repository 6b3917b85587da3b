"""Exception hierarchy shared by all modules."""


class CompFunError(Exception):
    """Base class for every error raised by this package."""


class StructureError(CompFunError, ValueError):
    """Malformed graph: dangling ids, cycles, bad layering or slot counts."""


class ShapeError(CompFunError, ValueError):
    """Input/output arities of operands do not fit together."""


class DomainError(CompFunError, ValueError):
    """A point lies outside the input hypercube of a function."""


class CompatibilityError(CompFunError, ValueError):
    """A node received a value outside its declared domain during evaluation."""

    def __init__(self, message, node=None, source=None):
        super().__init__(message)
        self.node = node
        self.source = source


class RangeError(CompFunError, ValueError):
    """A sampled range does not fit inside the domain that must contain it."""


class DivisionSafetyError(CompFunError, ValueError):
    """The denominator of a division has a sampled zero or sign change."""


class MergeBlockedError(CompFunError, ValueError):
    """A hidden linear node feeds a general node that is not a neuron."""


class UnsupportedError(CompFunError, ValueError):
    """The requested quantity is not defined for this node or configuration."""


class DomainEscapeError(CompFunError, ValueError):
    """Iterates of a map left the domain; ``index`` names the offending step."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class BoundInvalidError(CompFunError, ValueError):
    """Preconditions of a closed-form bound are violated."""


class MissingNetError(CompFunError, KeyError):
    """A general node has no fitted network during assembly."""


class ConfigError(CompFunError, ValueError):
    """Invalid configuration value."""


class ContractionError(CompFunError, ValueError):
    """A step size fails the sampled contraction test."""


class InvarianceError(CompFunError, ValueError):
    """Fixed-point iterates left the admissible control ball."""


class ConvexityError(CompFunError, ValueError):
    """The sampled Hessian is not positive definite."""


class SchemaError(CompFunError, ValueError):
    """A DAG file does not match the on-disk format."""


class BudgetExceededError(CompFunError, RuntimeError):
    """An experiment exceeded its configured node or time budget."""
