"""Exception hierarchy shared across the package.

Every error raised on purpose derives from ErgodicMMError so callers can
catch library failures without catching programming mistakes.
"""


class ErgodicMMError(Exception):
    """Base class for all library errors."""


class DomainError(ErgodicMMError, ValueError):
    """An argument is outside the mathematical domain of the operation."""


class StructureError(ErgodicMMError, ValueError):
    """An array argument has the wrong shape, sign pattern, or sparsity."""


class DegenerateGridError(DomainError):
    """The inventory grid has a single state and that was not explicitly allowed."""


class IrreducibilityError(StructureError):
    """A rate matrix has a zero interior rate, so no unique equilibrium exists."""


class ConvergenceError(ErgodicMMError, RuntimeError):
    """An iterative or numerical procedure failed to reach its tolerance."""


class OrderingError(ErgodicMMError, ValueError):
    """Observations were supplied out of time order."""


class PolicyError(ErgodicMMError, ValueError):
    """A quoting policy returned an invalid depth."""


class ConfigError(ErgodicMMError, ValueError):
    """A configuration file or override is malformed or inconsistent."""
