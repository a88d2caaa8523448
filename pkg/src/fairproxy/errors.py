"""Exception types raised across the package."""


class FairProxyError(Exception):
    """Base class for all package errors."""


class SchemaError(FairProxyError, KeyError):
    """A declared column is missing from the input file."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(FairProxyError, ValueError):
    """Input values could not be parsed (e.g. non-finite numerics)."""


class DegenerateGroupError(FairProxyError, ValueError):
    """A sensitive group has no rows, or there is only one group."""


class DegenerateSplitError(FairProxyError, RuntimeError):
    """No train/test partition keeping every group on both sides was found."""


class DegenerateVertexError(FairProxyError, ValueError):
    """A tree vertex carries zero total sample weight."""


class DomainError(FairProxyError, ValueError):
    """A formula was evaluated outside of its domain."""


class NumericalError(FairProxyError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ZeroMassLeafError(FairProxyError, ValueError):
    """A plan puts sampling mass on a leaf that no sample reaches."""


class DegeneratePlanError(FairProxyError, ValueError):
    """Every coefficient of the plan is zero, so nothing would be accepted."""


class ContractError(FairProxyError, ValueError):
    """Inputs violate a function contract (shape, range, leaf index)."""


class ConfigError(FairProxyError, ValueError):
    """An experiment configuration is invalid."""
