"""Exception hierarchy shared by every module."""


class GlassRecError(Exception):
    """Base class for all package errors."""


class DimensionError(GlassRecError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(GlassRecError, ValueError):
    """A call violated an operation's preconditions."""


class ParameterError(GlassRecError, ValueError):
    """A numeric parameter is outside its valid range."""


class ConfigurationError(GlassRecError, ValueError):
    """The requested run cannot be set up (empty pools, empty folds, ...)."""


class FormatError(GlassRecError, ValueError):
    """An input file is malformed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class UnknownElementError(GlassRecError, KeyError):
    """An element symbol is not known to the active table or network."""

    def __init__(self, symbol, context=""):
        self.symbol = symbol
        msg = f"unknown element {symbol!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class ConflictError(GlassRecError, ValueError):
    """The same entity was labelled both positive and negative."""


class DataError(GlassRecError, ValueError):
    """Input data is numerically degenerate."""
