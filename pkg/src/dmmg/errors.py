"""Exception types shared across the package."""


class DMMGError(Exception):
    """Base class; ``kind`` is the short tag the CLI prints."""

    kind = "error"


class DimensionError(DMMGError, ValueError):
    kind = "dimension"


class ConfigError(DMMGError, ValueError):
    kind = "config"


class ContractError(DMMGError, ValueError):
    kind = "contract"


class DegenerateInputError(DMMGError, ValueError):
    kind = "degenerate"


class NumericError(DMMGError, ArithmeticError):
    kind = "numeric"


class FormatError(DMMGError, ValueError):
    kind = "format"
