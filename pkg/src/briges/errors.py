"""Exception types shared across the package."""


class BrigesError(Exception):
    pass


class DimensionError(BrigesError, ValueError):
    """Operand shapes do not agree."""


class ParameterError(BrigesError, ValueError):
    """An argument is outside its legal range."""


class DataError(BrigesError, ValueError):
    """Input data violates a value constraint (e.g. non-positive depth)."""


class DegenerateInputError(BrigesError, ValueError):
    """A normalization or fit is undefined for the given data."""


class ContractError(BrigesError, RuntimeError):
    """A caller broke an API contract (non-scalar backward, gradient coverage...)."""


class NumericError(BrigesError, ArithmeticError):
    """A computation produced a non-finite value."""


class FormatError(BrigesError, OSError):
    """A file is truncated, has a bad magic/header, or fails its digest."""


class ConfigError(BrigesError, ValueError):
    """A config file entry is unknown or malformed; ``key`` names the entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
