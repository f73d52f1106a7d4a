"""Exception types shared across the package."""


class MbgnnError(Exception):
    pass


class ShapeError(MbgnnError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(MbgnnError, ValueError):
    """A scalar or structural parameter is outside its allowed range."""


class DataError(MbgnnError, ValueError):
    """Input data is malformed or inconsistent."""


class ContractError(MbgnnError, RuntimeError):
    """An operation was called in a state its contract does not allow."""
