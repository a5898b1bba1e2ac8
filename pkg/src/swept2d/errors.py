"""Exception hierarchy shared by every module."""


class SweptError(Exception):
    """Base class for all errors raised by swept2d."""


class ValidationError(SweptError, ValueError):
    """A parameter failed validation. ``field`` names the offending input."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class KernelContractError(SweptError):
    """A kernel or its data disagreed with the declared arity schedule."""


class NumericError(SweptError, ArithmeticError):
    """A kernel produced a non-finite or non-physical value."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} at {location}"
        super().__init__(message)


class CodecError(SweptError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class TransportError(SweptError, OSError):
    pass


class ProtocolError(SweptError):
    """A received message does not match what the local state expects."""
