class ConfflowError(ValueError):
    """Base class for input errors raised by this package."""


class ParseError(ConfflowError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfflowError):
    def __init__(self, message, molecule_id=None):
        self.molecule_id = molecule_id
        if molecule_id is not None:
            message = f"molecule {molecule_id!r}: {message}"
        super().__init__(message)


class CheckpointError(ConfflowError):
    pass


class NonFiniteError(FloatingPointError):
    """A loss, gradient or integration state stopped being finite."""
