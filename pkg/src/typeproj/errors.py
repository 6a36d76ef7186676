"""Exception hierarchy shared by the library and the CLI."""


class TypeprojError(Exception):
    """Base class for all library errors."""


class ValidationError(TypeprojError, ValueError):
    """Malformed input: bad pmf, mismatched alphabets, bad config."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class AlphabetMismatchError(ValidationError):
    pass


class InfeasibleError(TypeprojError):
    """A constraint set, conditioning event or estimator has no feasible point.

    ``certificate`` holds a separating direction when one was computed.
    """

    def __init__(self, message, certificate=None, margin=None):
        super().__init__(message)
        self.certificate = certificate
        self.margin = margin


class ResourceCapError(TypeprojError):
    def __init__(self, message, count=None, cap=None):
        super().__init__(message)
        self.count = count
        self.cap = cap


class ConvergenceError(TypeprojError):
    pass
