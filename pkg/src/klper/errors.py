"""Exception types raised across the package."""


class KlperError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(KlperError, ValueError):
    pass


class StateError(KlperError, RuntimeError):
    pass


class ConfigError(KlperError, ValueError):
    pass


class DomainError(KlperError, ValueError):
    pass


class InsufficientSampleError(KlperError, ValueError):
    pass


class NumericalDegeneracyError(KlperError, ArithmeticError):
    pass


class UnderfullError(KlperError, ValueError):
    """Raised when a buffer holds fewer transitions than a batch needs."""


class EmptyPriorityError(KlperError, ValueError):
    pass


class DivergenceError(KlperError, ArithmeticError):
    """A loss or parameter became non-finite during an update."""


class SnapshotError(KlperError, IOError):
    pass
