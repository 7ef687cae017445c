"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A network or demand configuration violates an invariant."""


class DomainError(ValueError):
    """A numeric argument is outside the domain of an operation."""


class RangeError(ValueError):
    """An action component or scale factor is out of range."""


class LengthError(ValueError):
    """Sequence arguments have mismatched lengths."""


class ShapeError(ValueError):
    """An array has the wrong shape for the policy network."""


class NonFiniteError(ArithmeticError):
    """A loss or gradient became non-finite; the update was aborted."""


class EpisodeDone(RuntimeError):
    """step() was called on an episode that already finished."""


class CheckpointError(IOError):
    """A checkpoint file is missing, corrupt, or incompatible."""


class MismatchError(ValueError):
    """Benchmark reports do not cover the same demand scales."""


class FormatError(ValueError):
    """An input record could not be parsed."""


class DegenerateError(ValueError):
    """Clustering input admits no non-trivial partition."""
