"""Exception types raised across the package."""


class DQNNError(Exception):
    """Base class for all package errors."""


class SizeError(DQNNError, ValueError):
    """Qubit count or register size out of the supported range."""


class UnitarityError(DQNNError, ValueError):
    """A matrix that must be unitary is not."""


class QubitIndexError(DQNNError, IndexError):
    """Bad qubit index, label/size mismatch or dimension mismatch."""


class DomainError(DQNNError, ValueError):
    """Non-finite angle or a negative quantity where none is allowed."""


class ShapeError(DQNNError, ValueError):
    """Circuit family cannot be built with the requested shape."""


class RuleMismatchError(DQNNError, ValueError):
    """Shift rule applied to a parameter tagged with a different rule."""


class FamilyError(DQNNError, ValueError):
    """Circuit contains gates outside the Hamming-weight-preserving family."""


class NormalizationError(DQNNError, ValueError):
    """Input vector is not unit norm (or is zero)."""


class ConfigError(DQNNError, ValueError):
    """Invalid experiment configuration."""


class FormatError(DQNNError, ValueError):
    """Malformed binary input file."""


class UsageError(DQNNError, ValueError):
    """API called without a required argument."""
