"""Exception types shared across the toolkit."""


class GeomevalError(ValueError):
    """Base class for all toolkit errors."""


class ShapeMismatchError(GeomevalError):
    """Inputs whose shapes are required to agree do not."""


class EmptyOverlapError(GeomevalError):
    """No valid pixel/point survives mask intersection."""


class DegenerateInputError(GeomevalError):
    """Input configuration leaves the solution underdetermined."""


class NoCorrespondenceError(GeomevalError):
    """ICP found zero pairs within the correspondence cap at the first iteration."""


class NoEdgesError(GeomevalError):
    """Edge-based metric got a map with zero detected edge pixels."""


class InsufficientPointsError(GeomevalError):
    """Point cloud too small for the requested neighborhood operation."""
