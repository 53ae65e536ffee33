"""Exception types raised across the package."""


class AdaptiveCIPError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AdaptiveCIPError, ValueError):
    """Invalid experiment or geometry settings."""


class GeometryError(AdaptiveCIPError, ValueError):
    """Mesh invariant violated or point location failed."""


class MismatchError(AdaptiveCIPError, ValueError):
    """Fields, meshes, faces or time grids that should agree do not."""


class StabilityError(AdaptiveCIPError, ValueError):
    """The time step violates the CFL rule."""


class DivergenceError(AdaptiveCIPError, FloatingPointError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message: str, step: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration
