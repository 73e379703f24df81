"""Exception hierarchy shared across the package."""


class SphContourError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SphContourError, ValueError):
    """An argument violates an operation's precondition."""


class EmptyMaskError(InvalidInputError):
    """A mask or voxel set that must be non-empty is empty."""


class DegeneratePointError(InvalidInputError):
    """A point coincides with the spherical center, so angles are undefined."""


class CorruptFileError(SphContourError):
    """A container file has a malformed header or inconsistent payload."""


class ParityError(SphContourError):
    """Ray-parity voxelization found rays with an odd crossing count.

    Raised for meshes that are not watertight. ``ray_count`` holds the
    number of offending rays.
    """

    def __init__(self, ray_count: int):
        self.ray_count = ray_count
        super().__init__(
            f"mesh is not watertight: {ray_count} rays crossed an odd "
            f"number of triangles"
        )


class GenerationError(SphContourError):
    """Synthetic data generation could not satisfy its constraints."""


class NumericalError(SphContourError):
    """A numerical routine failed to converge or produced non-finite output."""
