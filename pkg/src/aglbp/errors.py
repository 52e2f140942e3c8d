"""Exception types shared across the library."""


class AglbpError(Exception):
    """Base class for errors raised by this package."""


class ImageFormatError(AglbpError):
    """Raster file or pixel layout the loader does not support."""


class DimensionError(AglbpError):
    """Input whose shape or size violates an operation's contract."""


class SamplingBoundsError(AglbpError):
    """Circular neighborhood would read outside the usable image area."""


class CapacityError(AglbpError):
    """Requested pattern width exceeds the supported table size."""


class DataError(AglbpError):
    """Manifest, dataset, or serialized artifact content is invalid."""
