"""Exception types raised across the package."""


class InstamaskError(Exception):
    """Base class for package errors."""


class BadMagic(InstamaskError):
    """File is not an accepted NPY v1.0 container."""


class UnsupportedDtype(InstamaskError):
    """Tensor dtype is not little-endian float32."""


class UnsupportedOrder(InstamaskError):
    """Tensor is stored column-major."""


class RankMismatch(InstamaskError):
    """Tensor rank differs from 3."""


class Truncated(InstamaskError):
    """Payload shorter than the header promises."""


class IoFailure(InstamaskError):
    """Underlying OS read/write failed."""


class InvalidFeatureMap(InstamaskError):
    """Feature grid violates its invariants (shape, dtype, finiteness)."""


class SchemaError(InstamaskError):
    """Structured-text document does not match the expected schema."""


class DuplicateImageId(SchemaError):
    """Manifest lists the same image id twice."""


class MalformedRle(InstamaskError):
    """RLE string has a bad chunk sequence or impossible counts."""


class LengthMismatch(InstamaskError):
    """RLE run counts do not sum to height * width."""


class DegeneratePolygon(InstamaskError):
    """Polygon with fewer than three vertices."""


class DimensionMismatch(InstamaskError):
    """Masks of different sizes combined."""


class NotSymmetric(InstamaskError):
    """Matrix is not symmetric within tolerance."""


class NoConvergence(InstamaskError):
    """Eigensolver hit its iteration cap."""


class GridMismatch(InstamaskError):
    """Patch grid does not cover the stated image size."""


class EmptyMask(InstamaskError):
    """Operation requires a non-empty mask."""
