"""Exception types shared across the package."""


class FormatError(ValueError):
    """File has an unknown or unsupported format."""


class CorruptionError(ValueError):
    """File is recognized but its payload is truncated or invalid."""


class DegenerateDataError(ValueError):
    """Data cannot support the requested fit (e.g. all pixels identical)."""


class GeometryError(ValueError):
    """Geometric parameters are inconsistent (e.g. crop margin >= spacing)."""
