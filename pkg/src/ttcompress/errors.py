"""Exception hierarchy.

Every error raised by this package derives from :class:`TTCompressError`,
so callers can catch the whole family with one clause.  Where a builtin
exception type is the natural fit (index out of range, bad value), the
specific class also inherits from it.
"""


class TTCompressError(Exception):
    """Base class for all errors raised by this package."""


class IndexRangeError(TTCompressError, IndexError):
    """A multi-index, axis or region selector is outside its valid range."""


class ShapeError(TTCompressError, ValueError):
    """Dimension lists are inconsistent (size mismatch, bad extents)."""


class DataError(TTCompressError, ValueError):
    """Input data is unusable (non-finite entries, wrong dtype width)."""


class DegenerateDataError(TTCompressError, ValueError):
    """A metric is undefined for this input (zero range, zero variance)."""


class PlanError(TTCompressError, ValueError):
    """A tensorization plan is invalid or inconsistent with the data."""


class StructureError(TTCompressError, ValueError):
    """A tensor-train rank chain or segment structure is inconsistent."""


class MergeError(TTCompressError, ValueError):
    """Segments cannot be merged (incompatible shapes, gaps in time)."""


class CapacityError(TTCompressError, MemoryError):
    """An operation would materialize more entries than the configured cap."""


class FormatError(TTCompressError, ValueError):
    """A binary archive or raw tensor file is malformed."""


class IngestionError(TTCompressError, ValueError):
    """A snapshot run directory is malformed or internally inconsistent."""


class ConfigError(TTCompressError, ValueError):
    """A configuration value or tolerance budget is invalid."""
