"""Exception types shared across the package.

Everything raised on purpose derives from CovrenError so callers (and the
CLI) can catch one base class and map it to a nonzero exit code.
"""


class CovrenError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(CovrenError):
    """An argument value is outside its mathematical or physical domain."""


class ContractError(CovrenError):
    """Inputs violate a documented precondition (shapes, ordering, emptiness)."""


class FormatError(CovrenError):
    """A file or byte stream does not conform to its documented format."""


class VolumeFormatError(FormatError):
    """A .covv volume file is malformed."""


class MeshFormatError(FormatError):
    """An OBJ mesh file is malformed."""


class SceneFormatError(FormatError):
    """A scene description JSON is malformed."""


class DatasetError(CovrenError):
    """A dataset on disk is missing pieces or internally inconsistent."""


class PlacementError(CovrenError):
    """An object cannot be placed inside the requested bounds."""
