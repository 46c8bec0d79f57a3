"""Exception types raised across the package."""


class HetViTError(Exception):
    """Base class for all package errors."""


class RangeOverflow(HetViTError, ValueError):
    pass


class PartyMismatch(HetViTError, ValueError):
    pass


class TripleReuse(HetViTError, RuntimeError):
    pass


class ShapeMismatch(HetViTError, ValueError):
    pass


class MissingParam(HetViTError, ValueError):
    pass


class NotScalar(HetViTError, ValueError):
    pass


class InvalidConfig(HetViTError, ValueError):
    pass


class SiteStillNonlinear(HetViTError, ValueError):
    pass


class NotFused(HetViTError, ValueError):
    pass


class CorruptFile(HetViTError, IOError):
    pass


class VersionMismatch(HetViTError, ValueError):
    pass


class DimMismatch(HetViTError, ValueError):
    pass


class MissingCostEntry(HetViTError, KeyError):
    pass


class ZeroLatency(HetViTError, ZeroDivisionError):
    pass


class UnknownProfile(HetViTError, ValueError):
    pass


class TeacherMismatch(HetViTError, ValueError):
    pass


class MissingArtifact(HetViTError, FileNotFoundError):
    pass
