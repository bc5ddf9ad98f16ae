"""Exception hierarchy shared by every cadspot module."""


class CadSpotError(Exception):
    """Base class for all cadspot errors."""


class DegeneratePrimitive(CadSpotError, ValueError):
    pass


class InvalidPrimitive(CadSpotError, ValueError):
    pass


class EmptyDrawing(CadSpotError, ValueError):
    pass


class TooManyVertices(CadSpotError, ValueError):
    def __init__(self, n: int, limit: int = 4096):
        super().__init__(f"drawing has {n} vertices, limit is {limit}")
        self.n = n
        self.limit = limit


class ShapeMismatch(CadSpotError, ValueError):
    pass


class NonScalarLoss(CadSpotError, ValueError):
    pass


class NonFiniteValue(CadSpotError, FloatingPointError):
    pass


class MismatchedEdgeLists(CadSpotError, ValueError):
    pass


class OverlappingInstances(CadSpotError, ValueError):
    pass


class ParseError(CadSpotError, ValueError):
    """Malformed record, manifest or prediction file.

    ``where`` names the offending field (and line, when known).
    """

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


class VersionMismatch(CadSpotError, ValueError):
    pass


class ConfigMismatch(CadSpotError, ValueError):
    pass


class ConfigError(CadSpotError, ValueError):
    """Invalid configuration file or override."""
