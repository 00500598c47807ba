"""Exception hierarchy shared across the package."""


class LightPointError(Exception):
    pass


# core
class PointCloudError(LightPointError, ValueError):
    pass


class EmptyCloud(PointCloudError):
    pass


class NonFiniteCoordinate(PointCloudError):
    def __init__(self, index):
        super().__init__(f"non-finite coordinate at point {index}")
        self.index = index


class LabelLengthMismatch(PointCloudError):
    pass


class NegativeLabel(PointCloudError):
    pass


class ConfigError(LightPointError, ValueError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


# autodiff
class ShapeMismatch(LightPointError, ValueError):
    pass


class DomainError(LightPointError, ValueError):
    pass


class NotScalarLoss(LightPointError, ValueError):
    pass


# sampling / surface
class BadSampleCount(LightPointError, ValueError):
    pass


class BadNeighborCount(LightPointError, ValueError):
    pass


class IndexOutOfRange(LightPointError, IndexError):
    pass


class TooFewNeighbors(LightPointError, ValueError):
    pass


class NotSymmetric(LightPointError, ValueError):
    pass


# heads
class BadLabel(LightPointError, ValueError):
    pass


class LengthMismatch(LightPointError, ValueError):
    pass


# data
class ParseError(LightPointError, ValueError):
    def __init__(self, line, message="malformed line"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class VersionMismatch(LightPointError, ValueError):
    pass


class CheckpointShapeMismatch(ShapeMismatch):
    def __init__(self, name, expected, found):
        super().__init__(f"parameter {name!r}: expected shape {expected}, found {found}")
        self.name = name
