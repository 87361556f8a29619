"""Exceptions raised by :mod:`epiunwarp`."""


class UnwarpError(Exception):
    pass


class IoError(UnwarpError, OSError):
    pass


class ConfigError(UnwarpError, ValueError):
    pass


class FormatError(UnwarpError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedDatatype(FormatError):
    pass


class TruncatedData(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class GeometryError(UnwarpError, ValueError):
    pass


class GridMismatch(GeometryError):
    pass


class GridTooSmall(GeometryError):
    pass


class ShapeMismatch(GeometryError):
    pass


class IndivisibleExtent(GeometryError):
    pass


class DataError(UnwarpError, ValueError):
    pass


class DegenerateVolume(DataError):
    pass


class DegenerateIntensity(DataError):
    pass


class DegenerateSample(DataError):
    pass


class EmptyMask(DataError):
    pass


class NonInvertibleField(DataError):
    pass


class SpecInvalid(DataError):
    pass


class TooFewSubjects(DataError):
    pass


class NonFiniteGradient(DataError):
    pass


class NonFiniteLoss(DataError):
    pass


class NonFiniteValues(DataError):
    pass
