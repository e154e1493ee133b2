"""Exception types shared across the package."""


class SpotError(Exception):
    """Base class for all boundary-spot errors."""


# geometry
class DegeneratePolyline(SpotError):
    pass


class BadArity(SpotError):
    pass


class DegenerateInput(SpotError):
    pass


class ArityMismatch(SpotError):
    pass


class DegenerateBox(SpotError):
    pass


class SingularMatrix(SpotError):
    pass


class DegeneratePolygon(SpotError):
    pass


# rectify
class SingularSystem(SpotError):
    pass


# micronet / model
class ShapeMismatch(SpotError):
    pass


class InsufficientStatistics(SpotError):
    pass


class MissingGradient(SpotError):
    pass


class IndexOutOfRange(SpotError):
    pass


class EmptyTarget(SpotError):
    pass


class EmptyDataset(SpotError):
    pass


# data
class BaselineTooShort(SpotError):
    pass


class PlacementFailure(SpotError):
    pass


# eval
class EmptyLexicon(SpotError):
    pass


class CheckpointError(SpotError):
    pass
