"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`EvoError`;
the CLI maps the four families below to exit codes.
"""


class EvoError(Exception):
    """Base class."""

    exit_code = 1


class ConfigInvalid(EvoError):
    exit_code = 3


class DataError(EvoError):
    exit_code = 4


class NumericalFailure(EvoError):
    exit_code = 5


# tensor core
class ShapeMismatch(EvoError, ValueError):
    pass


class UnknownKind(EvoError, ValueError):
    pass


class NotScalarLoss(EvoError, ValueError):
    pass


class DetachedLoss(EvoError, RuntimeError):
    pass


class NonFiniteOutput(NumericalFailure):
    pass


class NonFiniteInput(NumericalFailure):
    pass


# model construction / routing
class BadConfig(ConfigInvalid):
    pass


class DuplicateModality(EvoError, KeyError):
    pass


class UnknownModality(EvoError, KeyError):
    pass


class EmptyFeatures(DataError):
    pass


class DuplicateAdapter(EvoError, KeyError):
    pass


class UnknownAdapter(EvoError, KeyError):
    pass


class RankTooLarge(EvoError, ValueError):
    pass


class WrongModalityCount(EvoError, ValueError):
    pass


class UnsupportedArity(EvoError, ValueError):
    pass


# survival
class LengthMismatch(DataError):
    pass


class NonPositiveTime(DataError):
    pass


class NoPermissiblePairs(DataError):
    pass


class EmptyInput(DataError):
    pass


# continual
class MissingModalityInCohort(DataError):
    pass


class LineageMismatch(EvoError, ValueError):
    pass


# data
class BadManifest(DataError):
    pass


class CorruptFile(DataError):
    pass


class VersionMismatch(DataError):
    pass
