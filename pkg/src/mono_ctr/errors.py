"""Exception hierarchy shared by all mono_ctr modules."""


class MonoCtrError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(MonoCtrError, ValueError):
    pass


class NonFiniteError(MonoCtrError, ValueError):
    pass


class DuplicateName(MonoCtrError, ValueError):
    pass


# feature space
class DegenerateFeature(MonoCtrError, ValueError):
    pass


class InvalidBucketCount(MonoCtrError, ValueError):
    pass


class ZeroVariance(MonoCtrError, ValueError):
    pass


class IndexOutOfRange(MonoCtrError, IndexError):
    pass


class MissingValue(MonoCtrError, ValueError):
    pass


class ParseError(MonoCtrError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(MonoCtrError, ValueError):
    pass


class SchemaMismatch(SchemaError):
    pass


class EmptyFile(MonoCtrError, ValueError):
    pass


# models
class UnsupportedKind(MonoCtrError, ValueError):
    pass


# importance / synthesis
class EmptyProbeSet(MonoCtrError, ValueError):
    pass


class NoEligibleFields(MonoCtrError, ValueError):
    pass


class IneligibleField(MonoCtrError, ValueError):
    pass


# training
class NonFiniteLoss(MonoCtrError, RuntimeError):
    pass


# metrics
class SingleClass(MonoCtrError, ValueError):
    pass


class NoComparableUsers(MonoCtrError, ValueError):
    pass


class RandomBase(MonoCtrError, ValueError):
    pass


class EmptyDataset(MonoCtrError, ValueError):
    pass


# persistence
class VersionMismatch(MonoCtrError, ValueError):
    pass


class CorruptFile(MonoCtrError, ValueError):
    pass


class ConfigError(MonoCtrError, ValueError):
    pass
