"""Exception hierarchy shared by all fairsampler modules."""


class FairSamplerError(Exception):
    """Base class for every error raised by the package."""


class InputError(FairSamplerError, ValueError):
    """Bad user input: malformed files, unknown names, invalid arguments."""


class MalformedRecord(InputError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class SchemaViolation(InputError):
    def __init__(self, row, attribute, reason):
        self.row = row
        self.attribute = attribute
        super().__init__(f"row {row}, attribute {attribute!r}: {reason}")


class DuplicateStudentId(InputError):
    pass


class InconsistentFeatureDim(InputError):
    pass


class UnknownAttribute(InputError):
    pass


class ClusterNotAssigned(InputError):
    pass


class CoverageMismatch(InputError):
    pass


class EmptyDataset(InputError):
    pass


class EmptyGroups(InputError):
    pass


class PlanGroupMismatch(InputError):
    pass


class TargetBelowOriginal(InputError):
    pass


class KTooLarge(InputError):
    pass


class DegenerateData(InputError):
    pass


class SingleClassFold(FairSamplerError):
    pass


class NonFiniteLoss(FairSamplerError, FloatingPointError):
    pass


class DimensionMismatch(InputError):
    pass


class TooFewRecords(InputError):
    pass


class InvalidK(TooFewRecords):
    pass


class SingleClass(InputError):
    pass


class AlignmentMismatch(InputError):
    pass


class EmptyCandidates(InputError):
    pass


class LeakageError(FairSamplerError, AssertionError):
    """A student id appears in both the training and the test side of a fold."""


class InvalidConfig(InputError):
    pass


class UnknownPreset(InputError):
    pass


class MissingArtifacts(InputError):
    pass
