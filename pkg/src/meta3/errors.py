"""Exception types shared across the package."""


class Meta3Error(Exception):
    """Base class for all package errors."""


class DataError(Meta3Error):
    """Invalid input data (CLI exit code 2)."""


class EmptyCluster(DataError):
    pass


class ArmSizeNonPositive(DataError):
    pass


class RankDeficientDesign(DataError):
    pass


class DegreesOfFreedomTooSmall(DataError):
    pass


class NumericError(Meta3Error):
    """Numeric failure inside an estimator (CLI exit code 3)."""


class SingularNormalMatrix(NumericError):
    pass


class NotSymmetric(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class NonFiniteLikelihood(NumericError):
    pass


class BracketingFailed(NumericError):
    pass


class NotConverged(NumericError):
    """A confidence-limit search failed; reported per component."""

