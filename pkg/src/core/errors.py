"""
Exception hierarchy for the NTN traffic forecasting toolkit

Every input, configuration or shape problem raises a ValidationError subclass
(the CLI exits with status 1); everything else is a runtime failure (status 2).
"""


class NTNForecastError(Exception):
    """Base class for all errors raised by this package"""


class ValidationError(NTNForecastError, ValueError):
    """Invalid input data, configuration or call arguments"""


# Data ingestion

class EmptyDataset(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class UnexpectedColumn(ValidationError):
    pass


class NonHourlyGap(ValidationError):
    pass


class NegativeValue(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class UnequalSeriesLength(ValidationError):
    pass


class MisalignedSeries(ValidationError):
    pass


class WindowTooLong(ValidationError):
    pass


# Models

class ShapeMismatch(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class NonPositiveSigma(ValidationError):
    pass


class InvalidProbability(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


# Decisions, simulation and reporting

class IncompatiblePolicy(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class EmptyLog(ValidationError):
    pass


class TrainingDiverged(NTNForecastError, RuntimeError):
    """Raised when a training loss becomes non-finite"""
