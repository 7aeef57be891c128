# Simulation base exceptions


class FedbenchError(Exception):
    """Base class for every error raised by the simulation framework."""

    pass


class ConfigurationError(FedbenchError):
    """Exception raised when a configuration value or model layout is invalid."""

    pass


class ShapeError(FedbenchError):
    """Exception raised when array dimensions or vector lengths do not agree."""

    pass


class ProtocolError(FedbenchError):
    """Exception raised when a round is driven with inputs the protocol does not allow."""

    pass


class NumericError(FedbenchError):
    """Exception raised when a gradient or parameter vector stops being finite."""

    pass


class IngestionError(FedbenchError):
    """Exception raised when a dataset file cannot be parsed."""

    pass


class ResultsWriteError(FedbenchError):
    """Exception raised when experiment results could not be written."""

    pass


class ResultsReadError(FedbenchError):
    """Exception raised when stored results of a run cannot be read back."""

    pass


class RunAborted(FedbenchError):
    """Exception raised when a run stops mid-way, carrying the rounds completed so far."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
