"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: config errors exit 2, data errors 3,
predictor/protocol errors 4, numerical failures 5.
"""


class GeoShapError(Exception):
    """Base class for all package errors."""


class ConfigError(GeoShapError):
    """Invalid configuration: bad specs, unknown options, inconsistent arity."""


class CapacityError(ConfigError):
    """Problem size exceeds a hard cap (coalition enumeration is exponential)."""


class DataError(GeoShapError):
    """Malformed or out-of-contract input data."""


class PredictorError(GeoShapError):
    """A prediction function failed or returned out-of-contract output."""


class ProtocolError(PredictorError):
    """The bridge wire protocol was violated (bad frame, handshake mismatch)."""


class NumericalError(GeoShapError):
    """A numerical procedure cannot produce a trustworthy result."""


class RankDeficiencyError(NumericalError):
    """A least-squares system is rank deficient.

    ``columns`` holds the offending column labels so callers can report which
    unknowns are not identifiable.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)
