"""Exception hierarchy shared across the package."""


class CloudGanError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CloudGanError):
    """Invalid layer/network/run configuration (bad shapes, bad schema)."""


class DataError(CloudGanError):
    """Dataset or file-level problems (orphans, size mismatches, bad assets)."""


class CheckpointError(DataError):
    """Checkpoint manifest/blob inconsistencies."""


class NumericalError(CloudGanError):
    """Non-finite values encountered during optimization."""


class CoverageError(CloudGanError):
    """Requested cloud coverage could not be reached; carries the achieved value."""

    def __init__(self, target: float, achieved: float):
        super().__init__(
            f"could not reach coverage {target:.3f}; achieved {achieved:.3f}"
        )
        self.target = target
        self.achieved = achieved
