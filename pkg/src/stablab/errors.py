"""Exception hierarchy and the exit codes the command line maps them to."""

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INVARIANT = 3


class StabLabError(Exception):
    exit_code = EXIT_NUMERICAL


class ConfigError(StabLabError, ValueError):
    """Bad input: malformed config, violated precondition, mismatched objects."""

    exit_code = EXIT_CONFIG


class GeometryError(ConfigError):
    pass


class SolverError(StabLabError):
    """A numerical stage failed; ``stage`` names it for the diagnostic."""

    def __init__(self, message, stage="solve", **info):
        super().__init__(message)
        self.stage = stage
        self.info = info


class ResonanceError(SolverError):
    def __init__(self, message, gap=None, threshold=None):
        super().__init__(message, stage="spectral-gap", gap=gap, threshold=threshold)
        self.gap = gap
        self.threshold = threshold


class CGOError(SolverError):
    def __init__(self, message, **info):
        super().__init__(message, stage="cgo", **info)


class InvariantViolation(StabLabError):
    exit_code = EXIT_INVARIANT
