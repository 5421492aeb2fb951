"""Exception hierarchy; the CLI maps each family onto an exit code."""


class SDALRError(Exception):
    exit_code = 3


class ConfigError(SDALRError, ValueError):
    exit_code = 1


class DataError(SDALRError, ValueError):
    exit_code = 2


class TrainingError(SDALRError, RuntimeError):
    exit_code = 3


class NoReliableLabelsError(TrainingError):
    """Raised when a pseudo-label refresh leaves no reliable sample at all."""

    def __init__(self, msg="no reliable pseudo-labels; lower ∂ (threshold)"):
        super().__init__(msg)
