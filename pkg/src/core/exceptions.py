"""Exception types raised by the simulator."""


class DeviceDomainError(ValueError):
    """Memory state or bias point outside the device model's domain."""


class CurrentRangeError(ValueError):
    """Requested cell current outside the open interval (i_floor, i_sat)."""


class ShapeError(ValueError):
    """Array, pattern or weight dimensions do not match."""


class InputRangeError(ValueError):
    """Input voltage outside the legal range of the array mode."""


class ProgrammingError(RuntimeError):
    """A tuning target cannot be reached inside the programmable window."""


class TrainingError(RuntimeError):
    """Reference training diverged."""


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class DataError(ValueError):
    """Inconsistent dataset contents (labels, counts)."""


class DegenerateScaleError(ValueError):
    """Weight matrix has no nonzero entry to normalize by."""


class MissingArtifactError(RuntimeError):
    """A pipeline stage needs an artifact produced by an earlier command."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
