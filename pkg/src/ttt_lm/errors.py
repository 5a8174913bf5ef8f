"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError (and subclasses)
exit 2, NumericAbort exit 3, verification failures exit 1.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class FiniteError(ValueError):
    """A tensor was constructed with NaN or Inf while checked mode is on."""


class TapeError(RuntimeError):
    """Misuse of the autodiff tape (foreign node, double backward, ...)."""


class ConfigError(ValueError):
    """Invalid configuration: bad JSON, unknown key, out-of-range value."""


class DataError(ConfigError):
    """Corpus file missing, too small, or otherwise unusable."""


class CheckpointError(ConfigError):
    """Checkpoint file corrupt or inconsistent with the active config."""


class NumericAbort(RuntimeError):
    """Training or benchmarking hit non-finite values and stopped."""


class VerificationError(RuntimeError):
    """An equivalence or correctness check failed (benchmarked paths must
    agree before timing; verify suites raise this on any failed property)."""
