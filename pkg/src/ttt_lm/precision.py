"""Global float precision: 64-bit by default, 32-bit opt-in.

The active dtype is fixed per process unless changed explicitly; the
TTT_PRECISION environment variable ({f32, f64}) selects it at import.
An invalid value is reported lazily so the CLI can turn it into a clean
config error instead of an import-time traceback.
"""
import os

import numpy as np

from .errors import ConfigError

PRECISIONS = {"f32": np.float32, "f64": np.float64}

_requested = os.environ.get("TTT_PRECISION", "f64")
_active = PRECISIONS.get(_requested)


def active_dtype() -> np.dtype:
    """Return the dtype new tensors are created with."""
    if _active is None:
        raise ConfigError(
            f"TTT_PRECISION must be one of {sorted(PRECISIONS)}, got {_requested!r}"
        )
    return _active


def precision_name() -> str:
    for name, dt in PRECISIONS.items():
        if dt is _active:
            return name
    raise ConfigError(f"invalid precision {_requested!r}")


def set_precision(name: str) -> None:
    global _active, _requested
    if name not in PRECISIONS:
        raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {name!r}")
    _requested = name
    _active = PRECISIONS[name]
