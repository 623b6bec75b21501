"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import math
import numbers
from pathlib import Path

from .errors import ConfigError


def check_unit_interval(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_weights(w_n, w_v, tol=1e-9):
    """Validate the name/value weight pair; they must sum to one."""
    w_n = check_unit_interval(w_n, "w_n")
    w_v = check_unit_interval(w_v, "w_v")
    if abs(w_n + w_v - 1.0) > tol:
        raise ConfigError(f"w_n + w_v must equal 1, got {w_n} + {w_v} = {w_n + w_v}")
    return w_n, w_v


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(map(str, choices))}, got {value!r}")
    return value


def check_directory(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such directory: {path}")
    if not path.is_dir():
        raise NotADirectoryError(f"not a directory: {path}")
    return path


def check_metagraph(obj):
    # local import keeps this module dependency-free for the ingestion layer
    from .metagraph import MetaGraph

    if not isinstance(obj, MetaGraph):
        raise TypeError(f"expected a MetaGraph, got {type(obj).__name__}")
    return obj
