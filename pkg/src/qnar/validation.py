"""Small argument checks shared by the estimators and free functions."""
from __future__ import annotations

import math
import numbers


def check_scalar(x, name, *, target_type=numbers.Real, min_val=None, max_val=None,
                 include_min=True, include_max=True, exc=ValueError):
    """Validate a scalar's type and range, returning it unchanged.

    Mirrors :func:`sklearn.utils.check_scalar` but lets the caller choose the
    exception class so domain errors keep their own type.
    """
    if isinstance(x, bool) or not isinstance(x, target_type):
        raise TypeError(f"{name} must be {getattr(target_type, '__name__', target_type)}, "
                        f"got {type(x).__name__}")
    if isinstance(x, numbers.Real) and not math.isfinite(x):
        raise exc(f"{name} must be finite, got {x}")
    if min_val is not None:
        if x < min_val or (x == min_val and not include_min):
            op = ">=" if include_min else ">"
            raise exc(f"{name} must be {op} {min_val}, got {x}")
    if max_val is not None:
        if x > max_val or (x == max_val and not include_max):
            op = "<=" if include_max else "<"
            raise exc(f"{name} must be {op} {max_val}, got {x}")
    return x


def check_alpha(alpha):
    return check_scalar(alpha, "alpha", min_val=0.0, max_val=1.0,
                        include_min=False, include_max=False)


def check_decay(c, name="c"):
    return check_scalar(c, name, min_val=0.0, max_val=1.0)


def check_probability(p, name="p"):
    return check_scalar(p, name, min_val=0.0, max_val=1.0)


def check_positive_int(n, name, minimum=1):
    return check_scalar(n, name, target_type=numbers.Integral, min_val=minimum)


def check_tol(tol):
    return check_scalar(tol, "tol", min_val=0.0, include_min=False)
