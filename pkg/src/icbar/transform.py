"""Logarithmic transformation family and its derivatives.

``G(x) = log(1 + r x) / r`` for ``r > 0`` and ``G(x) = x`` for ``r = 0``.
``r = 0`` gives proportional hazards, ``r = 1`` proportional odds.

All functions accept scalars or numpy arrays. The public functions validate
their argument; the underscore-prefixed versions taking a bare float ``r``
skip validation and are what the likelihood code calls in its inner loops.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# below this, (1/r) log(1 + r x) is evaluated through the r = 0 branch
SMALL_R = 1e-10


@dataclass(frozen=True)
class TransformationSpec:
    """Transformation parameter of one risk."""

    r: float = 0.0

    def __post_init__(self):
        r = float(self.r)
        if not np.isfinite(r) or r < 0:
            raise DomainError(f"transformation parameter must be >= 0, got {self.r!r}")
        object.__setattr__(self, "r", r)

    @property
    def is_identity(self):
        return self.r < SMALL_R


def as_spec(spec):
    if isinstance(spec, TransformationSpec):
        return spec
    return TransformationSpec(float(spec))


def _check(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr >= 0)):
        raise DomainError(f"{name} must be nonnegative")
    return arr


def _out(x, value):
    return float(value) if np.ndim(x) == 0 else value


# unchecked kernels ---------------------------------------------------------


def _g(r, x):
    if r < SMALL_R:
        return x * 1.0
    return np.log1p(r * x) / r


def _g_prime(r, x):
    if r < SMALL_R:
        return np.ones_like(x, dtype=float)
    return 1.0 / (1.0 + r * x)


def _g_inverse(r, y):
    if r < SMALL_R:
        return y * 1.0
    return np.expm1(r * y) / r


def _log_g_tilde(r, x):
    if r < SMALL_R:
        return -x * 1.0
    return -(1.0 + 1.0 / r) * np.log1p(r * x)


def _g_tilde(r, x):
    return np.exp(_log_g_tilde(r, x))


def _g_tilde_prime(r, x):
    if r < SMALL_R:
        return -np.exp(-x)
    return -(r + 1.0) * np.exp(-(2.0 + 1.0 / r) * np.log1p(r * x))


def _ratio(r, x):
    """G~'(x) / G~(x), i.e. the derivative of log G~."""
    if r < SMALL_R:
        return -np.ones_like(x, dtype=float)
    return -(r + 1.0) / (1.0 + r * x)


def _ratio_prime(r, x):
    if r < SMALL_R:
        return np.zeros_like(x, dtype=float)
    return r * (r + 1.0) / (1.0 + r * x) ** 2


def _g_increment(r, base, inc):
    """G(base + inc) - G(base) without cancellation."""
    if r < SMALL_R:
        return inc * 1.0
    return np.log1p(r * inc / (1.0 + r * base)) / r


# public API ----------------------------------------------------------------


def g(spec, x):
    """Transformation ``G(x)``."""
    spec = as_spec(spec)
    arr = _check(x)
    return _out(x, _g(spec.r, arr))


def g_prime(spec, x):
    """First derivative ``G'(x)``; always strictly positive."""
    spec = as_spec(spec)
    arr = _check(x)
    return _out(x, _g_prime(spec.r, arr))


def g_inverse(spec, y):
    """Inverse transformation, ``G(g_inverse(y)) == y``."""
    spec = as_spec(spec)
    arr = _check(y, "y")
    return _out(y, _g_inverse(spec.r, arr))


def g_tilde(spec, x):
    """``G'(x) exp(-G(x))``, in (0, 1]."""
    spec = as_spec(spec)
    arr = _check(x)
    return _out(x, _g_tilde(spec.r, arr))


def g_tilde_prime(spec, x):
    """Derivative of :func:`g_tilde`; never positive."""
    spec = as_spec(spec)
    arr = _check(x)
    return _out(x, _g_tilde_prime(spec.r, arr))
