"""Special functions needed by the Dirichlet losses.

All three functions shift the argument upward with the recurrence until
it is at least ``_SHIFT`` and then evaluate an asymptotic series, which
keeps them accurate to ~1e-14 for arguments well below one.
"""
import numpy as np

_SHIFT = 10.0

# B_{2k} / (2k) for k = 1..7
_DIGAMMA_COEF = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
# B_{2k} for k = 1..7
_TRIGAMMA_COEF = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)
# B_{2k} / (2k (2k - 1)) for k = 1..7
_LGAMMA_COEF = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class DomainError(ValueError):
    pass


def _prepare(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("argument must be positive and finite, got min %r" % np.min(x))
    return x


def _shifted(x):
    """Yield (shifted x, list of the values that were stepped over)."""
    x = x.copy()
    steps = []
    while True:
        low = x < _SHIFT
        if not low.any():
            return x, steps
        steps.append(np.where(low, x, np.nan))
        x = np.where(low, x + 1.0, x)


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    x = _prepare(x)
    scalar = x.ndim == 0
    z, steps = _shifted(np.atleast_1d(x))
    acc = np.zeros_like(z)
    for s in steps:
        acc -= np.where(np.isnan(s), 0.0, 1.0 / np.where(np.isnan(s), 1.0, s))
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEF):
        series = (series + c) * inv2
    out = np.log(z) - 0.5 / z - series + acc
    return out[0] if scalar else out


def trigamma(x):
    """psi'(x) for x > 0."""
    x = _prepare(x)
    scalar = x.ndim == 0
    z, steps = _shifted(np.atleast_1d(x))
    acc = np.zeros_like(z)
    for s in steps:
        safe = np.where(np.isnan(s), 1.0, s)
        acc += np.where(np.isnan(s), 0.0, 1.0 / (safe * safe))
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_TRIGAMMA_COEF):
        series = (series + c) * inv2
    out = 1.0 / z + 0.5 * inv2 + series / z + acc
    return out[0] if scalar else out


def lgamma(x):
    """log Gamma(x) for x > 0 (Stirling series after upward shift)."""
    x = _prepare(x)
    scalar = x.ndim == 0
    z, steps = _shifted(np.atleast_1d(x))
    acc = np.zeros_like(z)
    for s in steps:
        acc -= np.where(np.isnan(s), 0.0, np.log(np.where(np.isnan(s), 1.0, s)))
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEF):
        series = series * inv2 + c
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series / z + acc
    return out[0] if scalar else out
