"""Spherical special functions: Bessel/Hankel, Legendre and spherical harmonics.

Conventions
-----------
``assoc_legendre`` has no Condon-Shortley phase, ``P_n^m(t) = (1-t^2)^{m/2} d^m/dt^m P_n(t)``.
The phase is carried by the spherical harmonics instead::

    Y_n^m(theta, phi) = (-1)^m N_n^m P_n^m(cos theta) e^{i m phi},   m >= 0
    Y_n^{-m} = (-1)^m conj(Y_n^m)

with ``N_n^m = sqrt((2n+1)/(4 pi) (n-m)!/(n+m)!)``, so that the harmonics are
orthonormal on the unit sphere and agree with ``scipy.special.sph_harm_y``.

Coefficient vectors over (n, m) use the flat index ``n^2 + n + m`` (0-based).
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError, UnsupportedOrderError

MAX_ORDER = 25

_UNIT_TOL = 1e-12
_RESCALE = 1e250


def _check_order(nu):
    if nu < 0 or int(nu) != nu:
        raise DomainError(f"order must be a nonnegative integer, got {nu!r}")
    if nu > MAX_ORDER:
        raise UnsupportedOrderError(f"order {nu} exceeds supported maximum {MAX_ORDER}")
    return int(nu)


def _check_positive(x):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise DomainError("spherical Bessel/Hankel argument must be positive")
    return x


def _check_unit_interval(t):
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0):
        raise DomainError("Legendre argument must lie in [-1, 1]")
    return t


@dataclass(frozen=True)
class SphericalHarmonicIndex:
    """Order ``nu`` and mode ``mu`` of a spherical harmonic, ``|mu| <= nu``."""

    nu: int
    mu: int

    def __post_init__(self):
        if self.nu < 0 or abs(self.mu) > self.nu:
            raise DomainError(f"invalid harmonic index (nu={self.nu}, mu={self.mu})")

    @property
    def flat(self):
        """0-based position in a coefficient vector, ``nu^2 + nu + mu``."""
        return flat_index(self.nu, self.mu)

    @classmethod
    def from_flat(cls, k):
        nu = math.isqrt(k)
        return cls(nu, k - nu * nu - nu)


def flat_index(nu, mu):
    return nu * nu + nu + mu


def num_coeffs(nmax):
    return (nmax + 1) ** 2


def order_index_arrays(nmax):
    """Return ``(nu, mu)`` integer arrays in flat-index order."""
    nu = np.concatenate([np.full(2 * n + 1, n) for n in range(nmax + 1)])
    mu = np.concatenate([np.arange(-n, n + 1) for n in range(nmax + 1)])
    return nu, mu


# ----------------------------------------------------------------------------
# Spherical Bessel / Hankel
# ----------------------------------------------------------------------------

def sph_jn_all(nmax, x):
    """Spherical Bessel functions ``j_0..j_nmax`` by downward (Miller) recurrence.

    Returns an array of shape ``(nmax + 1,) + x.shape``. The unnormalized
    recurrence is started well above ``max(nmax, x)`` and scaled to the closed
    form of ``j_0`` (or ``j_1`` where ``j_0`` is close to a zero).
    """
    nmax = _check_order(nmax)
    x = _check_positive(x)
    shape = x.shape
    xf = x.ravel()
    xmax = float(xf.max()) if xf.size else 0.0
    start = nmax + int(xmax + 12.0 * xmax ** (1.0 / 3.0)) + 30

    out = np.zeros((nmax + 1, xf.size))
    j_hi = np.zeros_like(xf)
    j_cur = np.full_like(xf, 1e-300)
    for n in range(start, 0, -1):
        j_lo = (2 * n + 1) / xf * j_cur - j_hi
        j_hi, j_cur = j_cur, j_lo
        if n - 1 <= nmax:
            out[n - 1] = j_cur
        big = np.abs(j_cur) > _RESCALE
        if np.any(big):
            j_cur[big] /= _RESCALE
            j_hi[big] /= _RESCALE
            out[:, big] /= _RESCALE

    sin, cos = np.sin(xf), np.cos(xf)
    j0 = sin / xf
    j1 = sin / xf**2 - cos / xf
    use_j0 = np.abs(j0) >= np.abs(j1)
    # after the loop j_cur and j_hi hold the unnormalized j_0 and j_1
    scale = np.where(use_j0, j0 / j_cur, j1 / j_hi)
    out *= scale
    return out.reshape((nmax + 1,) + shape)


def sph_yn_all(nmax, x):
    """Spherical Neumann functions ``y_0..y_nmax`` by upward recurrence."""
    nmax = _check_order(nmax)
    x = _check_positive(x)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = -np.cos(x) / x
    if nmax >= 1:
        out[1] = -np.cos(x) / x**2 - np.sin(x) / x
    for n in range(1, nmax):
        out[n + 1] = (2 * n + 1) / x * out[n] - out[n - 1]
    return out


def sph_hankel1_all(nmax, x):
    """``h_n^{(1)} = j_n + i y_n`` for ``n = 0..nmax``, shape ``(nmax + 1,) + x.shape``."""
    return sph_jn_all(nmax, x) + 1j * sph_yn_all(nmax, x)


def sph_hankel1(nu, x):
    """Spherical Hankel function of the first kind of order ``nu``.

    Parameters
    ----------
    nu : int
        Order, ``0 <= nu <= MAX_ORDER``.
    x : float or array_like
        Positive argument.

    Returns
    -------
    complex or ndarray of complex

    Raises
    ------
    DomainError
        If any ``x <= 0``.
    UnsupportedOrderError
        If ``nu > MAX_ORDER``.
    """
    nu = _check_order(nu)
    out = sph_hankel1_all(nu, x)[nu]
    return out[()] if out.ndim == 0 else out


def log_sph_hankel1_all(nmax, x):
    """Log-modulus and unit phase of ``h_0..h_nmax`` without overflow.

    Uses the ratio form of the upward recurrence, ``rho_n = h_n / h_{n-1}``,
    so arguments far below ``nmax`` (where ``|h_n|`` exceeds the float range)
    are handled. Returns ``(log_abs, phase)`` each of shape ``(nmax + 1,) + x.shape``.
    """
    nmax = _check_order(nmax)
    x = _check_positive(x)
    log_abs = np.empty((nmax + 1,) + x.shape)
    phase = np.empty((nmax + 1,) + x.shape, dtype=complex)
    log_abs[0] = -np.log(x)
    phase[0] = -1j * np.exp(1j * x)
    if nmax == 0:
        return log_abs, phase
    rho = 1.0 / x - 1j
    for n in range(1, nmax + 1):
        if n > 1:
            rho = (2 * n - 1) / x - 1.0 / rho
        mod = np.abs(rho)
        log_abs[n] = log_abs[n - 1] + np.log(mod)
        phase[n] = phase[n - 1] * (rho / mod)
    return log_abs, phase


def spherical_derivative(values, x):
    """Derivatives of a spherical Bessel-type sequence from its order recurrence.

    ``f_0' = -f_1`` and ``f_n' = f_{n-1} - (n+1)/x f_n``; the highest order is
    dropped, so the result has one fewer order than ``values``.
    """
    values = np.asarray(values)
    nmax = values.shape[0] - 1
    out = np.empty((nmax,) + values.shape[1:], dtype=values.dtype)
    out[0] = -values[1]
    for n in range(1, nmax):
        out[n] = values[n - 1] - (n + 1) / x * values[n]
    return out


# ----------------------------------------------------------------------------
# Legendre
# ----------------------------------------------------------------------------

def legendre_poly_all(nmax, t):
    """Legendre polynomials ``P_0..P_nmax`` at ``t`` by three-term recurrence."""
    t = _check_unit_interval(t)
    out = np.empty((nmax + 1,) + t.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = t
    for n in range(1, nmax):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def legendre_poly(nu, t):
    """Legendre polynomial ``P_nu(t)`` for ``|t| <= 1``."""
    if nu < 0:
        raise DomainError("order must be nonnegative")
    out = legendre_poly_all(int(nu), t)[nu]
    return out[()] if out.ndim == 0 else out


def _normalized_alf_table(nmax, t, s=None):
    """Orthonormalized associated Legendre functions without phase.

    ``out[n, m] = N_n^m P_n^m(t)`` for ``0 <= m <= n <= nmax``, zero above the
    diagonal. ``s`` is ``sqrt(1 - t^2)``; pass it when a more accurate value
    than the one computed from ``t`` is available.
    """
    t = np.asarray(t, dtype=float)
    if s is None:
        s = np.sqrt(np.maximum(0.0, 1.0 - t * t))
    out = np.zeros((nmax + 1, nmax + 1) + t.shape)
    out[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, nmax + 1):
        out[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(0, nmax):
        out[m + 1, m] = math.sqrt(2 * m + 3) * t * out[m, m]
    for m in range(0, nmax + 1):
        for n in range(m + 2, nmax + 1):
            a = math.sqrt((4 * n * n - 1) / (n * n - m * m))
            b = math.sqrt(((n - 1) ** 2 - m * m) / (4 * (n - 1) ** 2 - 1))
            out[n, m] = a * (t * out[n - 1, m] - b * out[n - 2, m])
    return out


def _alf_norm(nu, mu):
    return math.sqrt((2 * nu + 1) / (4 * math.pi) * math.factorial(nu - mu) / math.factorial(nu + mu))


def assoc_legendre(nu, mu, t):
    """Associated Legendre function ``P_nu^mu(t)``, ``0 <= mu <= nu``, no Condon-Shortley phase."""
    nu = _check_order(nu)
    if not 0 <= mu <= nu:
        raise DomainError(f"mode must satisfy 0 <= mu <= nu, got mu={mu}")
    t = _check_unit_interval(t)
    out = _normalized_alf_table(nu, t)[nu, mu] / _alf_norm(nu, mu)
    return out[()] if out.ndim == 0 else out


# ----------------------------------------------------------------------------
# Spherical harmonics
# ----------------------------------------------------------------------------

def _check_directions(directions):
    d = np.asarray(directions, dtype=float)
    if d.shape[-1] != 3:
        raise DomainError("directions must have a trailing dimension of 3")
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > _UNIT_TOL):
        raise DomainError("direction vectors must have unit norm")
    return d


def sph_harmonics_all(nmax, directions):
    """All harmonics up to ``nmax`` at unit ``directions``.

    Parameters
    ----------
    nmax : int
    directions : array_like, shape (..., 3)

    Returns
    -------
    ndarray, shape (..., (nmax + 1)**2)
        Complex values in flat-index order.
    """
    nmax = _check_order(nmax)
    d = _check_directions(directions)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    alf = _normalized_alf_table(nmax, np.clip(z, -1.0, 1.0), np.hypot(x, y))
    phi = np.arctan2(y, x)
    out = np.empty(d.shape[:-1] + (num_coeffs(nmax),), dtype=complex)
    for m in range(0, nmax + 1):
        e = np.exp(1j * m * phi)
        sign = -1.0 if m % 2 else 1.0
        for n in range(m, nmax + 1):
            pos = sign * alf[n, m] * e
            out[..., flat_index(n, m)] = pos
            if m > 0:
                out[..., flat_index(n, -m)] = sign * np.conj(pos)
    return out


def sph_harmonic(idx, direction):
    """Orthonormal complex spherical harmonic ``Y_nu^mu`` at unit ``direction``.

    ``idx`` is a :class:`SphericalHarmonicIndex` or an ``(nu, mu)`` pair.
    """
    if not isinstance(idx, SphericalHarmonicIndex):
        idx = SphericalHarmonicIndex(*idx)
    out = sph_harmonics_all(idx.nu, direction)[..., idx.flat]
    return out[()] if out.ndim == 0 else out
