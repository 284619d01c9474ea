"""Ground-truth exterior fields and the outgoing spherical wave basis.

Time convention is ``e^{-i omega t}``, so outgoing waves carry ``e^{+ikr}``
and the radial basis uses the spherical Hankel function of the first kind.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError, SingularityError
from .specfun import (SphericalHarmonicIndex, log_sph_hankel1_all, sph_harmonics_all,
                      num_coeffs)

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class WaveContext:
    """Single frequency bin. ``wavenumber`` is derived from frequency and speed of sound."""

    frequency: float
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not (self.frequency > 0 and self.speed_of_sound > 0):
            raise DomainError("frequency and speed of sound must be positive")

    @property
    def wavenumber(self):
        return 2.0 * math.pi * self.frequency / self.speed_of_sound


@dataclass(frozen=True, eq=False)
class MonopoleScene:
    """Point sources with complex amplitudes.

    Attributes
    ----------
    positions : ndarray, shape (N, 3)
    coefficients : ndarray, shape (N,)
    source_radius : float or None
        If given, every source must lie in the closed ball of this radius.
    """

    positions: np.ndarray
    coefficients: np.ndarray
    source_radius: float = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        coef = np.atleast_1d(np.asarray(self.coefficients, dtype=complex))
        if pos.shape[-1] != 3 or pos.shape[0] != coef.shape[0] or coef.ndim != 1:
            raise DomainError("positions must be (N, 3) with N matching the coefficient count")
        if pos.shape[0] < 1:
            raise DomainError("a scene needs at least one source")
        if self.source_radius is not None:
            if np.any(np.linalg.norm(pos, axis=1) > self.source_radius * (1 + 1e-12)):
                raise DomainError("source outside the source region")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "coefficients", coef)

    def to_dict(self):
        return {
            "positions": self.positions.tolist(),
            "coefficients": [[c.real, c.imag] for c in self.coefficients.tolist()],
            "source_radius": self.source_radius,
        }

    @classmethod
    def from_dict(cls, d):
        coef = np.array([complex(re, im) for re, im in d["coefficients"]])
        return cls(np.array(d["positions"], dtype=float), coef, d.get("source_radius"))


def _as_points(points):
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 3:
        raise DomainError("points must have a trailing dimension of 3")
    return p


def green_free(ctx, source, eval_point):
    """Free-field Green's function ``e^{ikd} / (4 pi d)``.

    ``eval_point`` may be an array of points of shape ``(..., 3)``.
    """
    src = np.asarray(source, dtype=float)
    d = np.linalg.norm(_as_points(eval_point) - src, axis=-1)
    if np.any(d == 0):
        raise SingularityError("Green's function evaluated at its source")
    out = np.exp(1j * ctx.wavenumber * d) / (4.0 * math.pi * d)
    return out[()] if out.ndim == 0 else out


def scene_field(ctx, scene, eval_point):
    """Superposition of the scene's monopoles at ``eval_point`` (``(..., 3)``)."""
    p = _as_points(eval_point)
    diff = p[..., None, :] - scene.positions
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d == 0):
        raise SingularityError("field evaluated at a source position")
    g = np.exp(1j * ctx.wavenumber * d) / (4.0 * math.pi * d)
    out = g @ scene.coefficients
    return out[()] if out.ndim == 0 else out


def _radii_directions(points):
    p = _as_points(points)
    r = np.linalg.norm(p, axis=-1)
    if np.any(r == 0):
        raise SingularityError("spherical wave functions are singular at the origin")
    return r, p / r[..., None]


def psi_matrix(ctx, points, nmax):
    """All wave functions ``psi_{nu,mu}`` with ``nu <= nmax`` at ``points``.

    Returns shape ``(..., (nmax+1)**2)`` in flat-index order.
    """
    r, dirs = _radii_directions(points)
    log_abs, phase = log_sph_hankel1_all(nmax, ctx.wavenumber * r)
    h = np.exp(log_abs) * phase
    ylm = sph_harmonics_all(nmax, dirs)
    reps = np.array([2 * n + 1 for n in range(nmax + 1)])
    h_flat = np.repeat(np.moveaxis(h, 0, -1), reps, axis=-1)
    assert h_flat.shape[-1] == num_coeffs(nmax)
    return h_flat * ylm


def psi(ctx, idx, r):
    """Outgoing spherical wave function ``h_nu(k|r|) Y_nu^mu(r/|r|)``."""
    if not isinstance(idx, SphericalHarmonicIndex):
        idx = SphericalHarmonicIndex(*idx)
    out = psi_matrix(ctx, r, idx.nu)[..., idx.flat]
    return out[()] if out.ndim == 0 else out


def expansion_field(ctx, coefficients, points):
    """Field ``sum_k c_k psi_k`` for a flat coefficient vector."""
    coefficients = np.asarray(coefficients, dtype=complex)
    nmax = math.isqrt(coefficients.size) - 1
    if num_coeffs(nmax) != coefficients.size:
        raise DomainError("coefficient vector length must be a perfect square")
    return psi_matrix(ctx, points, nmax) @ coefficients
