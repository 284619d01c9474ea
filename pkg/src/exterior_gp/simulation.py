"""Scene geometry, microphone arrays, test points and noisy measurements."""
from dataclasses import dataclass
from importlib import resources
import math
import os

import numpy as np

from .errors import DegenerateError, DomainError, IngestionError
from .field_model import MonopoleScene, scene_field
from .specfun import sph_harmonics_all

BUNDLED_DESIGNS = {
    (6, 26): "des.3.26.6.txt",
    (9, 48): "des.3.48.9.txt",
}


@dataclass(frozen=True)
class RegionSpec:
    """Source ball of radius ``R_s`` inside the target shell ``[R_in, R_out]``."""

    R_s: float = 0.2
    R_in: float = 0.4
    R_out: float = 1.0

    def __post_init__(self):
        if not 0 < self.R_s < self.R_in < self.R_out:
            raise DomainError("region radii must satisfy 0 < R_s < R_in < R_out")

    def in_shell(self, points, tol=1e-12):
        r = np.linalg.norm(points, axis=-1)
        return (r >= self.R_in - tol) & (r <= self.R_out + tol)


@dataclass(frozen=True)
class ArraySpec:
    """Microphone array: a scaled t-design, or points uniform by volume in the shell."""

    kind: str
    name: str = ""
    order: int = 9
    num_points: int = 48
    radius: float = 0.81

    def __post_init__(self):
        if self.kind not in ("t-design", "random-volumetric"):
            raise DomainError(f"unknown array kind {self.kind!r}")
        if self.num_points < 1:
            raise DomainError("an array needs at least one point")

    @property
    def label(self):
        return self.name or (f"tdesign{self.order}" if self.kind == "t-design" else f"random{self.num_points}")


def tdesign_exactness_error(points, order):
    """Largest ``|mean Y_n^m|`` over ``1 <= n <= order``; zero for an exact design."""
    ylm = sph_harmonics_all(order, points)
    return float(np.max(np.abs(ylm[:, 1:].mean(axis=0))))


def load_tdesign(order, point_count, source_file=None, tol=1e-10):
    """Read and validate a spherical t-design.

    The file holds whitespace-separated floats, three per point and point-major
    (the Hardin-Sloane layout has one number per line). Without ``source_file``
    the bundled design for ``(order, point_count)`` is used.

    Raises
    ------
    IngestionError
        Missing file, unparsable token, wrong point count, non-unit point, or
        failed quadrature-exactness check.
    """
    if source_file is None:
        try:
            name = BUNDLED_DESIGNS[(order, point_count)]
        except KeyError:
            raise IngestionError(f"no bundled design of order {order} with {point_count} points") from None
        text = resources.files("exterior_gp").joinpath(f"data/{name}").read_text()
        origin = name
    else:
        if not os.path.exists(source_file):
            raise IngestionError(f"t-design file not found: {source_file}")
        with open(source_file) as fh:
            text = fh.read()
        origin = str(source_file)

    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise IngestionError(f"{origin}:{lineno}: cannot parse {tok!r} in line {line!r}") from None
    if len(values) % 3:
        raise IngestionError(f"{origin}: {len(values)} numbers is not a multiple of 3")
    pts = np.array(values).reshape(-1, 3)
    if pts.shape[0] != point_count:
        raise IngestionError(f"{origin}: expected {point_count} points, found {pts.shape[0]}")
    bad = np.flatnonzero(np.abs(np.linalg.norm(pts, axis=1) - 1.0) > 1e-10)
    if bad.size:
        raise IngestionError(f"{origin}: point {bad[0] + 1} (lines {3 * bad[0] + 1}-{3 * bad[0] + 3}) is not a unit vector")
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    err = tdesign_exactness_error(pts, order)
    if err > tol:
        raise IngestionError(f"{origin}: not a {order}-design (exactness error {err:.3g})")
    return pts


def make_source_scene(region, tdesign26, rng, center_offset=0.0):
    """Shell sources at ``R_s`` times the design points plus one center source.

    Coefficients are i.i.d. standard complex Gaussian (unit total variance).
    ``center_offset`` moves the center source along ``+z``; zero keeps it at
    the origin.
    """
    u = np.asarray(tdesign26, dtype=float)
    if u.shape != (26, 3):
        raise DomainError("expected 26 design points")
    positions = np.vstack([region.R_s * u, [[0.0, 0.0, center_offset]]])
    n = positions.shape[0]
    coef = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    return MonopoleScene(positions, coef, region.R_s)


def sample_shell(region, n, rng):
    """Points uniform by volume in ``R_in <= |r| <= R_out``."""
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    u = rng.uniform(size=n)
    r = (region.R_in ** 3 + u * (region.R_out ** 3 - region.R_in ** 3)) ** (1.0 / 3.0)
    return d * r[:, None]


def make_array(spec, region, rng, source_file=None):
    """Microphone positions for ``spec``, shape ``(M, 3)``."""
    if spec.kind == "t-design":
        if not region.R_in <= spec.radius <= region.R_out:
            raise DomainError("t-design radius must lie in the target shell")
        return spec.radius * load_tdesign(spec.order, spec.num_points, source_file)
    return sample_shell(region, spec.num_points, rng)


def sample_test_points(region, num_points, exclusion, rng, min_distance=1e-6):
    """Volume-uniform shell points at least ``min_distance`` from every excluded point."""
    if num_points < 1:
        raise DomainError("need at least one test point")
    excl = np.asarray(exclusion, dtype=float).reshape(-1, 3)
    out = np.empty((0, 3))
    while out.shape[0] < num_points:
        cand = sample_shell(region, num_points - out.shape[0], rng)
        if excl.size:
            dist = np.linalg.norm(cand[:, None, :] - excl[None, :, :], axis=-1).min(axis=1)
            cand = cand[dist > min_distance]
        out = np.vstack([out, cand])
    return out


def measure(ctx, scene, positions, snr_db, rng):
    """Noisy pressure samples at ``positions``.

    Noise is i.i.d. circular complex Gaussian with variance set so that
    ``10 log10(sum |u|^2 / sum E|n|^2) = snr_db`` for this realization of the
    field. ``snr_db = inf`` returns the clean field.

    Raises
    ------
    DegenerateError
        If the clean field is identically zero.
    """
    u = scene_field(ctx, scene, positions)
    power = np.mean(np.abs(u) ** 2)
    if power == 0:
        raise DegenerateError("scene produces zero signal at the microphones")
    if np.isinf(snr_db) and snr_db > 0:
        return u
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    noise = math.sqrt(sigma2 / 2.0) * (rng.standard_normal(u.shape) + 1j * rng.standard_normal(u.shape))
    return u + noise
