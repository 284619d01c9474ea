"""Reconstruction error metrics in decibels, and the NSE grid container."""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DegenerateError, DomainError

DB_FLOOR = -300.0


def nmse(truth, estimate):
    """Normalized mean square error in dB, floored at ``DB_FLOOR``.

    Raises
    ------
    DegenerateError
        If ``truth`` has zero energy.
    """
    u = np.asarray(truth, dtype=complex).ravel()
    v = np.asarray(estimate, dtype=complex).ravel()
    if u.size == 0 or u.shape != v.shape:
        raise DomainError("truth and estimate must be non-empty and of equal length")
    energy = np.sum(np.abs(u) ** 2)
    if energy == 0:
        raise DegenerateError("NMSE undefined for a zero-energy reference")
    err = np.sum(np.abs(u - v) ** 2)
    if err == 0:
        return DB_FLOOR
    return max(DB_FLOOR, 10.0 * math.log10(err / energy))


def nse(truth, estimate):
    """Pointwise normalized square error ``20 log10(|u - uhat| / |u|)``, floored."""
    u = np.asarray(truth, dtype=complex)
    v = np.asarray(estimate, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 20.0 * np.log10(np.abs(u - v) / np.abs(u))
    return np.maximum(out, DB_FLOOR)


@dataclass(frozen=True)
class NseGridSpec:
    """Square grid in the plane ``z = plane_z`` centered at the origin."""

    side: float = 2.0
    resolution: int = 100
    plane_z: float = 0.0
    mask_radius: float = 0.2

    def axis(self):
        return np.linspace(-self.side / 2, self.side / 2, self.resolution)

    def points(self):
        """Grid points, shape ``(resolution, resolution, 3)``; row index is y."""
        x = self.axis()
        X, Y = np.meshgrid(x, x)
        return np.stack([X, Y, np.full_like(X, self.plane_z)], axis=-1)

    def mask(self):
        """True where the cell lies strictly inside the source disk."""
        p = self.points()
        return np.linalg.norm(p, axis=-1) < self.mask_radius


@dataclass(frozen=True, eq=False)
class NseGrid:
    spec: NseGridSpec
    values: np.ndarray
    label: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def mask(self):
        return np.isnan(self.values)

    def unmasked(self):
        return self.values[~np.isnan(self.values)]

    def to_csv(self, path):
        write_grid_csv(path, self.values, self.spec, dict(self.metadata, label=self.label))


def nse_map(ctx, truth_field, estimator, spec=NseGridSpec()):
    """Per-cell NSE of ``estimator`` against ``truth_field`` on a square grid.

    Both are callables taking an ``(N, 3)`` array of points. Cells inside the
    source disk are ``nan``.
    """
    pts = spec.points()
    mask = spec.mask()
    flat = pts[~mask]
    values = np.full(mask.shape, np.nan)
    values[~mask] = nse(truth_field(flat), estimator(flat))
    return NseGrid(spec, values, metadata={"frequency": ctx.frequency})


def _fmt(v):
    return "nan" if np.isnan(v) else repr(float(v))


def write_grid_csv(path, values, spec, metadata=None):
    """Row-major grid with ``# key=value`` metadata header lines."""
    meta = {"side": spec.side, "resolution": spec.resolution, "plane_z": spec.plane_z,
            "mask_radius": spec.mask_radius}
    meta.update(metadata or {})
    lines = [f"# {k}={v}" for k, v in meta.items()]
    for row in np.asarray(values):
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_csv(path):
    """Inverse of :func:`write_grid_csv`; returns ``(values, metadata)``."""
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            elif line:
                rows.append([float(x) for x in line.split(",")])
    return np.array(rows), meta
