"""Numerically solve for an equal-weight spherical t-design with a given point count.

Usage: python tools/make_tdesign.py ORDER COUNT OUTFILE [SEED]

Solves sum_i Y_n^m(x_i) = 0 for 1 <= n <= ORDER by Levenberg-Marquardt over
spherical angles, restarting from random configurations until the residual is
at machine precision. Output uses the Hardin-Sloane layout: one coordinate per
line, point-major.
"""
import sys

import numpy as np
from scipy.optimize import least_squares
from scipy.special import sph_harm_y


def residual(angles, order):
    n_pts = angles.size // 2
    theta, phi = angles[:n_pts], angles[n_pts:]
    out = []
    for n in range(1, order + 1):
        for m in range(0, n + 1):
            s = sph_harm_y(n, m, theta, phi).sum()
            out.append(s.real)
            if m > 0:
                out.append(s.imag)
    return np.array(out)


def solve(order, count, seed=0, max_restarts=200):
    rng = np.random.default_rng(seed)
    for _ in range(max_restarts):
        v = rng.standard_normal((count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        x0 = np.concatenate([np.arccos(v[:, 2]), np.arctan2(v[:, 1], v[:, 0])])
        sol = least_squares(residual, x0, args=(order,), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            method="trf", max_nfev=5000)
        if np.max(np.abs(sol.fun)) < 1e-13:
            theta, phi = sol.x[:count], sol.x[count:]
            return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1)
    raise RuntimeError("no design found")


if __name__ == "__main__":
    order, count, path = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
    seed = int(sys.argv[4]) if len(sys.argv) > 4 else 0
    pts = solve(order, count, seed)
    np.savetxt(path, pts.ravel(), fmt="%.17g")
