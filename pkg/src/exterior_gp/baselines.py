"""Reference estimators: regularized spherical wave expansion and point neuron network."""
from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import linalg

from .errors import DomainError, OptimizationError, SingularityError
from .field_model import WaveContext, psi_matrix
from .metrics import nmse
from .specfun import order_index_arrays

MODEL_FORMAT_VERSION = 1


# ----------------------------------------------------------------------------
# Spherical wave function expansion
# ----------------------------------------------------------------------------

def swf_truncation(num_mics):
    """Largest order ``n`` with ``(n + 1)^2 <= num_mics``."""
    if num_mics < 1:
        raise DomainError("need at least one microphone")
    return math.isqrt(num_mics) - 1


def swf_design_matrices(ctx, positions, nu_swf):
    """Basis matrix, quadrature weights and order penalty.

    Returns
    -------
    Psi : ndarray, shape (M, (nu_swf + 1)**2)
    W : ndarray, shape (M, M)
        Equal quadrature weights ``1/M`` on the diagonal.
    D : ndarray, shape ((nu_swf + 1)**2, (nu_swf + 1)**2)
        Diagonal ``nu^2 + nu + 1``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    Psi = psi_matrix(ctx, positions, nu_swf)
    M = positions.shape[0]
    W = np.eye(M) / M
    nu, _ = order_index_arrays(nu_swf)
    D = np.diag((nu * nu + nu + 1).astype(float))
    return Psi, W, D


def _normal_matrix(Psi, W, D, lam):
    A = Psi.conj().T @ (W @ Psi) + lam * D
    return 0.5 * (A + A.conj().T)


def swf_fit(Psi, W, D, s, lambda_swf):
    """Closed-form weighted ridge solution ``(Psi^H W Psi + lambda D)^{-1} Psi^H W s``."""
    A = _normal_matrix(Psi, W, D, lambda_swf)
    b = Psi.conj().T @ (W @ s)
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.solve(A, b, assume_a="her")
        except linalg.LinAlgWarning as exc:
            raise np.linalg.LinAlgError(f"SWF normal matrix is singular: {exc}") from None


@dataclass(frozen=True, eq=False)
class SwfModel:
    nu_swf: int
    coefficients: np.ndarray
    lambda_swf: float
    ctx: WaveContext

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.size != (self.nu_swf + 1) ** 2:
            raise DomainError("coefficient count must be (nu_swf + 1)^2")
        object.__setattr__(self, "coefficients", c)

    def predict(self, points):
        pts = np.asarray(points, dtype=float)
        return (psi_matrix(self.ctx, pts, self.nu_swf) @ self.coefficients)[()]

    __call__ = predict

    def to_dict(self):
        return {
            "kind": "swf",
            "version": MODEL_FORMAT_VERSION,
            "nu_swf": self.nu_swf,
            "lambda_swf": self.lambda_swf,
            "frequency": self.ctx.frequency,
            "speed_of_sound": self.ctx.speed_of_sound,
            "coefficients": [[c.real, c.imag] for c in self.coefficients.tolist()],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "swf" or d.get("version") != MODEL_FORMAT_VERSION:
            raise DomainError("unsupported SWF model record")
        c = np.array([complex(re, im) for re, im in d["coefficients"]])
        return cls(d["nu_swf"], c, d["lambda_swf"], WaveContext(d["frequency"], d["speed_of_sound"]))


def swf_predict(model, r):
    return model.predict(r)


def swf_loo_scores(Psi, W, D, s, lambda_grid):
    """Closed-form LOO squared error for each regularization value (``nan`` if skipped)."""
    s = np.asarray(s)
    scores = np.full(len(lambda_grid), np.nan)
    for i, lam in enumerate(lambda_grid):
        try:
            A = _normal_matrix(Psi, W, D, lam)
            hat = Psi @ linalg.solve(A, Psi.conj().T @ W, assume_a="her")
        except (linalg.LinAlgError, ValueError):
            warnings.warn(f"SWF LOO: normal matrix singular at lambda={lam:g}", RuntimeWarning, stacklevel=2)
            continue
        lev = np.real(np.diag(hat))
        if np.any(np.abs(1.0 - lev) < 1e-12):
            warnings.warn(f"SWF LOO: perfect leverage at lambda={lam:g}", RuntimeWarning, stacklevel=2)
            continue
        resid = (s - hat @ s) / (1.0 - np.diag(hat))
        scores[i] = np.sum(np.abs(resid) ** 2)
    return scores


def _argmin(grid, scores, prefer_large=True):
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise np.linalg.LinAlgError("no regularization value could be evaluated")
    best = np.min(scores[finite])
    tied = finite & (scores <= best + 1e-12 * abs(best))
    vals = np.asarray(grid, dtype=float)[tied]
    return float(vals.max() if prefer_large else vals.min())


def swf_loo_lambda(Psi, W, D, s, lambda_grid):
    """Regularization minimizing the leave-one-out error, via the hat-matrix closed form.

    Residuals are ``(s_m - shat_m) / (1 - H_mm)`` with
    ``H = Psi (Psi^H W Psi + lambda D)^{-1} Psi^H W``. Returns ``(best, scores)``.
    """
    if len(lambda_grid) == 0:
        raise DomainError("empty regularization grid")
    scores = swf_loo_scores(Psi, W, D, s, lambda_grid)
    return _argmin(lambda_grid, scores), scores


def swf_ideal_lambda(Psi, W, D, s, lambda_grid, test_psi, ground_truth):
    """Regularization minimizing NMSE against ground truth at test points.

    This is an oracle: it sees the test data. ``test_psi`` is the basis matrix
    at the test points. Returns ``(best, nmse_db_per_lambda)``.
    """
    if len(lambda_grid) == 0:
        raise DomainError("empty regularization grid")
    scores = np.full(len(lambda_grid), np.nan)
    for i, lam in enumerate(lambda_grid):
        try:
            coef = swf_fit(Psi, W, D, s, lam)
        except np.linalg.LinAlgError:
            continue
        scores[i] = nmse(ground_truth, test_psi @ coef)
    return _argmin(lambda_grid, scores, prefer_large=False), scores


# ----------------------------------------------------------------------------
# Point neuron network
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PnnModel:
    """Sum of normalized point sources with learnable weights and centers."""

    weights: np.ndarray
    centers: np.ndarray
    lambda_pnn: float
    radius_bound: float
    ctx: WaveContext

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=complex))
        v = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if v.shape != (w.size, 3):
            raise DomainError("centers must be (N, 3) with N weights")
        if np.any(np.linalg.norm(v, axis=1) >= self.radius_bound):
            raise DomainError("centers must lie strictly inside the radius bound")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", v)

    def predict(self, points):
        pts = np.asarray(points, dtype=float)
        g = _pnn_basis(self.ctx.wavenumber, pts.reshape(-1, 3), self.centers)
        return (g @ self.weights).reshape(pts.shape[:-1])[()]

    __call__ = predict

    def to_dict(self):
        return {
            "kind": "pnn",
            "version": MODEL_FORMAT_VERSION,
            "lambda_pnn": self.lambda_pnn,
            "radius_bound": self.radius_bound,
            "frequency": self.ctx.frequency,
            "speed_of_sound": self.ctx.speed_of_sound,
            "centers": self.centers.tolist(),
            "weights": [[c.real, c.imag] for c in self.weights.tolist()],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "pnn" or d.get("version") != MODEL_FORMAT_VERSION:
            raise DomainError("unsupported PNN model record")
        w = np.array([complex(re, im) for re, im in d["weights"]])
        return cls(w, np.array(d["centers"]), d["lambda_pnn"], d["radius_bound"],
                   WaveContext(d["frequency"], d["speed_of_sound"]))


def _cis(phase):
    """``exp(i phase)`` for real input; cheaper than the complex exponential."""
    out = np.empty(phase.shape, dtype=complex)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


def _pnn_basis(k, points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d == 0):
        raise SingularityError("point neuron evaluated at its center")
    vn = np.linalg.norm(centers, axis=-1)
    return vn * np.exp(1j * k * (d - vn)) / (4 * math.pi * d)


def pnn_forward(model, r):
    return model.predict(r)


def pnn_loss_and_grad(k, positions, s, weights, centers, lambda_pnn):
    """Loss ``sum |u(r_m) - s_m|^2 + lambda ||eta||_1`` and its real gradients.

    Returns ``(loss, grad_weights, grad_centers)`` where ``grad_weights`` packs
    the partials with respect to real and imaginary parts as one complex
    number, ``dL/dRe + i dL/dIm``. The L1 term uses the subgradient
    ``eta/|eta|`` (0 at 0).
    """
    vn = np.sqrt(np.einsum("nc,nc->n", centers, centers))
    d2 = (np.einsum("mc,mc->m", positions, positions)[:, None] + (vn * vn)[None, :]
          - 2.0 * positions @ centers.T)
    inv_d = 1.0 / np.sqrt(np.maximum(d2, 0.0))
    d = d2 * inv_d
    g = _cis(k * (d - vn)) * (inv_d * (vn / (4 * math.pi)))
    resid = g @ weights - s
    absw = np.abs(weights)
    loss = float(np.vdot(resid, resid).real + lambda_pnn * np.sum(absw))

    grad_w = 2.0 * (g.conj().T @ resid)
    with np.errstate(invalid="ignore", divide="ignore"):
        grad_w += lambda_pnn * np.where(absw > 0, weights / absw, 0.0)

    # dg/dv = g * [(1/|v| - ik) v/|v| + (ik - 1/d) (v - r)/d], contracted with
    # the residual one factor at a time so no (M, N, 3) tensor is formed.
    q = resid.conj()[:, None] * g
    c = q * (1j * k - inv_d) * inv_d
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(vn > 0, q.sum(axis=0) * (1.0 / vn - 1j * k) / vn, 0.0)
    total = (radial + c.sum(axis=0))[:, None] * centers - c.T @ positions
    grad_v = 2.0 * np.real(total * weights[:, None])
    return loss, grad_w, grad_v


def _project_ball(centers, radius):
    n = np.linalg.norm(centers, axis=-1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(n, 1e-300))
    return centers * scale


def pnn_fit(ctx, positions, s, rng, n_neurons=100, lambda_pnn=1e-2, radius_bound=0.4,
            init_radius=0.2, n_iter=3000, learning_rate=1e-2, init_centers=None, init_weights=None):
    """Train a point neuron network with Adam and step acceptance.

    Centers start uniform in the ball of ``init_radius`` and weights standard
    complex Gaussian, unless given. After each Adam step the centers are
    projected into the ball of radius ``(1 - 1e-6) radius_bound``; a step that
    raises the loss is rejected and halves the learning rate, so the loss of
    accepted iterates never increases.

    Raises
    ------
    OptimizationError
        If the loss becomes non-finite at an accepted iterate.
    """
    positions = np.asarray(positions, dtype=float)
    s = np.asarray(s, dtype=complex)
    k = ctx.wavenumber
    if n_neurons < 1 or radius_bound <= 0:
        raise DomainError("need n_neurons >= 1 and radius_bound > 0")
    limit = (1.0 - 1e-6) * radius_bound
    if init_centers is None:
        dirs = rng.standard_normal((n_neurons, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = init_radius * rng.uniform(size=n_neurons) ** (1.0 / 3.0)
        init_centers = dirs * radii[:, None]
    if init_weights is None:
        init_weights = (rng.standard_normal(n_neurons) + 1j * rng.standard_normal(n_neurons)) / math.sqrt(2)
    v = _project_ball(np.array(init_centers, dtype=float).reshape(-1, 3), limit)
    w = np.array(init_weights, dtype=complex).reshape(-1)

    n = w.size

    def pack(gw, gv):
        return np.concatenate([gw.real, gw.imag, gv.ravel()])

    def unpack(theta):
        return theta[:n] + 1j * theta[n:2 * n], theta[2 * n:].reshape(n, 3)

    loss, gw, gv = pnn_loss_and_grad(k, positions, s, w, v, lambda_pnn)
    if not np.isfinite(loss):
        raise OptimizationError("PNN loss is not finite at initialization", (w, v))
    theta, grad = pack(w, v), pack(gw, gv)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    lr = learning_rate
    t = 0
    for _ in range(n_iter):
        m1_n = beta1 * m1 + (1 - beta1) * grad
        m2_n = beta2 * m2 + (1 - beta2) * grad ** 2
        c1, c2 = 1 - beta1 ** (t + 1), 1 - beta2 ** (t + 1)
        w_new, v_new = unpack(theta - lr * (m1_n / c1) / (np.sqrt(m2_n / c2) + eps))
        v_new = _project_ball(v_new, limit)
        loss_new, gw_new, gv_new = pnn_loss_and_grad(k, positions, s, w_new, v_new, lambda_pnn)
        if np.isfinite(loss_new) and loss_new <= loss:
            theta, grad, loss = pack(w_new, v_new), pack(gw_new, gv_new), loss_new
            m1, m2 = m1_n, m2_n
            t += 1
        else:
            lr *= 0.5
            if lr < 1e-12:
                break
    w, v = unpack(theta)
    return PnnModel(w, v, lambda_pnn, radius_bound, ctx)
