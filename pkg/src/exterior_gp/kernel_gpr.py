"""Exterior-field reproducing kernel with trainable order attenuation.

The kernel between two points outside the source region is

    kappa(r, r') = sum_{nu <= nu_krr} xi_nu(alpha, beta) (2 nu + 1) / (4 pi)
                   h_nu(k|r|) conj(h_nu(k|r'|)) P_nu(cos angle(r, r'))

where ``xi_nu`` is the reciprocal of the radially weighted norm of order-``nu``
wave functions under the weight ``exp(-(alpha / (k |r|))^(1/beta))``. After
scaling out ``k`` the weighted norm does not depend on frequency, so a table of
``xi_nu`` is a function of ``(alpha, beta)`` only.

Large orders at small ``k |r|`` push ``|h_nu|`` far beyond the float range
while ``xi_nu`` becomes correspondingly tiny, so every product is formed in
log space.
"""
from dataclasses import dataclass
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import integrate, linalg
from scipy.special import gammaln, logsumexp

from .errors import DomainError, NumericError, OptimizationError
from .field_model import WaveContext, _radii_directions
from .specfun import MAX_ORDER, legendre_poly_all, log_sph_hankel1_all

DEFAULT_NU_KRR = 20
DEFAULT_LAMBDA_COND = 0.0075
MODEL_FORMAT_VERSION = 1


def default_lambda_grid():
    """``log10(lambda)`` from -10 to 2 in steps of 0.25 (49 values)."""
    return 10.0 ** (np.arange(49) * 0.25 - 10.0)


@dataclass(frozen=True)
class AttenuationParams:
    """Weight parameters and the box used when optimizing them.

    The box is ``delta_min <= alpha - beta <= delta_max`` and
    ``beta_min <= beta <= beta_max``. Construction only requires ``alpha, beta > 0``;
    use :attr:`feasible` to test box membership.
    """

    alpha: float
    beta: float
    delta_min: float = 1.0
    delta_max: float = 100.0
    beta_min: float = 1e-4
    beta_max: float = 5.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"alpha and beta must be positive, got ({self.alpha}, {self.beta})")
        if not (0 < self.delta_min < self.delta_max and 0 < self.beta_min < self.beta_max):
            raise DomainError("constraint box must satisfy 0 < delta_min < delta_max, 0 < beta_min < beta_max")

    @property
    def feasible(self):
        gap = self.alpha - self.beta
        tol = 1e-12 * max(1.0, abs(self.alpha))
        return (self.delta_min - tol <= gap <= self.delta_max + tol
                and self.beta_min - tol <= self.beta <= self.beta_max + tol)

    def replace(self, alpha, beta):
        return AttenuationParams(float(alpha), float(beta), self.delta_min, self.delta_max,
                                 self.beta_min, self.beta_max)

    def box(self):
        return (self.delta_min, self.delta_max, self.beta_min, self.beta_max)


def _alpha_beta(params, beta=None):
    if isinstance(params, AttenuationParams):
        return params.alpha, params.beta
    if beta is None:
        alpha, beta = params
    else:
        alpha = params
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    return float(alpha), float(beta)


# ----------------------------------------------------------------------------
# Attenuation weights
# ----------------------------------------------------------------------------

def _log_hankel_modsq_coeffs(nu):
    # |h_nu(r)|^2 = sum_k c_k (2r)^{-(2nu-2k)} r^{-2}
    k = np.arange(nu + 1)
    return (gammaln(2 * nu - k + 1) + gammaln(2 * nu - 2 * k + 1)
            - gammaln(k + 1) - 2 * gammaln(nu - k + 1) - (2 * nu - 2 * k) * math.log(2.0))


@lru_cache(maxsize=4096)
def _log_xi_table_cached(nmax, alpha, beta):
    out = np.empty(nmax + 1)
    la, lb = math.log(alpha), math.log(beta)
    for nu in range(nmax + 1):
        p = 2 * (nu - np.arange(nu + 1)) + 1
        terms = _log_hankel_modsq_coeffs(nu) + lb - p * la + gammaln(beta * p)
        out[nu] = -logsumexp(terms)
    out.flags.writeable = False
    return out


def log_xi_table(nmax, params, beta=None):
    """``log xi_nu`` for ``nu = 0..nmax``.

    Integrates the weight against the finite power series of ``|h_nu(r)|^2``
    term by term; each term is ``beta alpha^{-p} Gamma(beta p)`` with
    ``p = 2(nu - k) + 1``. Exact up to rounding, and cached on ``(alpha, beta)``.
    """
    if nmax < 0 or nmax > MAX_ORDER:
        raise DomainError(f"order must lie in [0, {MAX_ORDER}]")
    alpha, beta = _alpha_beta(params, beta)
    return _log_xi_table_cached(int(nmax), alpha, beta)


def xi(nu, params, beta=None):
    """Attenuation ``xi_nu(alpha, beta)``; may underflow to 0 for extreme parameters."""
    return float(np.exp(log_xi_table(nu, params, beta)[nu]))


def xi_quadrature(nu, params, beta=None, epsrel=1e-11):
    """``xi_nu`` by quadrature; see :func:`log_xi_quadrature`."""
    return math.exp(log_xi_quadrature(nu, params, beta, epsrel))


def log_xi_quadrature(nu, params, beta=None, epsrel=1e-11):
    """``log xi_nu`` from adaptive Gauss-Kronrod quadrature of the weighted norm integral.

    The range is split at ``r = alpha`` where the weight switches on. Below it
    the substitution ``u = (alpha/r)^(1/beta)`` turns the essential singularity
    at ``r = 0`` into a plain ``e^{-u}`` decay; above it the integrand is
    integrated in ``r`` up to infinity. Each piece is scaled by its peak so the
    integrand stays in the float range.

    Raises
    ------
    NumericError
        If a piece does not converge.
    """
    alpha, beta = _alpha_beta(params, beta)
    if nu < 0 or nu > MAX_ORDER:
        raise DomainError(f"order must lie in [0, {MAX_ORDER}]")
    log_alpha = math.log(alpha)

    def log_h2(r):
        return 2.0 * log_sph_hankel1_all(nu, np.asarray(r, dtype=float))[0][nu]

    def log_inner(u):
        if u > 1e6:
            return -np.inf
        r = alpha * u ** (-beta)
        return -u + log_h2(r) + math.log(alpha * beta) - (beta + 1.0) * math.log(u)

    def log_outer(r):
        return -math.exp((log_alpha - math.log(r)) / beta) + log_h2(r)

    def run(fn, a, b, shift):
        val, err, *info = integrate.quad(lambda x: math.exp(fn(x) - shift), a, b,
                                         epsabs=0.0, epsrel=epsrel, limit=400, full_output=1)
        if len(info) > 1 or not np.isfinite(val) or val <= 0:
            msg = info[1] if len(info) > 1 else "non-finite"
            raise NumericError(f"xi quadrature failed (nu={nu}, alpha={alpha}, beta={beta}): {msg}")
        return math.log(val) + shift

    u_peak = max(1.0, beta * (2 * nu + 1) - 1.0)
    u_probe = np.concatenate([[1.0], np.linspace(1.0, 3 * u_peak + 20, 200)[1:]])
    shift_in = max(log_inner(u) for u in u_probe)
    u_split = u_peak + 40.0 + 12.0 * math.sqrt(u_peak)
    pieces = [run(log_inner, 1.0, u_split, shift_in), run(log_inner, u_split, np.inf, shift_in)]

    r_split = max(2.0 * alpha, 2 * nu + 1.0)
    r_probe = alpha * np.geomspace(1 + 1e-9, 4 * r_split / alpha, 200)
    shift_out = max(log_outer(r) for r in r_probe)
    # the weight switches on within r in [alpha, alpha (1 + 50 beta)]
    r_knee = min(alpha * (1.0 + 50.0 * beta), r_split)
    edges = [alpha, r_knee, r_split] if r_knee < r_split else [alpha, r_split]
    pieces += [run(log_outer, a, b, shift_out) for a, b in zip(edges[:-1], edges[1:])]
    pieces.append(run(log_outer, r_split, np.inf, shift_out))
    return -float(logsumexp(pieces))


# ----------------------------------------------------------------------------
# Kernel
# ----------------------------------------------------------------------------

class KernelGeometry:
    """Parameter-independent factors of the kernel between two point sets.

    Holds, per order, the log-moduli and phases of the radial Hankel products
    and the Legendre angular factor. ``matrix(log_xi)`` then costs one
    exponential per entry and order, which is what the hyperparameter search
    needs.
    """

    def __init__(self, ctx, nmax, points_a, points_b=None):
        if nmax < 0 or nmax > MAX_ORDER:
            raise DomainError(f"truncation order must lie in [0, {MAX_ORDER}]")
        self.ctx = ctx
        self.nmax = int(nmax)
        ra, da = _radii_directions(np.atleast_2d(points_a))
        la, pa = log_sph_hankel1_all(nmax, ctx.wavenumber * ra)
        if points_b is None:
            lb, pb, db = la, pa, da
        else:
            rb, db = _radii_directions(np.atleast_2d(points_b))
            lb, pb = log_sph_hankel1_all(nmax, ctx.wavenumber * rb)
        cos = np.clip(da @ db.T, -1.0, 1.0)
        order = np.arange(nmax + 1)[:, None, None]
        self._log_mod = la[:, :, None] + lb[:, None, :]
        self._angular = ((2 * order + 1) / (4 * math.pi) * legendre_poly_all(nmax, cos)
                         * pa[:, :, None] * np.conj(pb[:, None, :]))

    @property
    def shape(self):
        return self._log_mod.shape[1:]

    def matrix(self, log_xi):
        log_xi = np.asarray(log_xi)[: self.nmax + 1]
        weights = np.exp(log_xi[:, None, None] + self._log_mod)
        return np.einsum("nij,nij->ij", weights, self._angular)


def kernel_matrix(ctx, params, nu_krr, points_a, points_b):
    """Kernel values between every point of ``points_a`` and ``points_b``."""
    geom = KernelGeometry(ctx, nu_krr, points_a, points_b)
    return geom.matrix(log_xi_table(nu_krr, params))


def kernel_eval(ctx, params, nu_krr, r, r_prime):
    """Kernel ``kappa(r, r')`` for single points (or paired arrays of points)."""
    a = np.asarray(r, dtype=float)
    b = np.asarray(r_prime, dtype=float)
    if a.ndim == 1 and b.ndim == 1:
        return complex(kernel_matrix(ctx, params, nu_krr, a[None], b[None])[0, 0])
    a, b = np.broadcast_arrays(a, b)
    return np.array([kernel_matrix(ctx, params, nu_krr, x[None], y[None])[0, 0]
                     for x, y in zip(a.reshape(-1, 3), b.reshape(-1, 3))]).reshape(a.shape[:-1])


def _hermitian(K):
    return 0.5 * (K + K.conj().T)


def gram_matrix(ctx, params, nu_krr, positions):
    """Hermitian Gram matrix of the kernel at ``positions``."""
    return _hermitian(kernel_matrix(ctx, params, nu_krr, positions, positions))


def krr_fit(K, s, lambda_krr):
    """Coefficients ``(K + lambda I)^{-1} s``.

    Uses a Cholesky factorization when the system is positive definite and a
    Hermitian indefinite (LDL) factorization otherwise.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the system is singular.
    """
    if lambda_krr < 0:
        raise DomainError("regularization must be nonnegative")
    K = np.asarray(K)
    H = K + lambda_krr * np.eye(K.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(H), s)
    except linalg.LinAlgError:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                return linalg.solve(H, s, assume_a="her")
            except linalg.LinAlgWarning as exc:
                raise np.linalg.LinAlgError(f"regularized Gram system is singular: {exc}") from None


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Fitted kernel interpolant ``u(r) = sum_m a_m kappa(r, r_m)``."""

    params: AttenuationParams
    nu_krr: int
    lambda_krr: float
    mic_positions: np.ndarray
    coefficients: np.ndarray
    ctx: WaveContext

    def __post_init__(self):
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        a = np.asarray(self.coefficients, dtype=complex)
        if mics.shape[0] != a.shape[0]:
            raise DomainError("one coefficient per microphone is required")
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "coefficients", a)

    @property
    def xi_table(self):
        return np.exp(log_xi_table(self.nu_krr, self.params))

    def predict(self, points, chunk=2000):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        log_xi = log_xi_table(self.nu_krr, self.params)
        out = np.empty(flat.shape[0], dtype=complex)
        for start in range(0, flat.shape[0], chunk):
            block = flat[start:start + chunk]
            geom = KernelGeometry(self.ctx, self.nu_krr, block, self.mic_positions)
            out[start:start + chunk] = geom.matrix(log_xi) @ self.coefficients
        return out.reshape(pts.shape[:-1])[()]

    __call__ = predict

    def to_dict(self):
        p = self.params
        return {
            "kind": "krr",
            "version": MODEL_FORMAT_VERSION,
            "alpha": p.alpha, "beta": p.beta,
            "box": list(p.box()),
            "lambda_krr": self.lambda_krr,
            "nu_krr": self.nu_krr,
            "frequency": self.ctx.frequency,
            "speed_of_sound": self.ctx.speed_of_sound,
            "wavenumber": self.ctx.wavenumber,
            "mic_positions": self.mic_positions.tolist(),
            "coefficients": [[c.real, c.imag] for c in self.coefficients.tolist()],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "krr" or d.get("version") != MODEL_FORMAT_VERSION:
            raise DomainError(f"unsupported model record (kind={d.get('kind')}, version={d.get('version')})")
        params = AttenuationParams(d["alpha"], d["beta"], *d["box"])
        ctx = WaveContext(d["frequency"], d["speed_of_sound"])
        a = np.array([complex(re, im) for re, im in d["coefficients"]])
        return cls(params, d["nu_krr"], d["lambda_krr"], np.array(d["mic_positions"]), a, ctx)


def krr_predict(model, r):
    return model.predict(r)


# ----------------------------------------------------------------------------
# Hyperparameter objective
# ----------------------------------------------------------------------------

def gpr_objective_from_gram(K, s, lambda_krr, lambda_cond):
    """``s^H H^{-1} s + logdet H + lambda_cond log cond H`` with ``H = K + lambda I``.

    All three terms come from one Hermitian eigendecomposition of ``H``.
    """
    K = np.asarray(K)
    s = np.asarray(s)
    H = _hermitian(K) + lambda_krr * np.eye(K.shape[0])
    w, V = linalg.eigh(H)
    if not np.all(np.isfinite(w)) or w[0] <= 0:
        raise NumericError("regularized Gram matrix is not positive definite")
    proj = V.conj().T @ s
    value = (np.sum(np.abs(proj) ** 2 / w) + np.sum(np.log(w))
             + lambda_cond * math.log(w[-1] / w[0]))
    if not np.isfinite(value):
        raise NumericError("GPR objective is not finite")
    return float(value)


def gpr_objective(ctx, params, nu_krr, positions, s, lambda_krr, lambda_cond=DEFAULT_LAMBDA_COND):
    K = gram_matrix(ctx, params, nu_krr, positions)
    return gpr_objective_from_gram(K, s, lambda_krr, lambda_cond)


class GprObjective:
    """The GPR objective as a function of ``(alpha, beta)`` for fixed data."""

    def __init__(self, ctx, nu_krr, positions, s, lambda_krr, lambda_cond=DEFAULT_LAMBDA_COND):
        self.geometry = KernelGeometry(ctx, nu_krr, positions)
        self.nu_krr = nu_krr
        self.s = np.asarray(s, dtype=complex)
        self.lambda_krr = lambda_krr
        self.lambda_cond = lambda_cond

    def __call__(self, alpha, beta):
        K = _hermitian(self.geometry.matrix(log_xi_table(self.nu_krr, alpha, beta)))
        return gpr_objective_from_gram(K, self.s, self.lambda_krr, self.lambda_cond)

    def gradient(self, alpha, beta, step=1e-5):
        """Central finite-difference gradient in ``(alpha, beta)`` with relative step."""
        return central_difference(lambda x: self(*x), np.array([alpha, beta], dtype=float), step)


def central_difference(fn, x, step):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def richardson_gradient(fn, x, step):
    """Richardson-extrapolated central difference, ``(4 D(h/2) - D(h)) / 3``."""
    return (4 * central_difference(fn, x, step / 2) - central_difference(fn, x, step)) / 3


# ----------------------------------------------------------------------------
# Constrained optimization by logistic reparametrization
# ----------------------------------------------------------------------------

def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(p):
    return math.log(p / (1.0 - p))


def box_to_params(z, box):
    """Map unconstrained ``(b, d)`` onto the box; returns ``(alpha, beta)``."""
    dmin, dmax, bmin, bmax = box
    beta = bmin + (bmax - bmin) * _logistic(z[0])
    alpha = beta + dmin + (dmax - dmin) * _logistic(z[1])
    return float(alpha), float(beta)


def params_to_box(alpha, beta, box, margin=0.01):
    """Inverse of :func:`box_to_params`, clamping into the box interior by ``margin``."""
    dmin, dmax, bmin, bmax = box
    pb = min(max((beta - bmin) / (bmax - bmin), margin), 1 - margin)
    pd = min(max((alpha - beta - dmin) / (dmax - dmin), margin), 1 - margin)
    return np.array([_logit(pb), _logit(pd)])


def _bfgs(fn, x0, max_iter=200, gtol=1e-6, fd_step=1e-5, ftol=1e-10):
    """Minimize ``fn`` by BFGS with Armijo backtracking and finite-difference gradients.

    Stops when the largest gradient component drops below ``gtol``, when an
    accepted step lowers ``fn`` by less than ``ftol * max(1, |f|)``, or after
    ``max_iter`` iterations. The second test matters in narrow curved
    valleys, where the gradient can stay above ``gtol`` for hundreds of
    iterations while the value no longer moves. Non-finite trial values are
    treated as rejected steps. Returns ``(x, f(x), iterations)``.
    """
    def safe(x):
        try:
            v = fn(x)
        except (NumericError, np.linalg.LinAlgError, FloatingPointError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    def grad(x):
        g = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = fd_step
            g[i] = (safe(x + e) - safe(x - e)) / (2 * fd_step)
        return g

    x = np.asarray(x0, dtype=float)
    fx = safe(x)
    if not np.isfinite(fx):
        raise OptimizationError("objective is not finite at the initial point", x)
    g = grad(x)
    if not np.all(np.isfinite(g)):
        raise OptimizationError("gradient is not finite at the initial point", x)
    hinv = np.eye(x.size)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            break
        p = -hinv @ g
        slope = p @ g
        if slope >= 0:
            hinv = np.eye(x.size)
            p, slope = -g, -(g @ g)
        t = 1.0
        while True:
            xn = x + t * p
            fn_ = safe(xn)
            if fn_ <= fx + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                return x, fx, it
        gn = grad(xn)
        if not np.all(np.isfinite(gn)):
            raise OptimizationError("gradient became non-finite", x)
        sk, yk = xn - x, gn - g
        sy = sk @ yk
        if sy > 1e-12 * np.linalg.norm(sk) * np.linalg.norm(yk):
            rho = 1.0 / sy
            I = np.eye(x.size)
            hinv = (I - rho * np.outer(sk, yk)) @ hinv @ (I - rho * np.outer(yk, sk)) + rho * np.outer(sk, sk)
        converged = fx - fn_ <= ftol * max(1.0, abs(fn_))
        x, fx, g = xn, fn_, gn
        if converged:
            break
    return x, fx, it


def initial_params(ctx, positions, box=(1.0, 100.0, 1e-4, 5.0)):
    """Default start: ``alpha = k * max|r_m|``, ``beta = 1``, clamped into the box."""
    radius = float(np.max(np.linalg.norm(np.asarray(positions, dtype=float), axis=-1)))
    dmin, dmax, bmin, bmax = box
    beta = min(max(1.0, bmin), bmax)
    alpha = min(max(ctx.wavenumber * radius, beta + dmin), beta + dmax)
    return AttenuationParams(alpha, beta, *box)


SNAP_FRACTION = 0.02
LOG_LAMBDA_RANGE = (math.log(1e-12), math.log(1e4))


def optimize_hyperparams(ctx, nu_krr, positions, s, lambda_krr, lambda_cond=DEFAULT_LAMBDA_COND,
                         box=(1.0, 100.0, 1e-4, 5.0), init=None, max_iter=200, gtol=1e-6):
    """Fit ``(alpha, beta)`` by minimizing the GPR objective inside the box.

    ``lambda_krr`` stays fixed. See :func:`optimize_hyperparams_joint` for the
    variant that also adapts the regularization.

    Parameters
    ----------
    box : tuple
        ``(delta_min, delta_max, beta_min, beta_max)``.
    init : AttenuationParams, optional
        Starting point; defaults to :func:`initial_params`. It is clamped
        slightly into the box interior, since the logistic map cannot start
        on a face.

    Returns
    -------
    AttenuationParams
        Feasible parameters whose objective does not exceed the objective at
        the (clamped) start. A coordinate that ends within 2% of the box
        width from a face is snapped onto it when this does not increase the
        objective; the logistic map only reaches a face asymptotically.

    Raises
    ------
    OptimizationError
        If the objective or its gradient becomes non-finite.
    """
    params, _ = _optimize(ctx, nu_krr, positions, s, lambda_krr, lambda_cond, box, init,
                          max_iter, gtol, fit_lambda=False)
    return params


def optimize_hyperparams_joint(ctx, nu_krr, positions, s, lambda_init, lambda_cond=DEFAULT_LAMBDA_COND,
                               box=(1.0, 100.0, 1e-4, 5.0), init=None, max_iter=200, gtol=1e-6):
    """Minimize the GPR objective over ``(alpha, beta)`` and ``log lambda`` together.

    The regularization starts at ``lambda_init`` and is clipped to
    ``[1e-12, 1e4]``. With a fixed regularization the objective's minimum
    depends on how ``lambda`` compares with the signal power: a value well
    above it makes the vanishing kernel (``K -> 0``) optimal, and the fit
    collapses to a zero prediction. Letting ``lambda`` follow the data
    removes that dependence on the random start.

    Returns ``(params, lambda_opt)``.
    """
    return _optimize(ctx, nu_krr, positions, s, lambda_init, lambda_cond, box, init,
                     max_iter, gtol, fit_lambda=True)


def _optimize(ctx, nu_krr, positions, s, lambda_krr, lambda_cond, box, init, max_iter, gtol, fit_lambda):
    dmin, dmax, bmin, bmax = box
    if not (0 < dmin < dmax and 0 < bmin < bmax):
        raise DomainError("box must satisfy 0 < delta_min < delta_max and 0 < beta_min < beta_max")
    if not lambda_krr > 0:
        raise DomainError("regularization must be positive")
    objective = GprObjective(ctx, nu_krr, positions, s, lambda_krr, lambda_cond)
    if init is None:
        init = initial_params(ctx, positions, box)
    z0 = params_to_box(init.alpha, init.beta, box)
    lo, hi = LOG_LAMBDA_RANGE
    if fit_lambda:
        z0 = np.append(z0, min(max(math.log(lambda_krr), lo), hi))

    def fn(z):
        if fit_lambda:
            objective.lambda_krr = math.exp(min(max(z[2], lo), hi))
        return objective(*box_to_params(z, box))

    z, fz, _ = _bfgs(fn, z0, max_iter=max_iter, gtol=gtol)
    alpha, beta = box_to_params(z, box)
    if fit_lambda:
        objective.lambda_krr = math.exp(min(max(z[2], lo), hi))

    pb = (beta - bmin) / (bmax - bmin)
    pd = (alpha - beta - dmin) / (dmax - dmin)
    near = SNAP_FRACTION
    for snap_b in ([pb] if near < pb < 1 - near else [round(pb), pb]):
        for snap_d in ([pd] if near < pd < 1 - near else [round(pd), pd]):
            if (snap_b, snap_d) == (pb, pd):
                continue
            b2 = bmin + (bmax - bmin) * snap_b
            a2 = b2 + dmin + (dmax - dmin) * snap_d
            try:
                f2 = objective(a2, b2)
            except NumericError:
                continue
            if f2 <= fz:
                alpha, beta, fz = a2, b2, f2
                pb, pd = snap_b, snap_d
    return AttenuationParams(alpha, beta, *box), objective.lambda_krr


# ----------------------------------------------------------------------------
# Leave-one-out regularization search
# ----------------------------------------------------------------------------

def _argmin_prefer_large(grid, scores):
    finite = np.isfinite(scores)
    best = np.min(scores[finite])
    tied = finite & (scores <= best + 1e-12 * abs(best))
    return float(np.max(np.asarray(grid)[tied]))


def loo_cv_krr(K, s, lambda_grid):
    """Closed-form leave-one-out squared error of KRR over a regularization grid.

    For ``H = K + lambda I`` the held-out residual of sample ``m`` is
    ``[H^{-1} s]_m / [H^{-1}]_{mm}``. One eigendecomposition of ``K`` serves
    the whole grid.

    Returns
    -------
    best_lambda : float
        Minimizer of the summed squared residuals; ties go to the larger value.
    scores : ndarray
        Score per grid value, ``nan`` where ``H`` was singular.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise DomainError("grid must be non-empty with nonnegative values")
    w, V = linalg.eigh(_hermitian(np.asarray(K)))
    proj = V.conj().T @ np.asarray(s)
    absV2 = np.abs(V) ** 2
    scores = np.full(grid.size, np.nan)
    for i, lam in enumerate(grid):
        shifted = w + lam
        if np.min(np.abs(shifted)) <= 1e-14 * np.max(np.abs(shifted)):
            warnings.warn(f"LOO-CV: K + {lam:g} I is singular, skipped", RuntimeWarning, stacklevel=2)
            continue
        alpha = V @ (proj / shifted)
        diag = absV2 @ (1.0 / shifted)
        scores[i] = np.sum(np.abs(alpha / diag) ** 2)
    if not np.any(np.isfinite(scores)):
        raise np.linalg.LinAlgError("LOO-CV failed for every regularization value")
    return _argmin_prefer_large(grid, scores), scores


# ----------------------------------------------------------------------------
# Full training protocol
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GprFitInfo:
    """Diagnostics of one training run.

    ``lambda_opt`` is the regularization at the end of hyperparameter
    optimization (equal to ``lambda_init`` when it was held fixed).
    """

    lambda_init: float
    lambda_opt: float
    params_init: AttenuationParams
    objective_init: float
    objective_final: float


def fit_gpr_model(ctx, positions, s, rng, nu_krr=DEFAULT_NU_KRR, lambda_cond=DEFAULT_LAMBDA_COND,
                  box=(1.0, 100.0, 1e-4, 5.0), lambda_grid=None, log10_lambda_init=(-3.0, 1.0),
                  fit_lambda=True):
    """Train the kernel interpolant on one frequency bin.

    A random initial regularization is drawn log-uniformly and ``(alpha,
    beta)`` are optimized starting from it; with ``fit_lambda`` the
    regularization is optimized alongside them, otherwise it stays at the
    draw. The regularization used for the final model is then re-selected by
    leave-one-out over ``lambda_grid`` with ``(alpha, beta)`` frozen.

    Returns ``(model, info)``.
    """
    positions = np.asarray(positions, dtype=float)
    s = np.asarray(s, dtype=complex)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    lam0 = 10.0 ** rng.uniform(*log10_lambda_init)
    init = initial_params(ctx, positions, box)
    objective = GprObjective(ctx, nu_krr, positions, s, lam0, lambda_cond)
    start = init.replace(*box_to_params(params_to_box(init.alpha, init.beta, box), box))
    f0 = objective(start.alpha, start.beta)
    params, lam_opt = _optimize(ctx, nu_krr, positions, s, lam0, lambda_cond, box, init,
                                200, 1e-6, fit_lambda)
    objective.lambda_krr = lam_opt
    f1 = objective(params.alpha, params.beta)
    K = _hermitian(objective.geometry.matrix(log_xi_table(nu_krr, params)))
    lam, _ = loo_cv_krr(K, s, lambda_grid)
    a = krr_fit(K, s, lam)
    model = KernelModel(params, nu_krr, lam, positions, a, ctx)
    return model, GprFitInfo(lam0, lam_opt, start, f0, f1)
