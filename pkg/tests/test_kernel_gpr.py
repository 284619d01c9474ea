import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from exterior_gp.errors import DomainError
from exterior_gp.field_model import WaveContext, expansion_field, psi_matrix
from exterior_gp.kernel_gpr import (AttenuationParams, GprObjective, KernelModel, box_to_params,
                                    central_difference, fit_gpr_model, gpr_objective_from_gram,
                                    gram_matrix, initial_params, kernel_eval, kernel_matrix, krr_fit,
                                    krr_predict, log_xi_quadrature, log_xi_table, loo_cv_krr,
                                    optimize_hyperparams, optimize_hyperparams_joint, default_lambda_grid,
                                    params_to_box, richardson_gradient, xi, xi_quadrature)
from exterior_gp.simulation import load_tdesign
from exterior_gp.specfun import order_index_arrays, sph_hankel1_all

CTX = WaveContext(500.0)
BOX = (1.0, 100.0, 1e-4, 5.0)


def shell_points(rng, n, r_in=0.4, r_out=1.0):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(r_in, r_out, n)[:, None]


def random_psd(rng, m, rank=None):
    a = rng.normal(size=(m, rank or m)) + 1j * rng.normal(size=(m, rank or m))
    return a @ a.conj().T / m


# --- attenuation weights -----------------------------------------------------

@pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0, 50.0])
@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0, 4.0])
def test_xi0_closed_form(alpha, beta):
    expect = alpha / special.gamma(beta + 1)
    assert xi(0, alpha, beta) == pytest.approx(expect, rel=1e-12)
    assert xi_quadrature(0, alpha, beta) == pytest.approx(expect, rel=1e-6)


def test_xi0_examples():
    assert xi(0, AttenuationParams(2.0, 1.0)) == pytest.approx(2.0, rel=1e-14)
    assert xi(0, AttenuationParams(3.0, 2.0)) == pytest.approx(1.5, rel=1e-14)


@pytest.mark.parametrize("nu", [1, 4, 9, 15, 20, 25])
@pytest.mark.parametrize("alpha,beta", [(1.5, 1e-4), (2.0, 0.3), (10.0, 1.0), (30.0, 2.5), (101.0, 5.0)])
def test_closed_form_matches_quadrature(nu, alpha, beta):
    closed = log_xi_table(nu, alpha, beta)[nu]
    quad = log_xi_quadrature(nu, alpha, beta)
    assert closed == pytest.approx(quad, rel=1e-9, abs=1e-9)


def test_hankel_modulus_series_identity():
    # The closed form rests on the finite series for |h_nu|^2.
    r = np.geomspace(0.05, 50, 30)
    h2 = np.abs(sph_hankel1_all(20, r)) ** 2
    for nu in (0, 3, 11, 20):
        k = np.arange(nu + 1)
        c = np.exp(special.gammaln(2 * nu - k + 1) + special.gammaln(2 * nu - 2 * k + 1)
                   - special.gammaln(k + 1) - 2 * special.gammaln(nu - k + 1))
        series = sum(c[j] * (2 * r) ** (-(2 * nu - 2 * j)) for j in range(nu + 1)) / r**2
        np.testing.assert_allclose(series, h2[nu], rtol=1e-11)


def test_xi_strictly_decreasing():
    lx = log_xi_table(20, 10.0, 1.0)
    assert np.all(np.diff(lx) < 0)


def test_larger_alpha_raises_cutoff():
    # xi_nu grows like alpha^(2 nu + 1), so a larger alpha attenuates high
    # orders less and the dominant order of xi_nu |h_nu(kR)|^2 moves up.
    k_r = CTX.wavenumber * 0.81
    h2 = np.abs(sph_hankel1_all(20, k_r)) ** 2
    peaks = [int(np.argmax(np.exp(log_xi_table(20, a, 1.0)) * h2)) for a in (2.0, 10.0, 40.0)]
    assert peaks[0] <= peaks[1] <= peaks[2] and peaks[0] < peaks[2]


def test_xi_table_is_cached_and_read_only():
    a = log_xi_table(10, 7.0, 0.7)
    assert a is log_xi_table(10, 7.0, 0.7)
    with pytest.raises(ValueError):
        a[0] = 0.0


def test_params_validation():
    with pytest.raises(DomainError):
        AttenuationParams(-1.0, 1.0)
    with pytest.raises(DomainError):
        AttenuationParams(1.0, 1.0, delta_min=5.0, delta_max=1.0)
    p = AttenuationParams(1.5, 1.0)
    assert not p.feasible  # alpha - beta below delta_min
    assert AttenuationParams(12.0, 1.0).feasible
    assert AttenuationParams(12.0, 1.0).box() == BOX


# --- kernel ------------------------------------------------------------------

def direct_kernel(ctx, params, nu_krr, a, b):
    xi_nu = np.exp(log_xi_table(nu_krr, params))
    nu, _ = order_index_arrays(nu_krr)
    pa, pb = psi_matrix(ctx, a, nu_krr), psi_matrix(ctx, b, nu_krr)
    return (pa * xi_nu[nu]) @ pb.conj().T


def test_addition_theorem_matches_double_sum():
    rng = np.random.default_rng(0)
    a, b = shell_points(rng, 50), shell_points(rng, 50)
    p = AttenuationParams(8.0, 1.3)
    fast = np.array([kernel_eval(CTX, p, 12, x, y) for x, y in zip(a, b)])
    slow = np.array([direct_kernel(CTX, p, 12, x[None], y[None])[0, 0] for x, y in zip(a, b)])
    np.testing.assert_allclose(fast, slow, rtol=1e-10)


def test_kernel_diagonal_and_hermitian():
    rng = np.random.default_rng(1)
    pts = shell_points(rng, 6)
    p = AttenuationParams(12.0, 1.0)
    for x in pts:
        v = kernel_eval(CTX, p, 20, x, x)
        assert v.real > 0 and abs(v.imag) <= 1e-14 * v.real
    K = kernel_matrix(CTX, p, 20, pts, pts)
    np.testing.assert_allclose(K, K.conj().T, rtol=1e-12)


def test_kernel_order_zero():
    rng = np.random.default_rng(2)
    x, y = shell_points(rng, 2)
    p = AttenuationParams(5.0, 0.8)
    k = CTX.wavenumber
    h0 = lambda r: sph_hankel1_all(0, k * np.linalg.norm(r))[0]
    expect = xi(0, p) * h0(x) * np.conj(h0(y)) / (4 * math.pi)
    assert kernel_eval(CTX, p, 0, x, y) == pytest.approx(expect, rel=1e-13)


def test_gram_matches_elementwise_and_single_point():
    rng = np.random.default_rng(3)
    pts = shell_points(rng, 10)
    p = AttenuationParams(20.0, 2.0)
    G = gram_matrix(CTX, p, 20, pts)
    E = np.array([[kernel_eval(CTX, p, 20, a, b) for b in pts] for a in pts])
    np.testing.assert_allclose(G, E, rtol=1e-12)
    g1 = gram_matrix(CTX, p, 20, pts[:1])
    assert g1.shape == (1, 1) and g1[0, 0].real > 0


def test_duplicate_points_make_gram_singular():
    rng = np.random.default_rng(4)
    pts = shell_points(rng, 5)
    pts = np.vstack([pts, pts[:1]])
    w = np.linalg.eigvalsh(gram_matrix(CTX, AttenuationParams(10.0, 1.0), 20, pts))
    assert w[0] <= 1e-12 * w[-1]


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=2**32 - 1),
       st.floats(min_value=1e-4, max_value=5.0), st.floats(min_value=1.0, max_value=100.0))
def test_gram_is_psd(m, seed, beta, delta):
    pts = shell_points(np.random.default_rng(seed), m)
    G = gram_matrix(CTX, AttenuationParams(beta + delta, beta), 20, pts)
    assert np.linalg.eigvalsh(G)[0] >= -1e-10 * np.trace(G).real


# --- ridge solve and prediction -----------------------------------------------

def test_krr_fit_trivial_limits():
    rng = np.random.default_rng(5)
    s = rng.normal(size=7) + 1j * rng.normal(size=7)
    np.testing.assert_allclose(krr_fit(np.eye(7), s, 0.0), s)
    np.testing.assert_allclose(krr_fit(np.eye(7), s, 1e6), s / (1 + 1e6), rtol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        krr_fit(np.zeros((3, 3)), s[:3], 0.0)


def test_krr_fit_minimizes_penalized_loss():
    rng = np.random.default_rng(6)
    K = random_psd(rng, 12)
    s = rng.normal(size=12) + 1j * rng.normal(size=12)
    lam = 0.05
    a = krr_fit(K, s, lam)

    def loss(x):
        return np.linalg.norm(s - K @ x) ** 2 + lam * np.real(x.conj() @ K @ x)

    base = loss(a)
    for _ in range(100):
        d = rng.normal(size=12) + 1j * rng.normal(size=12)
        d *= 1e-3 / np.linalg.norm(d)
        assert loss(a + d) >= base - 1e-12 * abs(base)


def test_prediction_basics():
    rng = np.random.default_rng(7)
    mics = shell_points(rng, 4)
    p = AttenuationParams(10.0, 1.0)
    pts = shell_points(rng, 3)
    zero = KernelModel(p, 20, 0.1, mics, np.zeros(4), CTX)
    np.testing.assert_array_equal(zero.predict(pts), 0)
    one = KernelModel(p, 20, 0.1, mics[:1], np.ones(1), CTX)
    np.testing.assert_allclose(krr_predict(one, pts), [kernel_eval(CTX, p, 20, x, mics[0]) for x in pts])


def test_interpolates_low_order_field():
    mics = 0.81 * load_tdesign(9, 48)
    rng = np.random.default_rng(8)
    coef = rng.normal(size=16) + 1j * rng.normal(size=16)
    s = expansion_field(CTX, coef, mics)
    p = AttenuationParams(10.0, 1.0)
    K = gram_matrix(CTX, p, 20, mics)
    model = KernelModel(p, 20, 1e-10, mics, krr_fit(K, s, 1e-10), CTX)
    pred = model.predict(mics)
    assert np.linalg.norm(pred - s) <= 1e-6 * np.linalg.norm(s)


def test_reproduces_truncated_field_off_the_array():
    mics = 0.81 * load_tdesign(9, 48)
    rng = np.random.default_rng(9)
    coef = rng.normal(size=9) + 1j * rng.normal(size=9)
    p = AttenuationParams(10.0, 1.0)
    s = expansion_field(CTX, coef, mics)
    K = gram_matrix(CTX, p, 20, mics)
    model = KernelModel(p, 20, 1e-12, mics, krr_fit(K, s, 1e-12), CTX)
    test = 0.81 * load_tdesign(6, 26) * 1.05
    truth = expansion_field(CTX, coef, test)
    assert np.linalg.norm(model.predict(test) - truth) <= 1e-2 * np.linalg.norm(truth)


def test_model_round_trip():
    rng = np.random.default_rng(10)
    mics = shell_points(rng, 5)
    m = KernelModel(AttenuationParams(10.0, 1.5), 20, 0.01, mics, rng.normal(size=5) + 1j, CTX)
    back = KernelModel.from_dict(m.to_dict())
    pts = shell_points(rng, 4)
    np.testing.assert_array_equal(back.predict(pts), m.predict(pts))
    bad = dict(m.to_dict(), version=99)
    with pytest.raises(DomainError):
        KernelModel.from_dict(bad)


# --- objective ---------------------------------------------------------------

def test_objective_identity_gram():
    s = np.array([1.0, 2.0j, -1.0])
    assert gpr_objective_from_gram(np.eye(3), s, 0.0, 0.3) == pytest.approx(np.vdot(s, s).real)


def test_objective_brute_force():
    rng = np.random.default_rng(11)
    K = random_psd(rng, 8)
    s = rng.normal(size=8) + 1j * rng.normal(size=8)
    lam = 0.2
    H = K + lam * np.eye(8)
    brute = np.real(s.conj() @ np.linalg.inv(H) @ s) + np.log(np.linalg.det(H).real)
    assert gpr_objective_from_gram(K, s, lam, 0.0) == pytest.approx(brute, rel=1e-10)
    cond = np.linalg.cond(H)
    assert gpr_objective_from_gram(K, s, lam, 0.5) == pytest.approx(brute + 0.5 * math.log(cond), rel=1e-10)


def test_objective_scaling_of_data_term():
    rng = np.random.default_rng(12)
    K = random_psd(rng, 6)
    s = rng.normal(size=6) + 0j
    f1 = gpr_objective_from_gram(K, s, 0.1, 0.01)
    f2 = gpr_objective_from_gram(K, 2 * s, 0.1, 0.01)
    rest = gpr_objective_from_gram(K, 0 * s, 0.1, 0.01)
    assert f2 - rest == pytest.approx(4 * (f1 - rest), rel=1e-12)


def test_gradient_richardson_consistency():
    rng = np.random.default_rng(13)
    mics = 0.81 * load_tdesign(9, 48)
    s = rng.normal(size=48) + 1j * rng.normal(size=48)
    obj = GprObjective(CTX, 20, mics, 0.05 * s, 1e-2)
    for _ in range(10):
        beta = rng.uniform(0.1, 5.0)
        alpha = beta + rng.uniform(1.0, 100.0)
        x = np.array([alpha, beta])
        fd = obj.gradient(alpha, beta)
        rich = richardson_gradient(lambda z: obj(*z), x, 1e-4)
        assert np.linalg.norm(fd - rich) <= 1e-4 * np.linalg.norm(rich)


def test_central_difference_on_quadratic():
    g = central_difference(lambda z: z[0] ** 2 + 3 * z[1], np.array([2.0, 5.0]), 1e-5)
    np.testing.assert_allclose(g, [4.0, 3.0], rtol=1e-8)


# --- optimization ------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-30, max_value=30), st.floats(min_value=-30, max_value=30))
def test_reparametrization_is_always_feasible(b, d):
    alpha, beta = box_to_params(np.array([b, d]), BOX)
    assert AttenuationParams(alpha, beta).feasible


def test_reparametrization_round_trip():
    z = params_to_box(30.0, 2.0, BOX)
    assert box_to_params(z, BOX) == pytest.approx((30.0, 2.0), rel=1e-12)


def synthetic_problem(seed=14, freq=500.0):
    ctx = WaveContext(freq)
    rng = np.random.default_rng(seed)
    mics = 0.81 * load_tdesign(9, 48)
    coef = np.zeros(16, dtype=complex)
    coef[:4] = rng.normal(size=4) + 1j * rng.normal(size=4)
    s = expansion_field(ctx, coef, mics)
    s = s + 0.01 * np.std(s) * (rng.normal(size=48) + 1j * rng.normal(size=48))
    return ctx, mics, s


def test_optimizer_decreases_objective_and_stays_feasible():
    ctx, mics, s = synthetic_problem()
    init = initial_params(ctx, mics)
    obj = GprObjective(ctx, 20, mics, s, 1e-2)
    start = box_to_params(params_to_box(init.alpha, init.beta, BOX), BOX)
    p = optimize_hyperparams(ctx, 20, mics, s, 1e-2, box=BOX, init=init)
    assert p.feasible
    assert obj(p.alpha, p.beta) <= obj(*start)


def test_optimizer_is_stationary_at_its_own_result():
    ctx, mics, s = synthetic_problem()
    p = optimize_hyperparams(ctx, 20, mics, s, 1e-2)
    q = optimize_hyperparams(ctx, 20, mics, s, 1e-2, init=p)
    assert q.alpha == pytest.approx(p.alpha, rel=1e-4)
    assert q.beta == pytest.approx(p.beta, rel=1e-4)


def test_active_constraint_is_pinned():
    # With beta confined to a sliver around the free optimum, the objective
    # is unimodal in alpha - beta with its minimum below the new delta_min,
    # so the constrained solution must sit on that face.
    ctx, mics, s = synthetic_problem()
    free = optimize_hyperparams(ctx, 20, mics, s, 1e-2)
    gap = free.alpha - free.beta
    box = (1.5 * gap, 4.0 * gap, free.beta * (1 - 1e-3), free.beta * (1 + 1e-3))
    pinned = optimize_hyperparams(ctx, 20, mics, s, 1e-2, box=box)
    assert pinned.alpha - pinned.beta == pytest.approx(box[0], abs=1e-8)


def test_initial_params_use_array_radius():
    mics = 0.81 * load_tdesign(9, 48)
    p = initial_params(CTX, mics)
    assert p.beta == 1.0
    assert p.alpha == pytest.approx(CTX.wavenumber * 0.81)


def test_joint_optimization_adapts_regularization():
    ctx, mics, s = synthetic_problem()
    noise_var = (0.01 * np.std(s)) ** 2 * 2
    for lam0 in (1e-3, 10.0):
        p, lam = optimize_hyperparams_joint(ctx, 20, mics, s, lam0)
        assert p.feasible
        assert 1e-3 * noise_var < lam < 1e3 * noise_var


# --- leave-one-out ------------------------------------------------------------

def refit_loo(K, s, lam):
    m = len(s)
    total = 0.0
    for i in range(m):
        keep = np.arange(m) != i
        a = np.linalg.solve(K[np.ix_(keep, keep)] + lam * np.eye(m - 1), s[keep])
        total += abs(s[i] - K[i, keep] @ a) ** 2
    return total


def test_loo_matches_refit():
    rng = np.random.default_rng(15)
    K = random_psd(rng, 16)
    s = rng.normal(size=16) + 1j * rng.normal(size=16)
    grid = np.array([1e-3, 1e-2, 1e-1, 1.0])
    _, scores = loo_cv_krr(K, s, grid)
    for lam, sc in zip(grid, scores):
        assert sc == pytest.approx(refit_loo(K, s, lam), rel=1e-8)


def test_loo_identity_prefers_largest():
    s = np.array([1.0, -2.0, 0.5j])
    best, scores = loo_cv_krr(np.eye(3), s, [0.1, 1.0, 10.0])
    np.testing.assert_allclose(scores, np.vdot(s, s).real)
    assert best == 10.0


def test_loo_skips_singular_values():
    K = np.diag([1.0, 1.0, 0.0])
    with pytest.warns(RuntimeWarning):
        best, scores = loo_cv_krr(K, np.ones(3), [0.0, 1.0])
    assert np.isnan(scores[0]) and best == 1.0


def test_default_lambda_grid_spacing():
    g = default_lambda_grid()
    assert len(g) == 49
    assert g[0] == pytest.approx(1e-10) and g[-1] == pytest.approx(1e2)
    np.testing.assert_allclose(np.diff(np.log10(g)), 0.25)


def test_full_protocol_on_low_order_field():
    ctx, mics, s = synthetic_problem(freq=300.0)
    model, info = fit_gpr_model(ctx, mics, s, np.random.default_rng(0))
    assert model.params.feasible
    assert info.objective_final <= info.objective_init
    assert model.lambda_krr in default_lambda_grid()
    rng = np.random.default_rng(1)
    test = shell_points(rng, 50)
    coef = np.linalg.lstsq(psi_matrix(ctx, mics, 3), s, rcond=None)[0]
    truth = expansion_field(ctx, coef, test)
    err = np.linalg.norm(model.predict(test) - truth) / np.linalg.norm(truth)
    assert err < 0.1
