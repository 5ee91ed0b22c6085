"""Fixed-point iteration, Laplace child, and contraction diagnostics."""

import numpy as np
import pytest

from vind import autodiff as ad
from vind import blocktri as bt
from vind.dynamics import evolution_logdensity, evolution_logdensity_frozen, a_field
from vind.errors import ShapeError
from vind.posterior import (
    contraction_bound,
    entropy,
    fpi_map,
    fpi_solve,
    laplace_posterior,
    laplace_precision,
    make_alpha_scaled,
    parent_gradient,
    parent_logdensity,
    posterior_from_solve,
    refine_paths,
    sample_posterior,
)
from vind.model import init_model
from vind.recognition import encode, recognition_logdensity

from helpers import (
    dense_from_blocks,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    linear_gaussian_model,
    lg_posterior_dense,
)


def small_model(alpha=0.1, d_x=4, d_z=2, seed=0):
    return init_model(d_x, d_z, alpha, seed=seed, rec_widths=(8,), b_widths=(8,),
                      obs_widths=(8,))


def random_trial(model, T, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(T, model.d_x))


# -- parent density ---------------------------------------------------------------


def test_parent_is_recognition_plus_evolution():
    model = small_model()
    X = random_trial(model, 6, seed=1)
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(6, model.d_z))
    enc = encode(model.recognition, X)
    want = recognition_logdensity(enc, Z) + evolution_logdensity(model.evolution, Z)
    assert parent_logdensity(model, X, Z) == pytest.approx(want, abs=1e-12)


def test_parent_gradient_matches_fd():
    model = small_model()
    X = random_trial(model, 5, seed=3)
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(5, model.d_z))
    g = parent_gradient(model, X, Z)

    def f(flat):
        return parent_logdensity(model, X, flat.reshape(5, model.d_z))

    g_fd = fd_gradient(f, Z.ravel(), step=1e-6).reshape(5, model.d_z)
    assert np.max(np.abs(g - g_fd)) < 1e-6 * (1.0 + np.max(np.abs(g_fd)))


# -- the alpha = 0 closed form ------------------------------------------------------


def dense_closed_form(model, X):
    """(Lambda + S)^{-1} Lambda m via dense linear algebra, constant-A case."""
    enc = encode(model.recognition, X)
    T, d = enc.m.shape
    evo = model.evolution
    g = np.exp(evo.gamma_log.data)
    g0 = np.exp(evo.gamma0_log.data)
    A = evo.a_base.data
    S = np.zeros((T * d, T * d))
    S[:d, :d] = np.diag(g0)
    for t in range(T - 1):
        sl = slice(t * d, (t + 1) * d)
        sr = slice((t + 1) * d, (t + 2) * d)
        S[sl, sl] += A.T @ np.diag(g) @ A
        S[sr, sr] += np.diag(g)
        S[sr, sl] += -np.diag(g) @ A
        S[sl, sr] += -A.T @ np.diag(g)
    C = S + np.diag(enc.lam_diag.ravel())
    rhs = (enc.lam_diag * enc.m).ravel()
    return np.linalg.solve(C, rhs).reshape(T, d)


def test_alpha0_single_application_matches_closed_form():
    model = small_model(alpha=0.0, seed=5)
    X = random_trial(model, 8, seed=6)
    enc = encode(model.recognition, X)
    got = fpi_map(model, X, enc.m)
    want = dense_closed_form(model, X)
    assert np.max(np.abs(got - want)) < 1e-10


def test_alpha0_converges_in_one_iteration():
    model = small_model(alpha=0.0, seed=7)
    X = random_trial(model, 8, seed=8)
    P, diag = fpi_solve(model, X, tol=1e-6)
    # first application moves, second confirms the fixed point
    assert len(diag.residuals) == 2
    assert diag.residuals[1] < 1e-12
    assert diag.converged
    P2 = fpi_map(model, X, P)
    assert np.max(np.abs(P2 - P)) < 1e-12


def test_linear_gaussian_matches_dense_posterior_mean_and_cov():
    model, true = linear_gaussian_model(d_x=3, T=7)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(7, 3))
    P, diag = fpi_solve(model, X, tol=1e-12)
    mean, cov = lg_posterior_dense(true, X)
    assert np.max(np.abs(P.ravel() - mean)) < 1e-9
    c = laplace_precision(model, X, P)
    got_cov = np.linalg.inv(dense_from_blocks(c.diag, c.lower))
    assert np.max(np.abs(got_cov - cov)) < 1e-9


# -- nonlinear stationarity ---------------------------------------------------------


def contractive_instances(n=20):
    """Small nonlinear models plus trials where the map should contract."""
    out = []
    for i in range(n):
        d_z = 1 + (i % 2)
        T = 4 + (i % 7)
        model = small_model(alpha=0.05 + 0.01 * (i % 4), d_x=3, d_z=d_z, seed=100 + i)
        if i % 3 == 0:
            model.evolution.a0.data[:] = 0.3
        rng = np.random.default_rng(200 + i)
        X = 0.8 * rng.normal(size=(T, 3))
        out.append((model, X))
    return out


def test_exact_y_fixed_points_are_stationary():
    for model, X in contractive_instances(8):
        P, diag = fpi_solve(model, X, n_iters=200, tol=1e-13, exact_y=True)
        assert diag.converged
        g = parent_gradient(model, X, P)
        assert np.max(np.abs(g)) < 1e-6


def test_default_y_fixed_point_not_generally_stationary():
    # dropping the curvature-gradient term shifts the fixed point when alpha != 0
    model = small_model(alpha=0.4, d_x=3, d_z=2, seed=11)
    rng = np.random.default_rng(12)
    X = rng.normal(size=(6, 3))
    P, _ = fpi_solve(model, X, n_iters=300, tol=1e-13, exact_y=False)
    g = parent_gradient(model, X, P)
    assert np.max(np.abs(g)) > 1e-4


def test_residuals_decay_geometrically():
    model, X = contractive_instances(1)[0]
    P, diag = fpi_solve(model, X, n_iters=60, tol=1e-12, exact_y=True)
    r = [x for x in diag.residuals if x > 1e-13]
    assert len(r) >= 3
    ratios = [r[i + 1] / r[i] for i in range(len(r) - 1)]
    assert max(ratios) < 1.0
    assert diag.contraction_estimate < 1.0


def test_contraction_bound_below_one_on_contractive_instances():
    for model, X in contractive_instances(6):
        P, _ = fpi_solve(model, X, n_iters=100, tol=1e-12, exact_y=True)
        assert contraction_bound(model, X, P, exact_y=True) < 1.0


def test_contraction_bound_zero_at_alpha0():
    model = small_model(alpha=0.0, seed=13)
    X = random_trial(model, 6, seed=14)
    P, _ = fpi_solve(model, X)
    assert contraction_bound(model, X, P) == 0.0


def test_contraction_bound_matches_independent_jacobian():
    model, X = contractive_instances(3)[2]
    P, _ = fpi_solve(model, X, n_iters=100, tol=1e-12, exact_y=True)
    T, d = P.shape

    def apply_flat(flat):
        return fpi_map(model, X, flat.reshape(T, d), exact_y=True).ravel()

    J = fd_jacobian(apply_flat, P.ravel(), step=1e-7)
    want = np.max(np.abs(J).sum(axis=1))
    got = contraction_bound(model, X, P, exact_y=True)
    assert abs(got - want) < 1e-4 * (1.0 + want)


def test_contraction_probe_mode_bounded_by_dense():
    # large enough that the probe path is taken (T * d_z > 64)
    model = small_model(alpha=0.05, d_x=3, d_z=2, seed=15)
    rng = np.random.default_rng(16)
    X = 0.8 * rng.normal(size=(40, 3))
    P, _ = fpi_solve(model, X, n_iters=60, tol=1e-10, exact_y=True)

    def apply_flat(flat):
        return fpi_map(model, X, flat.reshape(40, 2), exact_y=True).ravel()

    J = fd_jacobian(apply_flat, P.ravel(), step=1e-6)
    dense = np.max(np.abs(J).sum(axis=1))
    probe = contraction_bound(model, X, P, exact_y=True, probes=8)
    assert probe <= dense + 1e-6
    assert probe > 0.05 * dense


# -- Laplace child ------------------------------------------------------------------


def test_laplace_precision_hand_case():
    model, _ = linear_gaussian_model(d_x=1, T=3, A=1.0, w=[1.0], b=[0.0],
                                     sigma=[1.0], gamma=1.0, gamma0=1.0)
    X = np.zeros((3, 1))
    c = laplace_precision(model, X, np.zeros((3, 1)))
    # S diag = [g0 + A^2 g, g + A^2 g, g], Lambda = w^2/sigma^2 = 1 everywhere
    assert np.allclose(c.diag.ravel(), [3.0, 3.0, 2.0])
    assert np.allclose(c.lower.ravel(), [-1.0, -1.0])


def test_laplace_precision_is_frozen_negative_hessian_plus_lambda():
    model = small_model(alpha=0.3, d_x=3, d_z=2, seed=17)
    rng = np.random.default_rng(18)
    X = rng.normal(size=(5, 3))
    P, _ = fpi_solve(model, X, n_iters=50, exact_y=True)
    c = laplace_precision(model, X, P)
    enc = encode(model.recognition, X)
    A_blocks = a_field(model.evolution, P[:-1])

    def frozen_parent(flat):
        Z = flat.reshape(5, 2)
        rec = -0.5 * np.sum((Z - enc.m) ** 2 * enc.lam_diag)
        return rec + evolution_logdensity_frozen(model.evolution, Z, A_blocks)

    H = fd_hessian(frozen_parent, P.ravel(), step=1e-4)
    assert np.max(np.abs(dense_from_blocks(c.diag, c.lower) + H)) < 1e-6


def test_huge_precision_pins_path_to_encoder_means():
    model = small_model(alpha=0.1, seed=19)
    model.recognition.prec_net.weights[-1].data[:] = 0.0
    model.recognition.prec_net.biases[-1].data[:] = 12.0
    X = random_trial(model, 6, seed=20)
    enc = encode(model.recognition, X)
    P, _ = fpi_solve(model, X, n_iters=50, tol=1e-10)
    assert np.max(np.abs(P - enc.m)) < 1e-4


def test_smoothing_couples_early_path_to_late_observations():
    model = small_model(alpha=0.0, seed=21)
    X = random_trial(model, 10, seed=22)
    P, _ = fpi_solve(model, X, tol=1e-12)
    X2 = X.copy()
    X2[-1] += 1.0
    P2, _ = fpi_solve(model, X2, tol=1e-12)
    assert np.max(np.abs(P2[0] - P[0])) > 1e-12


def test_entropy_hand_case():
    # one time step, d_z = 1, C = gamma0 + lambda = 1 + 3 = 4
    model, _ = linear_gaussian_model(d_x=1, T=1, w=[np.sqrt(3.0)], b=[0.0],
                                     sigma=[1.0], gamma0=1.0)
    X = np.zeros((1, 1))
    post, _ = posterior_from_solve(model, X)
    want = 0.5 * (1.0 + np.log(2.0 * np.pi)) - 0.5 * np.log(4.0)
    assert entropy(post) == pytest.approx(want, abs=1e-12)


def test_entropy_matches_dense_formula():
    model = small_model(alpha=0.2, seed=23)
    X = random_trial(model, 7, seed=24)
    post, _ = posterior_from_solve(model, X)
    c = laplace_precision(model, X, post.p)
    cov = np.linalg.inv(dense_from_blocks(c.diag, c.lower))
    n = post.p.size
    sign, ld = np.linalg.slogdet(2.0 * np.pi * np.e * cov)
    assert sign > 0
    assert entropy(post) == pytest.approx(0.5 * ld, abs=1e-9)


def test_sample_posterior_is_mean_plus_sqrt_solve():
    model = small_model(alpha=0.1, seed=25)
    X = random_trial(model, 6, seed=26)
    post, _ = posterior_from_solve(model, X)
    rng = np.random.default_rng(27)
    eps = rng.normal(size=post.p.shape)
    z = sample_posterior(post, eps)
    c = laplace_precision(model, X, post.p)
    L = np.linalg.cholesky(dense_from_blocks(c.diag, c.lower))
    want = post.p.ravel() + np.linalg.solve(L.T, eps.ravel())
    assert np.max(np.abs(z.ravel() - want)) < 1e-9


# -- batch refresh and utilities ------------------------------------------------------


def test_refine_paths_matches_per_trial_map():
    model = small_model(alpha=0.15, seed=28)
    rng = np.random.default_rng(29)
    X = rng.normal(size=(3, 6, model.d_x))
    P0 = rng.normal(size=(3, 6, model.d_z))
    got = refine_paths(model, X, P0, n_apps=2, exact_y=True)
    for b in range(3):
        want = fpi_map(model, X[b], fpi_map(model, X[b], P0[b], exact_y=True),
                       exact_y=True)
        assert np.max(np.abs(got[b] - want)) < 1e-12


def test_make_alpha_scaled_shares_parameters():
    model = small_model(alpha=0.4, seed=30)
    half = make_alpha_scaled(model, 0.5)
    assert half.evolution.alpha == pytest.approx(0.2)
    assert model.evolution.alpha == pytest.approx(0.4)
    assert half.evolution.a_base is model.evolution.a_base
    assert half.recognition is model.recognition


def test_fpi_shape_errors():
    model = small_model()
    X = random_trial(model, 5, seed=31)
    with pytest.raises(ShapeError):
        fpi_map(model, X, np.zeros((4, model.d_z)))
    with pytest.raises(ShapeError):
        fpi_solve(model, X, P0=np.zeros((5, model.d_z + 1)))
    with pytest.raises(ShapeError):
        laplace_precision(model, X, np.zeros((5, model.d_z + 1)))
