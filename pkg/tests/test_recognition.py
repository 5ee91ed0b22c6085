"""Encoder outputs and the data-side quadratic."""

import numpy as np
import pytest

from vind import autodiff as ad
from vind import recognition as rec
from vind.errors import NumericalError, ShapeError
from vind.nn import finite_diff_check


def make_rec(seed=0, d_x=3, d_z=2, widths=(5,)):
    return rec.recognition_init(d_x, d_z, widths=widths, seed=seed)


def test_encode_shapes_and_positivity():
    r = make_rec()
    X = np.random.default_rng(0).normal(size=(7, 3))
    enc = rec.encode(r, X)
    assert enc.m.shape == (7, 2)
    assert enc.lam_diag.shape == (7, 2)
    assert np.all(enc.lam_diag > 0)


def test_encode_is_pure_and_row_local():
    r = make_rec(seed=4)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 3))
    enc1 = rec.encode(r, X)
    enc2 = rec.encode(r, X)
    assert np.array_equal(enc1.m, enc2.m)
    assert np.array_equal(enc1.lam_diag, enc2.lam_diag)
    # changing one row changes only that row of the outputs
    X2 = X.copy()
    X2[3] += 1.0
    enc3 = rec.encode(r, X2)
    changed = np.any(enc3.m != enc1.m, axis=1)
    assert changed[3]
    assert not changed[[0, 1, 2, 4, 5]].any()


def test_encode_t_matches_encode():
    r = make_rec(seed=9)
    X = np.random.default_rng(3).normal(size=(4, 3))
    m_t, lam_t = rec.encode_t(r, ad.tensor(X[None]))
    enc = rec.encode(r, X)
    assert np.allclose(m_t.data[0], enc.m, atol=1e-14)
    assert np.allclose(lam_t.data[0], enc.lam_diag, atol=1e-14)


def test_encode_nonfinite_names_time_index():
    r = make_rec(seed=2)
    # force an overflow in the precision head for one row
    r.prec_net.biases[-1].data = np.array([800.0, 800.0])
    X = np.random.default_rng(5).normal(size=(5, 3))
    with pytest.raises(NumericalError, match="time index 0"):
        rec.encode(r, X)


def test_encode_shape_error():
    r = make_rec()
    with pytest.raises(ShapeError):
        rec.encode(r, np.zeros((4, 2)))


def test_logdensity_hand_case():
    """Unit precision, residual of all ones: -T*d/2."""
    enc = rec.Encoding(m=np.zeros((3, 2)), lam_diag=np.ones((3, 2)))
    Z = np.ones((3, 2))
    assert np.isclose(rec.recognition_logdensity(enc, Z), -3.0)
    # scaling one precision entry scales its contribution
    enc2 = rec.Encoding(m=np.zeros((1, 1)), lam_diag=np.array([[4.0]]))
    assert np.isclose(rec.recognition_logdensity(enc2, np.array([[2.0]])), -8.0)


def test_logdensity_gradient_is_linear_residual():
    enc_m = np.random.default_rng(0).normal(size=(4, 2))
    lam = np.random.default_rng(1).uniform(0.5, 2.0, size=(4, 2))
    Z0 = np.random.default_rng(2).normal(size=(4, 2))
    Zv = ad.parameter(Z0[None])
    out = rec.recognition_logdensity_t(ad.tensor(enc_m[None]), ad.tensor(lam[None]), Zv)
    ad.sum_(out).backward()
    assert np.allclose(Zv.grad[0], -lam * (Z0 - enc_m), atol=1e-13)


def test_logdensity_t_matches_wrapper():
    r = make_rec(seed=11)
    rng = np.random.default_rng(8)
    X = rng.normal(size=(5, 3))
    Z = rng.normal(size=(5, 2))
    enc = rec.encode(r, X)
    via_t = rec.recognition_logdensity_t(
        ad.tensor(enc.m[None]), ad.tensor(enc.lam_diag[None]), ad.tensor(Z[None])
    ).data[0]
    assert np.isclose(via_t, rec.recognition_logdensity(enc, Z), atol=1e-12)


def test_encoder_param_gradients():
    r = make_rec(seed=13, widths=(4, 4))
    rng = np.random.default_rng(9)
    X = rng.normal(size=(3, 3))
    Z = rng.normal(size=(3, 2))
    params = [p for _, p in r.parameters()]

    def objective():
        m_t, lam_t = rec.encode_t(r, ad.tensor(X[None]))
        return ad.sum_(rec.recognition_logdensity_t(m_t, lam_t, ad.tensor(Z[None])))

    assert finite_diff_check(objective, params, step=1e-5) <= 1e-5


def test_output_scale_zero_encoder_gives_bias_paths():
    r = make_rec(seed=1)
    from vind.nn import mlp_init
    r.mu_net = mlp_init(3, [4], 2, seed=0, output_scale=0.0)
    r.mu_net.biases[-1].data = np.array([0.7, -0.2])
    X = np.random.default_rng(0).normal(size=(6, 3))
    enc = rec.encode(r, X)
    assert np.allclose(enc.m, np.tile([0.7, -0.2], (6, 1)))
