"""Posterior head, pathwise sampling, and the exact-posterior oracle."""

import numpy as np
import pytest

from conftest import random_clicks, random_fm
from gpis import autodiff as ad
from gpis import oracles, rff
from gpis.exceptions import InvalidInputError
from gpis.features import BASE_FEATURE_DIM, gather
from gpis.kernel import KernelParams, default_kernel_params
from gpis.posterior import (
    FIXED_SIGMA2,
    HIDDEN_UNITS,
    Click,
    ClickSet,
    GpModel,
    Predictor,
    build_model,
    decompose,
    exact_posterior,
    init_head,
    pathwise_sample,
    pathwise_sample_many,
    predict,
    sample_seed,
    variational_mean,
)


def clicked_model(seed=0, **kw):
    return build_model(seed=seed, **kw)


# -- variational head ---------------------------------------------------------


def test_zero_head_gives_ln2_magnitude():
    head = init_head(BASE_FEATURE_DIM, scheme="zero")
    X = np.random.default_rng(0).random((5, BASE_FEATURE_DIM))
    y = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
    m = ad.value_of(variational_mean(head, X, y))
    np.testing.assert_allclose(m, np.log(2.0) * y, atol=1e-12)


def test_head_sign_always_matches_click():
    head = init_head(BASE_FEATURE_DIM, seed=3)
    X = np.random.default_rng(1).random((40, BASE_FEATURE_DIM))
    y = np.where(np.arange(40) % 2 == 0, 1.0, -1.0)
    m = ad.value_of(variational_mean(head, X, y))
    assert (np.sign(m) == y).all()
    assert (np.abs(m) > 0).all()


def test_head_shapes_and_validation():
    head = init_head(6, hidden=10)
    assert head.W1.shape == (10, 6) and head.W2.shape == (1, 10)
    assert head.d == 6 and head.hidden == 10
    assert head.sigma2 == FIXED_SIGMA2
    assert HIDDEN_UNITS == 96


# -- click containers -----------------------------------------------------------


def test_clickset_contract():
    cs = ClickSet()
    assert cs.n == 0
    cs1 = cs.with_click(5, 1).with_click(9, -1)
    assert cs.n == 0, "with_click must not mutate"
    assert cs1.n == 2
    np.testing.assert_array_equal(cs1.indices, [5, 9])
    np.testing.assert_array_equal(cs1.labels, [1.0, -1.0])
    back = cs1.without_last()
    assert back.n == 1 and back.indices[0] == 5
    with pytest.raises(InvalidInputError):
        cs1.with_click(5, -1)  # duplicate pixel
    with pytest.raises(InvalidInputError):
        Click(3, 0)
    with pytest.raises(InvalidInputError):
        Click(-1, 1)


# -- pathwise sampling -----------------------------------------------------------


def test_sample_decomposition_identity():
    model = clicked_model()
    fm = random_fm(1, 8, 9)
    clicks = random_clicks(2, fm.m, 4)
    s = pathwise_sample(fm, clicks, model.head, model.kp, model.ws,
                        1e-4, seed=3)
    np.testing.assert_allclose(s.f, s.prior_map + s.update_map, atol=1e-12)
    prior_p, update_p = decompose(s)
    np.testing.assert_allclose(prior_p, 1 / (1 + np.exp(-s.prior_map)), atol=1e-12)
    np.testing.assert_allclose(update_p, 1 / (1 + np.exp(-s.update_map)), atol=1e-12)
    assert (s.prob > 0).all() and (s.prob < 1).all()
    assert s.prob.shape == (fm.m,)


def test_predict_one_sample_equals_single_draw():
    model = clicked_model()
    fm = random_fm(4, 7, 7)
    clicks = random_clicks(5, fm.m, 3)
    s = pathwise_sample(fm, clicks, model.head, model.kp, model.ws,
                        1e-5, seed=8)
    p = predict(fm, clicks, model.head, model.kp, model.ws, 1e-5, seed=8)
    np.testing.assert_array_equal(p, s.prob)


def test_sample_determinism_and_seed_sensitivity():
    model = clicked_model()
    fm = random_fm(6, 6, 8)
    clicks = random_clicks(7, fm.m, 4)
    args = (fm, clicks, model.head, model.kp, model.ws, 1e-5)
    a = pathwise_sample(*args, seed=1).prob
    b = pathwise_sample(*args, seed=1).prob
    c = pathwise_sample(*args, seed=2).prob
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_seed_derivation_is_stable():
    assert sample_seed(5, 0) == sample_seed(5, 0)
    assert sample_seed(5, 0) != sample_seed(5, 1)
    assert sample_seed(5, 1) != sample_seed(6, 1)


def test_many_samples_match_individual_draws():
    model = clicked_model()
    fm = random_fm(8, 5, 6)
    clicks = random_clicks(9, fm.m, 3)
    S = pathwise_sample_many(fm, clicks, model.head, model.kp, model.ws,
                             1e-4, n_samples=4, seed=2)
    assert S.shape == (fm.m, 4)
    S2 = pathwise_sample_many(fm, clicks, model.head, model.kp, model.ws,
                              1e-4, n_samples=4, seed=2)
    np.testing.assert_array_equal(S, S2)


def test_zero_clicks_refused():
    model = clicked_model()
    fm = random_fm(10, 5, 5)
    with pytest.raises(InvalidInputError):
        pathwise_sample(fm, ClickSet(), model.head, model.kp, model.ws, 1e-4)
    with pytest.raises(InvalidInputError):
        exact_posterior(fm, ClickSet(), model.head, model.kp, 1e-4, [0])


def test_click_index_out_of_range():
    model = clicked_model()
    fm = random_fm(11, 4, 4)
    clicks = ClickSet().with_click(fm.m, 1)
    with pytest.raises(InvalidInputError):
        pathwise_sample(fm, clicks, model.head, model.kp, model.ws, 1e-4)


# -- interpolation limits ---------------------------------------------------------


def test_zero_basis_interpolates_clicks():
    """With phi == 0 the sample is the pure kernel interpolant of f_n."""
    model = clicked_model(head_scheme="zero")
    fm = random_fm(12, 9, 9)
    clicks = random_clicks(13, fm.m, 5)
    l = model.ws.theta.shape[0]
    ws0 = rff.WeightSpaceParams(
        theta=np.zeros_like(model.ws.theta),
        tau=np.full(l, np.pi / 2.0),
        mu_w=model.ws.mu_w,
        log_sigma2_w=model.ws.log_sigma2_w,
        learn_mode="fixed",
    )
    s = pathwise_sample(fm, clicks, model.head, model.kp, ws0,
                        1e-9, sigma2=0.0, seed=0)
    # sigma2 = 0 makes f_n = m_xi = +-ln2 at the clicks (zero head)
    at_clicks = s.f[clicks.indices]
    np.testing.assert_allclose(at_clicks, np.log(2.0) * clicks.labels,
                               atol=1e-6)
    assert np.max(np.abs(s.prior_map)) < 1e-12


def test_exact_posterior_interpolates_at_tiny_jitter():
    model = clicked_model(head_scheme="zero")
    fm = random_fm(14, 8, 8)
    clicks = random_clicks(15, fm.m, 4)
    mu, _ = exact_posterior(fm, clicks, model.head, model.kp, 1e-10,
                            clicks.indices, sigma2=0.0)
    np.testing.assert_allclose(mu, np.log(2.0) * clicks.labels, atol=1e-7)


def test_far_pixels_revert_to_prior():
    """A near-delta kernel leaves non-click pixels at the weight-space prior."""
    model = clicked_model(concat_image=False)
    kp = KernelParams(log_eta0=np.float64(0.0),
                      log_eta=np.full(BASE_FEATURE_DIM, np.log(1e-6)),
                      use_color=False)
    fm = random_fm(16, 7, 7)
    clicks = random_clicks(17, fm.m, 3)
    s = pathwise_sample(fm, clicks, model.head, kp, model.ws, 1e-6, seed=4,
                        concat_image=False)
    mask = np.ones(fm.m, bool)
    mask[clicks.indices] = False
    far = s.f[mask]
    prior = s.prior_map[mask]
    np.testing.assert_allclose(far, prior, atol=1e-4)


# -- exact posterior vs dense oracle ----------------------------------------------


def test_exact_posterior_matches_dense_oracle():
    g = np.random.default_rng(0)
    for rep in range(6):
        model = clicked_model(seed=rep)
        fm = random_fm(20 + rep, 6, 7)
        n = int(g.integers(2, 7))
        clicks = random_clicks(30 + rep, fm.m, n)
        test_idx = g.choice(fm.m, size=8, replace=False)
        mu, cov = exact_posterior(fm, clicks, model.head, model.kp, 1e-4,
                                  test_idx)
        Xbar = fm.xbar(model.concat_image)
        m_xi = ad.value_of(variational_mean(
            model.head, fm.X[clicks.indices], clicks.labels))

        def k(a, b):
            return oracles.kernel_scalar(a, b, model.kp.eta0, model.kp.eta,
                                         use_color=model.kp.use_color)

        Xn, Xs = Xbar[clicks.indices], Xbar[test_idx]
        K_nn = np.array([[k(a, b) for b in Xn] for a in Xn])
        K_sn = np.array([[k(a, b) for b in Xn] for a in Xs])
        K_ss = np.array([[k(a, b) for b in Xs] for a in Xs])
        ref_mu, ref_cov = oracles.dense_posterior(
            K_nn, K_sn, K_ss, m_xi, 1e-4, model.head.sigma2
        )
        scale = max(1.0, float(np.max(np.abs(ref_mu))))
        assert np.max(np.abs(mu - ref_mu)) / scale < 1e-10
        cscale = max(1.0, float(np.max(np.abs(ref_cov))))
        assert np.max(np.abs(cov - ref_cov)) / cscale < 1e-10


def test_exact_covariance_is_symmetric_near_psd():
    model = clicked_model(seed=5)
    fm = random_fm(40, 8, 8)
    clicks = random_clicks(41, fm.m, 6)
    idx = np.arange(0, fm.m, 3)
    _, cov = exact_posterior(fm, clicks, model.head, model.kp, 1e-6, idx)
    np.testing.assert_allclose(cov, cov.T, atol=1e-14)
    eigs = np.linalg.eigvalsh(cov)
    assert eigs.min() >= -1e-8 * (model.kp.eta0 + 1.0)


# -- moment agreement --------------------------------------------------------------


def test_pathwise_moments_match_exact_posterior():
    """Matched unit-RBF configuration; modest sample count for speed."""
    model = build_model(seed=0, concat_image=False, head_scheme="zero")
    model.kp.log_eta = np.zeros(BASE_FEATURE_DIM)
    model.ws = rff.unit_rbf_weight_space(2048, BASE_FEATURE_DIM, seed=0)
    fm = random_fm(50, 5, 6)
    clicks = random_clicks(51, fm.m, 4)
    eps2 = 1e-4
    mu, cov = exact_posterior(fm, clicks, model.head, model.kp, eps2,
                              np.arange(fm.m), concat_image=False)
    S = pathwise_sample_many(fm, clicks, model.head, model.kp, model.ws,
                             eps2, n_samples=6000, seed=3,
                             concat_image=False)
    emp_mu = S.mean(axis=1)
    emp_cov = np.cov(S)
    assert np.max(np.abs(emp_mu - mu)) < 8e-2
    assert np.max(np.abs(emp_cov - cov)) < 1.5e-1


# -- model container / predictor ---------------------------------------------------


def test_model_validation():
    model = clicked_model()
    with pytest.raises(InvalidInputError):
        GpModel(head=model.head,
                kp=default_kernel_params(BASE_FEATURE_DIM + 1),
                ws=model.ws, jitter=model.jitter, concat_image=True)


def test_predictor_cache_is_bitwise_transparent(desk_model):
    fm = random_fm(60, 12, 12)
    clicks = random_clicks(61, fm.m, 4)
    cached = Predictor(desk_model, fm)
    plain = Predictor(desk_model, fm, cache_phi=False)
    a = cached.predict(clicks, seed=7)
    b = plain.predict(clicks, seed=7)
    direct = predict(fm, clicks, desk_model.head, desk_model.kp,
                     desk_model.ws, desk_model.jitter.eps2_test, seed=7)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, direct)


def test_predictor_accepts_image_and_grids(desk_model):
    from conftest import random_image

    img = random_image(62, 9, 10)
    pred = Predictor(desk_model, img)
    clicks = ClickSet().with_click(13, 1)
    prob = pred.predict(clicks, seed=0)
    grid = pred.grid(prob)
    assert grid.shape == (9, 10)
    np.testing.assert_array_equal(grid.ravel(), prob)


def test_predictor_eps2_override(desk_model):
    fm = random_fm(63, 8, 8)
    clicks = random_clicks(64, fm.m, 3)
    pred = Predictor(desk_model, fm)
    a = pred.predict(clicks, seed=1)
    b = pred.predict(clicks, seed=1, eps2=1e-2)
    assert not np.array_equal(a, b)


def test_predict_averages_multiple_samples():
    model = clicked_model()
    fm = random_fm(65, 5, 5)
    clicks = random_clicks(66, fm.m, 2)
    args = (fm, clicks, model.head, model.kp, model.ws, 1e-4)
    p3 = predict(*args, seed=9, samples=3)
    singles = [pathwise_sample(*args, seed=9, sample_index=i).prob
               for i in range(3)]
    np.testing.assert_allclose(p3, np.mean(singles, axis=0), atol=1e-12)
