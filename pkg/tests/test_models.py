import numpy as np
import pytest

from ardvae.config import TrainConfig
from ardvae.data import Dataset
from ardvae.distributions import LOG_2PI
from ardvae.gradcheck import check_gradients, toy_problem
from ardvae.models import (
    ArdState,
    ModelState,
    Noise,
    Variant,
    build_model,
    compute_bound,
    draw_noise,
    estimate_test_score,
    gsgvb_ard_bound,
    lambda_closed_form_update,
    sgvb_ard_bound,
    sgvb_bound,
    trailing_mean,
)
from ardvae.network import mlp_forward
from ardvae.numerics import RngStream, finite_diff_grad
from ardvae.optim import train


def small_state(variant, seed=0, d=6, k=3, hidden=8):
    rng = RngStream(seed)
    st = build_model(variant, d, k, [hidden], rng.split("init"))
    for name, a in st.arrays().items():
        a += 0.2 * rng.split(name).standard_normal(a.shape)
    return st, rng.split("x").standard_normal((5, d))


def test_variant_parsing():
    assert Variant.parse("SGVB-ARD") is Variant.SGVB_ARD
    assert Variant.parse("gsgvb_ard") is Variant.GSGVB_ARD
    with pytest.raises(ValueError):
        Variant.parse("vae")


def test_model_state_invariants():
    st = build_model("sgvb", 6, 3, [8], RngStream(0))
    with pytest.raises(ValueError):
        ModelState(st.encoder, st.decoder, Variant.SGVB_ARD, None)
    with pytest.raises(ValueError):
        ModelState(st.encoder, st.decoder, Variant.SGVB, ArdState.initial(3))
    with pytest.raises(ValueError):
        ModelState(st.encoder, st.decoder, Variant.SGVB_ARD, ArdState.initial(4))


def test_ard_initial_state():
    a = ArdState.initial(5)
    np.testing.assert_array_equal(a.log_lambda, 0.0)
    np.testing.assert_array_equal(a.mu_tau, 1.0)
    np.testing.assert_array_equal(a.log_var_tau, 0.0)


def test_sgvb_decoupled_case():
    st, x = small_state(Variant.SGVB)
    for name, a in st.encoder.arrays().items():
        if name.startswith(("mean", "log_var")):
            a[...] = 0.0
    st.decoder.hidden[0].W[...] = 0.0  # decoder ignores z
    bd, _ = sgvb_bound(st, x, RngStream(1))
    assert bd.kl_z == 0.0
    mean, lv, _ = mlp_forward(st.decoder, np.zeros((1, 3)))
    ll = np.sum(-0.5 * LOG_2PI - 0.5 * lv - 0.5 * (x - mean) ** 2 / np.exp(lv), axis=1)
    assert bd.total == pytest.approx(ll.mean(), abs=1e-12)
    assert bd.kl_w == 0.0


@pytest.mark.parametrize("variant", list(Variant))
def test_breakdown_identity(variant):
    st, x = small_state(variant)
    for s in range(5):
        bd, _ = compute_bound(st, x, RngStream(s), kl_w_scale=0.1)
        assert abs(bd.total - (bd.recon - bd.kl_z - bd.kl_w)) <= 1e-12


def test_variant_mismatch_is_rejected():
    st, x = small_state(Variant.SGVB)
    with pytest.raises(ValueError, match="variant"):
        sgvb_ard_bound(st, x, RngStream(0))
    with pytest.raises(ValueError, match="variant"):
        gsgvb_ard_bound(st, x, RngStream(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_bound_reports_datapoint():
    st, x = small_state(Variant.SGVB)
    x[3, 2] = np.inf
    with pytest.raises(FloatingPointError, match="datapoint 3"):
        sgvb_bound(st, x, RngStream(0))


@pytest.mark.parametrize("variant,sizes,n_w,n_z", [
    (Variant.SGVB, (6, 8, 3), 1, 1),
    (Variant.SGVB, (4, 5, 2), 1, 3),
    (Variant.SGVB_ARD, (6, 8, 4), 1, 1),
    (Variant.SGVB_ARD, (6, 8, 4), 2, 3),
    (Variant.GSGVB_ARD, (6, 8, 3), 1, 1),
    (Variant.GSGVB_ARD, (4, 5, 2), 1, 1),
])
def test_gradients_match_finite_differences(variant, sizes, n_w, n_z):
    state, x, noise = toy_problem(variant, sizes, batch=4, seed=sum(sizes), n_w=n_w, n_z=n_z)
    kw = {"n_w": n_w, "n_z": n_z, "kl_w_scale": 0.25} if variant is Variant.SGVB_ARD else {}
    results = check_gradients(state, x, noise, **kw)
    assert {r.name for r in results} == set(state.arrays())
    bad = [(r.name, r.max_rel_error) for r in results if not r.ok]
    assert not bad


def test_unit_mask_reproduces_sgvb_terms():
    ard_state, x = small_state(Variant.SGVB_ARD)
    plain = ModelState(ard_state.encoder, ard_state.decoder, Variant.SGVB)
    ard_state.ard.mu_tau[...] = 1.0
    ard_state.ard.log_var_tau[...] = -30.0
    ard_state.ard.log_lambda[...] = 0.7
    noise = draw_noise(ard_state, x.shape[0], RngStream(4))
    a, _ = sgvb_ard_bound(ard_state, x, noise=noise, kl_w_scale=1.0)
    b, _ = sgvb_bound(plain, x, noise=Noise(eps_z=noise.eps_z))
    assert a.kl_z == b.kl_z
    assert a.recon == pytest.approx(b.recon, rel=1e-6)
    assert a.total == pytest.approx(b.total - a.kl_w, rel=1e-6)


def test_pruned_dimension_is_masked_out():
    st, x = small_state(Variant.SGVB_ARD)
    d = 1
    st.ard.mu_tau[d] = 0.0
    st.ard.log_var_tau[d] = -30.0
    noise = draw_noise(st, x.shape[0], RngStream(2))
    base, grads = sgvb_ard_bound(st, x, noise=noise)
    # decoder weights reading dimension d no longer matter
    st.decoder.hidden[0].W[:, d] += 10.0
    moved, _ = sgvb_ard_bound(st, x, noise=noise)
    assert moved.recon == pytest.approx(base.recon, rel=1e-6)
    # the encoder mean for dimension d gets only the KL pull
    st.decoder.hidden[0].W[:, d] -= 10.0
    mu_z, _, tape = mlp_forward(st.encoder, x)
    kl_only = (-mu_z[:, d] / x.shape[0]) @ tape.post[-1]
    # residual comes from the clamped relevance std e^-15
    np.testing.assert_allclose(grads["encoder.mean.W"][d], kl_only, rtol=1e-4)


def test_lambda_gradient_stationary_at_unit_posterior():
    st, x = small_state(Variant.SGVB_ARD)
    st.ard.mu_tau[...] = 0.0
    st.ard.log_var_tau[...] = 0.0
    st.ard.log_lambda[...] = 0.0
    _, g = sgvb_ard_bound(st, x, RngStream(0), kl_w_scale=1.0)
    np.testing.assert_allclose(g["ard.log_lambda"], 0.0, atol=1e-15)


def test_lambda_gradient_matches_derivative_of_kl():
    st, x = small_state(Variant.SGVB_ARD)
    st.ard.mu_tau[...] = [2.0, 0.1, -1.0]
    st.ard.log_var_tau[...] = np.log([0.5, 1.0, 2.0])
    lam = np.array([1.0, 0.3, 5.0])
    st.ard.log_lambda[...] = np.log(lam)
    _, g = sgvb_ard_bound(st, x, RngStream(0), kl_w_scale=1.0)
    mass = st.ard.mu_tau**2 + np.array([0.5, 1.0, 2.0])

    def neg_kl(loglam):
        lam_ = np.exp(loglam)
        return -0.5 * np.sum(loglam + mass / lam_ - 1.0 - np.log([0.5, 1.0, 2.0]))

    np.testing.assert_allclose(g["ard.log_lambda"], finite_diff_grad(neg_kl, np.log(lam)), rtol=1e-7)


def test_lambda_closed_form():
    a = ArdState(np.array([0.0, 2.0]), np.log([1.0, 0.5]), np.zeros(2))
    np.testing.assert_allclose(lambda_closed_form_update(a), [1.0, 4.5])
    rng = RngStream(3)
    for i in range(50):
        r = rng.split(i)
        b = ArdState(r.standard_normal(4), 3 * r.standard_normal(4), np.zeros(4))
        assert np.all(lambda_closed_form_update(b) > 0)


def test_closed_form_maximizes_negative_kl():
    mu, var = 2.0, 0.5
    lam_star = lambda_closed_form_update(ArdState(np.array([mu]), np.log([var]), np.zeros(1)))[0]

    def kl(lam):
        return 0.5 * (np.log(lam) - np.log(var) + (var + mu**2) / lam - 1)

    for lam in (lam_star * 0.9, lam_star * 1.1, 1.0, 10.0):
        assert kl(lam) > kl(lam_star)


def test_gsgvb_flat_relevance_factor_absorbed():
    st, x = small_state(Variant.GSGVB_ARD)
    st.ard.log_var_tau[...] = 30.0
    st.ard.mu_tau[...] = 5.0
    plain = ModelState(st.encoder, st.decoder, Variant.SGVB)
    eps = RngStream(5).standard_normal((x.shape[0], 3))
    a, _ = gsgvb_ard_bound(st, x, noise=Noise(eps_m=eps))
    b, _ = sgvb_bound(plain, x, noise=Noise(eps_z=eps[:, None, :]))
    assert a.recon == pytest.approx(b.recon, rel=1e-9)


def test_trailing_mean_examples():
    assert trailing_mean([3.0, 1.0, 4.0], 1) == 4.0
    assert trailing_mean([2.5] * 10, 4) == 2.5
    assert trailing_mean(list(range(1, 101)), 100) == 50.5
    with pytest.raises(ValueError):
        trailing_mean([], 3)
    with pytest.raises(ValueError):
        trailing_mean([1.0], 0)


def test_estimate_test_score_is_seeded():
    st, x = small_state(Variant.SGVB_ARD)
    a = estimate_test_score(st, x, 10, RngStream(1))
    b = estimate_test_score(st, x, 10, RngStream(1))
    assert a == b
    assert np.isfinite(a[1]) and a[1] > 0
    with pytest.raises(ValueError):
        estimate_test_score(st, np.zeros((0, 6)), 5, RngStream(1))


def ppca_loglik(X, k):
    """Maximum-likelihood probabilistic PCA, average log-likelihood per row (closed form)."""
    n, D = X.shape
    S = np.cov(X.T, bias=True)
    vals = np.sort(np.linalg.eigvalsh(S))[::-1]
    sigma2 = vals[k:].mean()
    C_logdet = np.sum(np.log(vals[:k])) + (D - k) * np.log(sigma2)
    # tr(C^-1 S) = k + (D-k) at the optimum
    return -0.5 * (D * LOG_2PI + C_logdet + D)


@pytest.mark.slow
def test_linear_sgvb_approaches_ppca_likelihood():
    rng = RngStream(77)
    D, k, n = 6, 2, 2000
    A = rng.split("A").standard_normal((D, k))
    X = rng.split("s").standard_normal((n, k)) @ A.T + 0.3 * rng.split("e").standard_normal((n, D))
    X -= X.mean(axis=0)
    cfg = TrainConfig(variant="sgvb", latent_dim=k, hidden_sizes=[], learning_rate=3e-3, batch_size=200,
                      iterations=4000, seed=1, standardize="none", eval_every=0, shared_log_var=True)
    res = train(cfg, Dataset(X))
    final = np.mean([compute_bound(res.state, X, RngStream(9).split(i), want_grad=False)[0].total
                     for i in range(20)])
    exact = ppca_loglik(X, k)
    assert final <= exact + 0.05
    assert abs(final - exact) <= 0.05 * abs(exact)
