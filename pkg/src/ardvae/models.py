"""Variational bounds for SGVB, SGVB-ARD and GSGVB-ARD with exact gradients.

All bounds are reported per datapoint and their gradients point uphill
(they are gradients of the bound, not of a loss).

The ARD variants multiply each latent dimension by a relevance weight ``w_d``
with prior ``N(0, lambda_d)`` and global posterior ``N(mu_tau_d, var_tau_d)``.
SGVB-ARD samples ``z`` and ``w`` separately and feeds ``z * w`` to the
decoder. GSGVB-ARD replaces the pair by a single Gaussian ``m`` whose
posterior is the normalized density product of ``q(z|x)`` and ``q(w)`` and
whose prior is the product of ``N(0, 1)`` and ``N(0, lambda)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import LOG_2PI, clamp_log_var
from .network import ForwardTape, MlpParams, init_params, mlp_backward, mlp_forward
from .numerics import DTYPE, RngStream, as_matrix

GradientSet = dict  # name -> ndarray, keyed like ModelState.arrays()


class Variant(str, enum.Enum):
    SGVB = "sgvb"
    SGVB_ARD = "sgvb_ard"
    GSGVB_ARD = "gsgvb_ard"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for v in cls:
            if key in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")


class NonFiniteBoundError(FloatingPointError):
    def __init__(self, index: int, what: str = "bound"):
        super().__init__(f"non-finite {what} at datapoint {index}")
        self.index = index


@dataclass
class ArdState:
    mu_tau: np.ndarray
    log_var_tau: np.ndarray
    log_lambda: np.ndarray

    def __post_init__(self):
        n = len(self.mu_tau)
        if len(self.log_var_tau) != n or len(self.log_lambda) != n:
            raise ValueError("ARD vectors must all have the latent dimension")

    @classmethod
    def initial(cls, latent_dim: int) -> "ArdState":
        # posterior mean 1 makes the masked model start out like plain SGVB
        return cls(np.ones(latent_dim), np.zeros(latent_dim), np.zeros(latent_dim))

    @property
    def var_tau(self) -> np.ndarray:
        return np.exp(clamp_log_var(self.log_var_tau)[0])

    @property
    def lam(self) -> np.ndarray:
        return np.exp(clamp_log_var(self.log_lambda)[0])

    def arrays(self) -> dict[str, np.ndarray]:
        return {"mu_tau": self.mu_tau, "log_var_tau": self.log_var_tau, "log_lambda": self.log_lambda}

    def copy(self) -> "ArdState":
        return ArdState(self.mu_tau.copy(), self.log_var_tau.copy(), self.log_lambda.copy())


@dataclass
class ModelState:
    encoder: MlpParams
    decoder: MlpParams
    variant: Variant
    ard: ArdState | None = None
    likelihood: str = "gaussian"

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.likelihood not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if (self.ard is None) != (self.variant is Variant.SGVB):
            raise ValueError(f"variant {self.variant.value} {'needs' if self.ard is None else 'takes no'} ARD state")
        k = self.encoder.n_out
        if self.decoder.n_in != k:
            raise ValueError(f"encoder emits {k} latents but decoder takes {self.decoder.n_in}")
        if self.ard is not None and len(self.ard.mu_tau) != k:
            raise ValueError(f"ARD state has {len(self.ard.mu_tau)} dims, latent space has {k}")
        if self.encoder.n_in != self.decoder.n_out:
            raise ValueError(f"encoder input {self.encoder.n_in} != decoder output {self.decoder.n_out}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    @property
    def data_dim(self) -> int:
        return self.encoder.n_in

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.arrays().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.arrays().items()})
        if self.ard is not None:
            out.update({f"ard.{k}": v for k, v in self.ard.arrays().items()})
        return out

    def copy(self) -> "ModelState":
        return ModelState(self.encoder.copy(), self.decoder.copy(), self.variant,
                          None if self.ard is None else self.ard.copy(), self.likelihood)


def build_model(variant, data_dim: int, latent_dim: int, hidden_sizes: Sequence[int], rng: RngStream,
                likelihood: str = "gaussian", shared_log_var: bool = False,
                decoder_hidden_sizes: Sequence[int] | None = None) -> ModelState:
    variant = Variant.parse(variant)
    hidden = [int(h) for h in hidden_sizes]
    dec_hidden = hidden[::-1] if decoder_hidden_sizes is None else [int(h) for h in decoder_hidden_sizes]
    encoder = init_params([data_dim, *hidden, latent_dim], rng.split("encoder"))
    decoder = init_params([latent_dim, *dec_hidden, data_dim], rng.split("decoder"), shared_log_var=shared_log_var)
    ard = None if variant is Variant.SGVB else ArdState.initial(latent_dim)
    return ModelState(encoder, decoder, variant, ard, likelihood)


@dataclass
class BoundBreakdown:
    total: float
    recon: float
    kl_z: float
    kl_w: float

    @classmethod
    def from_terms(cls, recon: float, kl_z: float, kl_w: float) -> "BoundBreakdown":
        return cls(recon - kl_z - kl_w, recon, kl_z, kl_w)


@dataclass
class Noise:
    """Standard-normal draws consumed by one bound evaluation (kept for replay)."""

    eps_z: np.ndarray | None = None  # (B, n_z, K)
    eps_w: np.ndarray | None = None  # (B, n_w, K)
    eps_m: np.ndarray | None = None  # (B, K)

    @property
    def batch_size(self) -> int:
        for e in (self.eps_z, self.eps_m):
            if e is not None:
                return e.shape[0]
        raise ValueError("empty noise record")


def draw_noise(state: ModelState, batch_size: int, rng: RngStream, n_w: int = 1, n_z: int = 1) -> Noise:
    if n_w < 1 or n_z < 1:
        raise ValueError(f"n_w and n_z must be >= 1, got {n_w}, {n_z}")
    k = state.latent_dim
    if state.variant is Variant.GSGVB_ARD:
        return Noise(eps_m=rng.split("m").standard_normal((batch_size, k)))
    eps_z = rng.split("z").standard_normal((batch_size, n_z, k))
    eps_w = rng.split("w").standard_normal((batch_size, n_w, k)) if state.variant is Variant.SGVB_ARD else None
    return Noise(eps_z=eps_z, eps_w=eps_w)


# ---------------------------------------------------------------------------
# shared pieces


def _loglik(state: ModelState, x: np.ndarray, dec_in: np.ndarray):
    """Per-row log p(x | decoder input) and its gradients w.r.t. the decoder heads."""
    mean, lv_raw, tape = mlp_forward(state.decoder, dec_in)
    if state.likelihood == "gaussian":
        lv, inside = clamp_log_var(lv_raw)
        inv_var = np.exp(-lv)
        r = x - mean
        r2 = r * r * inv_var
        ll = (-0.5 * LOG_2PI - 0.5 * lv - 0.5 * r2).sum(axis=1)
        d_mean = r * inv_var
        d_lv = (0.5 * r2 - 0.5) * inside
    else:
        ll = (x * mean - np.logaddexp(0.0, mean)).sum(axis=1)
        d_mean = x - 0.5 * (1.0 + np.tanh(0.5 * mean))
        d_lv = np.zeros_like(lv_raw)
    return ll, tape, d_mean, d_lv


def _check_rows(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        raise NonFiniteBoundError(int(np.flatnonzero(bad)[0]), what)


def _prefixed(prefix: str, grads: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in grads.items()}


@dataclass
class _Pass:
    recon: np.ndarray  # per datapoint
    kl_z: np.ndarray  # per datapoint
    kl_w: float  # global, already scaled
    grads: GradientSet | None = None
    extras: dict = field(default_factory=dict)


def _encode(state: ModelState, x: np.ndarray):
    mu_z, lv_raw, tape = mlp_forward(state.encoder, x)
    lv_z, inside = clamp_log_var(lv_raw)
    return mu_z, lv_z, inside, tape


def _encoder_grads(state: ModelState, tape: ForwardTape, g_mu, g_lv) -> dict:
    grads, _ = mlp_backward(state.encoder, tape, g_mu, g_lv)
    return _prefixed("encoder", grads)


def _weight_kl(ard: ArdState):
    """KL(N(mu_tau, var_tau) || N(0, lambda)) and its partials."""
    lv_t, in_t = clamp_log_var(ard.log_var_tau)
    ll, in_l = clamp_log_var(ard.log_lambda)
    var_t = np.exp(lv_t)
    lam = np.exp(ll)
    mass = var_t + ard.mu_tau**2
    kl = 0.5 * np.sum(np.expm1(lv_t - ll) - (lv_t - ll) + ard.mu_tau**2 / lam)
    d_mu = ard.mu_tau / lam
    d_lv = 0.5 * (var_t / lam - 1.0) * in_t
    d_ll = 0.5 * (1.0 - mass / lam) * in_l
    return kl, d_mu, d_lv, d_ll


# ---------------------------------------------------------------------------
# per-variant passes


def _sgvb_pass(state: ModelState, x: np.ndarray, noise: Noise, want_grad: bool, kl_w_scale: float) -> _Pass:
    B = x.shape[0]
    mu_z, lv_z, in_z, etape = _encode(state, x)
    std_z = np.exp(0.5 * lv_z)
    eps_z = noise.eps_z
    n_z = eps_z.shape[1]
    z = mu_z[:, None, :] + std_z[:, None, :] * eps_z  # (B, n_z, K)
    K = z.shape[-1]
    ard = state.ard if state.variant is Variant.SGVB_ARD else None

    if ard is None:
        n_w = 1
        dec_in = z.reshape(B * n_z, K)
    else:
        lv_t, in_t = clamp_log_var(ard.log_var_tau)
        std_t = np.exp(0.5 * lv_t)
        eps_w = noise.eps_w
        n_w = eps_w.shape[1]
        w = ard.mu_tau + std_t * eps_w  # (B, n_w, K)
        m = w[:, :, None, :] * z[:, None, :, :]  # (B, n_w, n_z, K)
        dec_in = m.reshape(B * n_w * n_z, K)

    S = n_w * n_z
    x_rep = np.repeat(x, S, axis=0)
    ll, dtape, d_mean, d_lv = _loglik(state, x_rep, dec_in)
    recon = ll.reshape(B, S).mean(axis=1)
    kl_z = 0.5 * np.sum(mu_z**2 + np.expm1(lv_z) - lv_z, axis=1)
    kl_w = 0.0
    if ard is not None:
        kl_raw, d_mu_t, d_lv_t, d_ll = _weight_kl(ard)
        kl_w = kl_w_scale * kl_raw

    out = _Pass(recon, kl_z, kl_w)
    if not want_grad:
        return out

    c = 1.0 / (B * S)
    dec_grads, g_in = mlp_backward(state.decoder, dtape, c * d_mean, c * d_lv)
    grads = _prefixed("decoder", dec_grads)
    if ard is None:
        g_z = g_in.reshape(B, n_z, K)
    else:
        g_m = g_in.reshape(B, n_w, n_z, K)
        g_z = (g_m * w[:, :, None, :]).sum(axis=1)
        g_w = (g_m * z[:, None, :, :]).sum(axis=2)
    g_mu_z = g_z.sum(axis=1) - mu_z / B
    g_lv_z = ((g_z * eps_z).sum(axis=1) * 0.5 * std_z - 0.5 * (np.exp(lv_z) - 1.0) / B) * in_z
    grads.update(_encoder_grads(state, etape, g_mu_z, g_lv_z))
    if ard is not None:
        grads["ard.mu_tau"] = g_w.sum(axis=(0, 1)) - kl_w_scale * d_mu_t
        grads["ard.log_var_tau"] = (g_w * eps_w).sum(axis=(0, 1)) * 0.5 * std_t * in_t - kl_w_scale * d_lv_t
        grads["ard.log_lambda"] = -kl_w_scale * d_ll
    out.grads = {name: grads[name] for name in state.arrays()}
    return out


def _gsgvb_pass(state: ModelState, x: np.ndarray, noise: Noise, want_grad: bool) -> _Pass:
    B = x.shape[0]
    ard = state.ard
    mu_z, lv_z, in_z, etape = _encode(state, x)
    lv_t, in_t = clamp_log_var(ard.log_var_tau)
    ll_lam, in_l = clamp_log_var(ard.log_lambda)
    mu_t = ard.mu_tau

    # posterior over m: precision-weighted product of q(z|x) and q(w)
    a = np.exp(-lv_z)  # (B, K)
    b = np.exp(-lv_t)  # (K,)
    P = a + b
    var_m = 1.0 / P
    lv_m = -np.log(P)
    mu_m = var_m * (a * mu_z + b * mu_t)
    std_m = np.sqrt(var_m)
    m = mu_m + std_m * noise.eps_m

    # prior over m: N(0,1) x N(0,lambda) -> N(0, lambda / (1 + lambda))
    lam = np.exp(ll_lam)
    lv_p = ll_lam - np.log1p(lam)
    var_p = np.exp(lv_p)

    ll, dtape, d_mean, d_lv = _loglik(state, x, m)
    kl_m = 0.5 * np.sum(np.expm1(lv_m - lv_p) - (lv_m - lv_p) + mu_m**2 / var_p, axis=1)
    out = _Pass(ll, kl_m, 0.0)
    if not want_grad:
        return out

    c = 1.0 / B
    dec_grads, g_in = mlp_backward(state.decoder, dtape, c * d_mean, c * d_lv)
    grads = _prefixed("decoder", dec_grads)
    g_mu_m = g_in - c * mu_m / var_p
    g_lv_m = g_in * 0.5 * std_m * noise.eps_m - c * 0.5 * (var_m / var_p - 1.0)
    g_lv_p = -c * 0.5 * (1.0 - (var_m + mu_m**2) / var_p)

    wa = a / P
    wb = b / P
    g_mu_z = g_mu_m * wa
    g_lv_z = (g_lv_m * wa - g_mu_m * wa * (mu_z - mu_m)) * in_z
    grads.update(_encoder_grads(state, etape, g_mu_z, g_lv_z))
    grads["ard.mu_tau"] = (g_mu_m * wb).sum(axis=0)
    grads["ard.log_var_tau"] = (g_lv_m * wb - g_mu_m * wb * (mu_t - mu_m)).sum(axis=0) * in_t
    grads["ard.log_lambda"] = g_lv_p.sum(axis=0) / (1.0 + lam) * in_l
    out.grads = {name: grads[name] for name in state.arrays()}
    out.extras = {"mu_m": mu_m, "lv_m": lv_m, "lv_p": lv_p}
    return out


def _run(state: ModelState, batch, rng, noise, want_grad, n_w=1, n_z=1, kl_w_scale=1.0) -> _Pass:
    x = as_matrix(batch)
    if x.shape[1] != state.data_dim:
        raise ValueError(f"batch has {x.shape[1]} columns, model expects {state.data_dim}")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = draw_noise(state, x.shape[0], rng, n_w, n_z)
    if noise.batch_size != x.shape[0]:
        raise ValueError(f"noise drawn for {noise.batch_size} rows, batch has {x.shape[0]}")
    if state.variant is Variant.GSGVB_ARD:
        p = _gsgvb_pass(state, x, noise, want_grad)
    else:
        p = _sgvb_pass(state, x, noise, want_grad, kl_w_scale)
    _check_rows(p.recon - p.kl_z, "bound")
    if p.grads is not None:
        for name, g in p.grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
    return p


def _breakdown(p: _Pass) -> BoundBreakdown:
    return BoundBreakdown.from_terms(float(p.recon.mean()), float(p.kl_z.mean()), float(p.kl_w))


def _require(state: ModelState, variant: Variant) -> None:
    if state.variant is not variant:
        raise ValueError(f"model variant is {state.variant.value}, this bound needs {variant.value}")


def sgvb_bound(state: ModelState, batch, rng: RngStream | None = None, *, noise: Noise | None = None,
               n_z: int = 1, want_grad: bool = True) -> tuple[BoundBreakdown, GradientSet | None]:
    """Plain SGVB bound averaged over the batch, one reparametrized z per datapoint by default."""
    _require(state, Variant.SGVB)
    p = _run(state, batch, rng, noise, want_grad, n_z=n_z)
    return _breakdown(p), p.grads


def sgvb_ard_bound(state: ModelState, batch, rng: RngStream | None = None, *, n_w: int = 1, n_z: int = 1,
                   kl_w_scale: float = 1.0, noise: Noise | None = None,
                   want_grad: bool = True) -> tuple[BoundBreakdown, GradientSet | None]:
    """Doubly stochastic bound: ``n_w`` relevance samples times ``n_z`` latent samples per datapoint.

    ``kl_w_scale`` multiplies the global KL(q(w) || N(0, Lambda)); use
    ``1 / N_train`` to count it once per epoch, or 1 for the literal
    per-datapoint form.
    """
    _require(state, Variant.SGVB_ARD)
    p = _run(state, batch, rng, noise, want_grad, n_w=n_w, n_z=n_z, kl_w_scale=kl_w_scale)
    return _breakdown(p), p.grads


def gsgvb_ard_bound(state: ModelState, batch, rng: RngStream | None = None, *, noise: Noise | None = None,
                    want_grad: bool = True) -> tuple[BoundBreakdown, GradientSet | None]:
    """Gaussian-product bound: one sample of ``m`` and a single KL(q(m|x) || p(m)) per datapoint.

    The regularizer is reported in ``kl_z``; ``kl_w`` is always 0.
    """
    _require(state, Variant.GSGVB_ARD)
    p = _run(state, batch, rng, noise, want_grad)
    return _breakdown(p), p.grads


def compute_bound(state: ModelState, batch, rng: RngStream | None = None, *, noise: Noise | None = None,
                  n_w: int = 1, n_z: int = 1, kl_w_scale: float = 1.0,
                  want_grad: bool = True) -> tuple[BoundBreakdown, GradientSet | None]:
    """Dispatch to the bound matching ``state.variant``."""
    if state.variant is Variant.SGVB:
        return sgvb_bound(state, batch, rng, noise=noise, n_z=n_z, want_grad=want_grad)
    if state.variant is Variant.SGVB_ARD:
        return sgvb_ard_bound(state, batch, rng, n_w=n_w, n_z=n_z, kl_w_scale=kl_w_scale,
                              noise=noise, want_grad=want_grad)
    return gsgvb_ard_bound(state, batch, rng, noise=noise, want_grad=want_grad)


def per_point_bound(state: ModelState, batch, rng: RngStream, n_samples: int = 1) -> np.ndarray:
    """Per-datapoint bound, excluding the global weight KL, averaged over ``n_samples`` draws."""
    x = as_matrix(batch)
    acc = np.zeros(x.shape[0])
    for s in range(n_samples):
        p = _run(state, x, rng.split(s), None, want_grad=False)
        acc += p.recon - p.kl_z
    return acc / n_samples


def lambda_closed_form_update(ard: ArdState) -> np.ndarray:
    """Prior variances maximizing -KL(q(w) || N(0, Lambda)): ``mu_tau**2 + var_tau``."""
    return ard.mu_tau**2 + ard.var_tau


def _log_normal(x, mean, log_var):
    return np.sum(-0.5 * LOG_2PI - 0.5 * log_var - 0.5 * (x - mean) ** 2 * np.exp(-log_var), axis=-1)


def importance_log_likelihood(state: ModelState, batch, rng: RngStream, n_samples: int = 10_000,
                              chunk: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Importance-sampled log p(x) per datapoint with the variational posterior as proposal.

    Returns ``(estimate, standard_error)``; the error is a delta-method
    estimate for the log of the weight mean.
    """
    x = as_matrix(batch)
    B, K = x.shape[0], state.latent_dim
    mu_z, lv_z, _, _ = _encode(state, x)
    logw = np.empty((B, n_samples))
    ard = state.ard
    for start in range(0, n_samples, chunk):
        S = min(chunk, n_samples - start)
        stream = rng.split(start)
        eps = stream.split("z").standard_normal((B, S, K))
        if state.variant is Variant.GSGVB_ARD:
            a = np.exp(-lv_z)
            b = np.exp(-clamp_log_var(ard.log_var_tau)[0])
            var_m = 1.0 / (a + b)
            mu_m = var_m * (a * mu_z + b * ard.mu_tau)
            lv_m = np.log(var_m)
            lam = ard.lam
            lv_p = np.log(lam) - np.log1p(lam)
            code = mu_m[:, None, :] + np.sqrt(var_m)[:, None, :] * eps
            log_prior = _log_normal(code, 0.0, lv_p)
            log_q = _log_normal(code, mu_m[:, None, :], lv_m[:, None, :])
            dec_in = code
        else:
            z = mu_z[:, None, :] + np.exp(0.5 * lv_z)[:, None, :] * eps
            log_prior = _log_normal(z, 0.0, 0.0)
            log_q = _log_normal(z, mu_z[:, None, :], lv_z[:, None, :])
            dec_in = z
            if state.variant is Variant.SGVB_ARD:
                lv_t = clamp_log_var(ard.log_var_tau)[0]
                w = ard.mu_tau + np.exp(0.5 * lv_t) * stream.split("w").standard_normal((B, S, K))
                log_prior = log_prior + _log_normal(w, 0.0, np.log(ard.lam))
                log_q = log_q + _log_normal(w, ard.mu_tau, lv_t)
                dec_in = z * w
        ll, _, _, _ = _loglik(state, np.repeat(x, S, axis=0), dec_in.reshape(B * S, K))
        logw[:, start:start + S] = ll.reshape(B, S) + log_prior - log_q
    top = logw.max(axis=1, keepdims=True)
    wts = np.exp(logw - top)
    mean_w = wts.mean(axis=1)
    est = top[:, 0] + np.log(mean_w)
    se = wts.std(axis=1, ddof=1) / np.sqrt(n_samples) / mean_w
    return est, se


def trailing_mean(scores: Sequence[float], window: int) -> float:
    """Mean of the last ``window`` entries of a score history."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(scores) == 0:
        raise ValueError("no scores recorded")
    return float(np.mean(np.asarray(scores[-window:], dtype=DTYPE)))


def estimate_test_score(state: ModelState, test_data, window: int, rng: RngStream, *,
                        n_w: int = 1, n_z: int = 1, kl_w_scale: float = 1.0) -> tuple[float, float]:
    """Average ``window`` independent stochastic evaluations of the bound on ``test_data``.

    Returns ``(mean, standard_error)`` in nats per datapoint.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = as_matrix(test_data)
    if x.shape[0] == 0:
        raise ValueError("empty test set")
    totals = [compute_bound(state, x, rng.split(i), n_w=n_w, n_z=n_z, kl_w_scale=kl_w_scale,
                            want_grad=False)[0].total for i in range(window)]
    se = float(np.std(totals, ddof=1) / np.sqrt(window)) if window > 1 else float("nan")
    return trailing_mean(totals, window), se
