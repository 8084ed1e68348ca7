"""Finite-difference verification of the bound gradients with replayed noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelState, Noise, Variant, build_model, compute_bound, draw_noise
from .network import mlp_forward
from .numerics import RngStream

TOLERANCE = 1e-4


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def relu_pattern(state: ModelState, x, noise: Noise) -> np.ndarray:
    """Sign pattern of every hidden pre-activation touched by one bound evaluation."""
    mu_z, lv_z, etape = mlp_forward(state.encoder, x)
    lv_z = np.clip(lv_z, -30, 30)
    if state.variant is Variant.GSGVB_ARD:
        a = np.exp(-lv_z)
        b = np.exp(-np.clip(state.ard.log_var_tau, -30, 30))
        code = (a * mu_z + b * state.ard.mu_tau) / (a + b) + noise.eps_m / np.sqrt(a + b)
    else:
        z = mu_z[:, None, :] + np.exp(0.5 * lv_z)[:, None, :] * noise.eps_z
        if state.variant is Variant.SGVB_ARD:
            w = state.ard.mu_tau + np.exp(0.5 * np.clip(state.ard.log_var_tau, -30, 30)) * noise.eps_w
            z = w[:, :, None, :] * z[:, None, :, :]
        code = z.reshape(-1, state.latent_dim)
    _, _, dtape = mlp_forward(state.decoder, code)
    return np.concatenate([(p > 0).ravel() for p in etape.pre + dtape.pre])


@dataclass
class BlockResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def check_gradients(state: ModelState, x, noise: Noise, h: float = 1e-5, kink_margin: float = 10.0,
                    corrupt: bool = False, **bound_kw) -> list[BlockResult]:
    """Compare analytic gradients of the bound with central differences, block by block.

    Coordinates whose ``+-kink_margin*h`` perturbation flips a ReLU are
    skipped. ``corrupt`` perturbs the analytic gradient (harness self-test).
    """
    _, grads = compute_bound(state, x, noise=noise, **bound_kw)
    results = []
    for name, arr in state.arrays().items():
        analytic = grads[name].copy()
        if corrupt:
            analytic = analytic * 1.01 + 1e-3
        flat = arr.reshape(-1)
        fd = np.zeros(flat.size)
        keep = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + kink_margin * h
            hi = relu_pattern(state, x, noise)
            flat[i] = orig - kink_margin * h
            lo = relu_pattern(state, x, noise)
            if not np.array_equal(hi, lo):
                keep[i] = False
                flat[i] = orig
                continue
            flat[i] = orig + h
            fp = compute_bound(state, x, noise=noise, want_grad=False, **bound_kw)[0].total
            flat[i] = orig - h
            fm = compute_bound(state, x, noise=noise, want_grad=False, **bound_kw)[0].total
            flat[i] = orig
            fd[i] = (fp - fm) / (2 * h)
        err = relative_error(fd[keep], analytic.reshape(-1)[keep])
        results.append(BlockResult(name, float(err.max()) if err.size else 0.0, int(keep.sum()),
                                   int((~keep).sum())))
    return results


def toy_problem(variant, sizes=(6, 8, 3), batch: int = 4, seed: int = 0, n_w: int = 1, n_z: int = 1,
                perturb: float = 0.3):
    """A small randomized model, batch and noise record for gradient checks.

    Parameters are jittered away from their initial values so that the
    log-variance heads and relevance parameters are not at special points.
    """
    d_in, hidden, latent = sizes
    rng = RngStream(seed, ("gradcheck",))
    state = build_model(variant, d_in, latent, [hidden], rng.split("init"))
    for name, a in state.arrays().items():
        a += perturb * rng.split("jitter").split(name).standard_normal(a.shape)
    x = rng.split("x").standard_normal((batch, d_in))
    noise = draw_noise(state, batch, rng.split("noise"), n_w=n_w, n_z=n_z)
    return state, x, noise
