"""Diagonal Gaussians parametrized by mean and log-variance.

Arrays may carry leading batch axes; the last axis is the event dimension and
every density or divergence is summed over it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, RngStream

LOG_VAR_MIN = -30.0
LOG_VAR_MAX = 30.0
LOG_2PI = float(np.log(2.0 * np.pi))


def clamp_log_var(log_var) -> tuple[np.ndarray, np.ndarray]:
    """Clip log-variances to the supported range.

    Returns the clipped values and a mask of entries that were inside the
    range, which is the derivative of the clip.
    """
    lv = np.asarray(log_var, dtype=DTYPE)
    inside = (lv >= LOG_VAR_MIN) & (lv <= LOG_VAR_MAX)
    return np.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX), inside.astype(DTYPE)


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=DTYPE)
        lv = np.asarray(self.log_var, dtype=DTYPE)
        if mean.shape != lv.shape:
            raise ValueError(f"mean shape {mean.shape} != log_var shape {lv.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", clamp_log_var(lv)[0])

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.zeros(dim))

    @classmethod
    def from_var(cls, mean, var) -> "DiagGaussian":
        return cls(mean, np.log(np.asarray(var, dtype=DTYPE)))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1] if self.mean.ndim else 1

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def _check_dims(a: DiagGaussian, b: DiagGaussian) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def log_density(g: DiagGaussian, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=DTYPE)
    if (x.shape[-1] if x.ndim else 1) != g.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1] if x.ndim else 1}, distribution has {g.dim}")
    terms = -0.5 * LOG_2PI - 0.5 * g.log_var - (x - g.mean) ** 2 / (2.0 * g.var)
    return terms.sum(axis=-1) if terms.ndim else float(terms)


def kl_to_std_normal(q: DiagGaussian) -> np.ndarray | float:
    """KL(q || N(0, I))."""
    terms = 0.5 * (q.mean**2 + np.expm1(q.log_var) - q.log_var)  # expm1 avoids cancellation near lv=0
    return terms.sum(axis=-1) if terms.ndim else float(terms)


def kl_diag_to_diag(q: DiagGaussian, p: DiagGaussian) -> np.ndarray | float:
    """KL(q || p) for two diagonal Gaussians of equal dimension."""
    _check_dims(q, p)
    d = q.log_var - p.log_var
    terms = 0.5 * (np.expm1(d) - d + (q.mean - p.mean) ** 2 / p.var)
    return terms.sum(axis=-1) if terms.ndim else float(terms)


def reparam_sample(g: DiagGaussian, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``mean + std * eps``; returns ``(sample, eps)``."""
    eps = rng.standard_normal(g.mean.shape)
    return g.mean + g.std * eps, eps


def _precision_product(mean_a, log_var_a, mean_b, log_var_b) -> DiagGaussian:
    prec_a = np.exp(-log_var_a)
    prec_b = np.exp(-log_var_b)
    var = 1.0 / (prec_a + prec_b)
    mean = var * (prec_a * mean_a + prec_b * mean_b)
    return DiagGaussian(mean, np.log(var))


def gaussian_product_posterior(q_z: DiagGaussian, q_w: DiagGaussian) -> DiagGaussian:
    """Normalized product of the encoder posterior and relevance posterior densities."""
    _check_dims(q_z, q_w)
    return _precision_product(q_z.mean, q_z.log_var, q_w.mean, q_w.log_var)


def gaussian_product_prior(p_z: DiagGaussian, p_w: DiagGaussian) -> DiagGaussian:
    """Normalized product of the latent and relevance prior densities.

    Each mean is weighted by its own factor's precision. With ``p_z = N(0, 1)``
    and ``p_w = N(0, lam)`` this is ``N(0, lam / (1 + lam))``.
    """
    _check_dims(p_z, p_w)
    return _precision_product(p_z.mean, p_z.log_var, p_w.mean, p_w.log_var)
