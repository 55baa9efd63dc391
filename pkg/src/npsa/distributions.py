"""Reparameterized samplers and closed-form KLs (Weibull, Gamma, generalized gamma, Gaussian).

Functions taking distribution parameters accept either :class:`~npsa.tensor.Tensor`
or plain arrays and return tensors, so the same code serves the training
loss and the numeric checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from npsa import tensor as T
from npsa.tensor import DomainError, Tensor

EULER_GAMMA = 0.5772156649015329
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class WeibullParams:
    k: float
    lam: Tensor

    def __post_init__(self):
        object.__setattr__(self, "lam", T.as_tensor(self.lam))
        if not self.k > 0:
            raise DomainError(f"Weibull shape must be positive, got {self.k}")
        if np.any(self.lam.data <= 0):
            raise DomainError("Weibull scale must be positive")


@dataclass(frozen=True)
class GammaParams:
    alpha: Tensor
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", T.as_tensor(self.alpha))
        if not self.beta > 0:
            raise DomainError(f"Gamma rate must be positive, got {self.beta}")
        if np.any(self.alpha.data <= 0):
            raise DomainError("Gamma shape must be positive")


@dataclass(frozen=True)
class DiagGaussianParams:
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        object.__setattr__(self, "mu", T.as_tensor(self.mu))
        object.__setattr__(self, "sigma", T.as_tensor(self.sigma))
        if self.mu.shape != self.sigma.shape:
            raise T.DimensionError("mu and sigma shapes differ")


# ----------------------------------------------------------------- Weibull


def weibull_noise_factor(eps, k):
    """``(-log(1 - eps))**(1/k)``: the parameter-free part of the inverse CDF."""
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0) or np.any(eps >= 1):
        raise DomainError("Weibull noise must lie strictly inside (0, 1)")
    return (-np.log1p(-eps)) ** (1.0 / k)


def weibull_rsample(p: WeibullParams, eps):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != p.lam.shape:
        raise T.DimensionError(f"noise shape {eps.shape} != scale shape {p.lam.shape}")
    return T.mul(p.lam, weibull_noise_factor(eps, p.k))


def weibull_moments(p: WeibullParams):
    g1 = special.gamma(1.0 + 1.0 / p.k)
    g2 = special.gamma(1.0 + 2.0 / p.k)
    lam = p.lam.data
    return lam * g1, lam**2 * (g2 - g1**2)


def weibull_cdf(x, k, lam):
    x = np.asarray(x, dtype=np.float64)
    return -np.expm1(-((np.maximum(x, 0.0) / lam) ** k))


def kl_weibull_gamma(q: WeibullParams, p: GammaParams, log_lam=None):
    """Elementwise KL(Weibull(k, lam) || Gamma(alpha, beta)), unclamped.

    ``log_lam`` may be passed when the caller already holds log-scales
    (e.g. from a log-softmax), which keeps tiny scales finite.
    """
    k, beta = q.k, p.beta
    lam, alpha = q.lam, p.alpha
    if log_lam is None:
        log_lam = T.log(lam)
    const = math.log(k) - EULER_GAMMA - 1.0
    # gamma*alpha/k - alpha*log(beta) folded into a single scale on alpha
    a_coef = EULER_GAMMA / k - math.log(beta)
    lam_coef = beta * math.gamma(1.0 + 1.0 / k)
    out = T.scale(alpha, a_coef)
    out = T.sub(out, T.mul(alpha, log_lam))
    out = T.add(out, T.scale(lam, lam_coef))
    out = T.add(out, T.lgamma(alpha))
    return T.add(out, const)


def kl_generalized_gamma(f1, f2):
    """KL between two Stacy generalized-gamma densities given as (a, d, p)."""
    a1, d1, p1 = (float(v) for v in f1)
    a2, d2, p2 = (float(v) for v in f2)
    if min(a1, d1, p1, a2, d2, p2) <= 0:
        raise DomainError("generalized-gamma parameters must be positive")
    lg = math.lgamma
    return (
        math.log(p1) + d2 * math.log(a2) + lg(d2 / p2)
        - math.log(p2) - d1 * math.log(a1) - lg(d1 / p1)
        + (special.digamma(d1 / p1) / p1 + math.log(a1)) * (d1 - d2)
        + math.exp(lg((d1 + p2) / p1) - lg(d1 / p1)) * (a1 / a2) ** p2
        - d1 / p1
    )


# ---------------------------------------------------------------- Gaussian


def gaussian_rsample(p: DiagGaussianParams, eps):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != p.mu.shape:
        raise T.DimensionError(f"noise shape {eps.shape} != mean shape {p.mu.shape}")
    return T.add(p.mu, T.mul(p.sigma, eps))


def kl_diag_gaussian(q: DiagGaussianParams, p: DiagGaussianParams):
    """Sum over dimensions of KL(N(mu_q, s_q) || N(mu_p, s_p))."""
    var_ratio = T.div(T.mul(q.sigma, q.sigma), T.mul(p.sigma, p.sigma))
    diff = T.div(T.sub(q.mu, p.mu), p.sigma)
    per_dim = T.sub(T.add(var_ratio, T.mul(diff, diff)), T.log(var_ratio))
    return T.scale(T.sub(T.sum(per_dim), float(per_dim.size)), 0.5)


def gaussian_log_likelihood(y, mu, sigma):
    """Per-point log N(y | mu, sigma), summed over the trailing output axis."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    mu, sigma = T.as_tensor(mu), T.as_tensor(sigma)
    if y.shape != mu.shape or mu.shape != sigma.shape:
        raise T.DimensionError(f"shapes {y.shape}, {mu.shape}, {sigma.shape} differ")
    z = T.div(T.sub(y, mu), sigma)
    per = T.neg(T.add(T.log(sigma), T.scale(T.mul(z, z), 0.5)))
    per = T.sub(per, HALF_LOG_2PI)
    return T.sum_axis(per, -1) if per.ndim > 1 else per


def gaussian_log_likelihood_np(y, mu, sigma):
    """Array twin of :func:`gaussian_log_likelihood` (same operation order)."""
    z = (y - mu) / sigma
    per = -(np.log(sigma) + (z * z) * 0.5) - HALF_LOG_2PI
    return per.sum(axis=-1) if per.ndim > 1 else per
