"""CNP / NP / ANP / NPSA assemblies, their objectives, and prediction.

All four families share one parameter dictionary layout keyed by dotted
names. Stochastic inputs are explicit: a :class:`Noise` carries the Gaussian
draw for the global latent and the uniform draws for the attention weights,
so a forward pass is a deterministic function of (params, task, noise).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from npsa import layers
from npsa import tensor as T
from npsa.distributions import (
    DiagGaussianParams,
    GammaParams,
    WeibullParams,
    gaussian_log_likelihood,
    gaussian_rsample,
    kl_diag_gaussian,
    kl_weibull_gamma,
    weibull_noise_factor,
)

FAMILIES = ("CNP", "NP", "ANP", "NPSA")
ALPHA_FLOOR = 1e-4
LATENT_SIGMA_FLOOR = 0.1


@dataclass
class ModelConfig:
    family: str = "NPSA"
    d_x: int = 1
    d_y: int = 1
    d_h: int = 64
    heads: int = 8
    l_pre: int = 3
    l_post: int = 1
    l_dec: int = 3
    l_prior: int = 2
    l_qk: int = 2
    K: float = 300.0
    beta: float = 1.0
    sigma_floor: float = 0.01
    lambda_rule: str = "divide"
    weight_decay: float = 0.0
    iwae_samples: int = 1
    use_attn_kl: bool = True
    attn_kl_weight: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if min(self.d_x, self.d_y, self.d_h, self.heads) < 1:
            raise ValueError("dimensions and head count must be positive")
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by heads={self.heads}")
        if min(self.l_pre, self.l_post, self.l_dec, self.l_prior) < 1 or self.l_qk < 0:
            raise ValueError("layer counts must be >= 1 (l_qk >= 0)")
        if not self.K > 0 or not self.beta > 0:
            raise ValueError("K and beta must be positive")
        if not 0 < self.sigma_floor < 1:
            raise ValueError("sigma_floor must lie in (0, 1)")
        if self.lambda_rule not in ("divide", "multiply"):
            raise ValueError("lambda_rule must be 'divide' or 'multiply'")
        if self.iwae_samples < 1 or self.weight_decay < 0:
            raise ValueError("iwae_samples >= 1 and weight_decay >= 0 required")

    @property
    def has_latent(self):
        return self.family != "CNP"

    @property
    def has_attention(self):
        return self.family in ("ANP", "NPSA")

    @property
    def stochastic(self):
        return self.family != "CNP"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Noise:
    z: np.ndarray | None = None
    attn: np.ndarray | None = None


@dataclass
class LatentOutput:
    z: T.Tensor
    q_context: DiagGaussianParams
    q_target: DiagGaussianParams | None
    kl_z: T.Tensor | None


@dataclass
class AttnOutput:
    """Cross-attention result. ``lam``/``alpha``/``kl_total`` only for NPSA.

    ``weights`` columns follow the canonical context order; ``order`` maps
    canonical position -> caller's context index.
    """

    weights: T.Tensor
    local_rep: T.Tensor
    order: np.ndarray
    w_standard: T.Tensor | None = None
    lam: T.Tensor | None = None
    alpha: T.Tensor | None = None
    kl_total: T.Tensor | None = None

    def weights_in_caller_order(self):
        w = np.empty_like(self.weights.data)
        w[..., self.order] = self.weights.data
        return w


StochAttnOutput = AttnOutput


@dataclass
class ForwardOut:
    mu: T.Tensor
    sigma: T.Tensor
    latent: LatentOutput | None = None
    attn: AttnOutput | None = None


@dataclass
class LossBreakdown:
    total: T.Tensor
    recon: float
    kl_z_term: float
    kl_w_term: float
    out: ForwardOut | None = field(default=None, repr=False)


# --------------------------------------------------------------- parameters


def init_params(cfg: ModelConfig, seed):
    rng = np.random.default_rng(seed)
    p = {}
    dx, dy, dh = cfg.d_x, cfg.d_y, cfg.d_h
    if cfg.family == "CNP":
        layers.init_mlp(p, rng, "det_pre", cfg.l_pre, dx + dy, dh, dh)
        layers.init_mlp(p, rng, "det_post", cfg.l_post, dh, dh, dh)
    if cfg.has_latent:
        layers.init_mlp(p, rng, "lat_pre", cfg.l_pre, dx + dy, dh, dh)
        layers.init_mlp(p, rng, "lat_post", cfg.l_post, dh, dh, 2 * dh)
    if cfg.has_attention:
        layers.init_mlp(p, rng, "det_pre", cfg.l_pre, dx + dy, dh, dh)
        d_qk = dx
        if cfg.l_qk:
            layers.init_mlp(p, rng, "qk", cfg.l_qk, dx, dh, dh)
            d_qk = dh
        layers.init_attention(p, rng, "attn", d_qk, d_qk, dh, dh)
    if cfg.family == "NPSA":
        layers.init_mlp(p, rng, "prior", cfg.l_prior, dx, dh, 1)
    d_rep = 2 * dh if cfg.has_attention else dh
    layers.init_mlp(p, rng, "dec", cfg.l_dec, dx + d_rep, dh, 2 * dy)
    return p


def n_parameters(params):
    return int(np.sum([t.size for t in params.values()]))


# ------------------------------------------------------------------- pieces


def canonical_order(x, y):
    """Lexicographic order of context rows; makes every set reduction order-free."""
    keys = np.concatenate([x, y], axis=1)
    return np.lexsort(keys.T[::-1])


def deterministic_encoder(params, cfg, x_c, y_c):
    if len(x_c) == 0:
        raise ValueError("deterministic encoder needs at least one context point")
    h = layers.mlp_forward(params, "det_pre", cfg.l_pre, np.concatenate([x_c, y_c], axis=1))
    return layers.mlp_forward(params, "det_post", cfg.l_post, T.reshape(T.mean_axis(h, 0), (1, -1)))


def latent_encoder(params, cfg, x, y):
    if len(x) == 0:
        raise ValueError("latent encoder needs at least one point")
    h = layers.mlp_forward(params, "lat_pre", cfg.l_pre, np.concatenate([x, y], axis=1))
    out = layers.mlp_forward(params, "lat_post", cfg.l_post, T.mean_axis(h, 0))
    mu = T.slice_last(out, 0, cfg.d_h)
    raw = T.slice_last(out, cfg.d_h, 2 * cfg.d_h)
    sigma = T.add(T.scale(T.sigmoid(raw), 1.0 - LATENT_SIGMA_FLOOR), LATENT_SIGMA_FLOOR)
    return DiagGaussianParams(mu, sigma)


def embed_qk(params, cfg, x):
    """Shared query/key embedding of raw inputs (identity when ``l_qk == 0``)."""
    return layers.mlp_forward(params, "qk", cfg.l_qk, x) if cfg.l_qk else x


def mha_deterministic(params, cfg, x_t, x_c, values, order=None):
    if len(x_c) == 0:
        raise ValueError("attention needs at least one key")
    logits = layers.attention_logits(params, "attn", embed_qk(params, cfg, x_t),
                                     embed_qk(params, cfg, x_c), cfg.heads)
    w = T.softmax(logits)
    rep = layers.attention_readout(params, "attn", w, values, cfg.heads)
    order = np.arange(len(x_c)) if order is None else order
    return AttnOutput(weights=w, local_rep=rep, order=order, w_standard=w)


def prior_shape(params, cfg, x_c):
    raw = layers.mlp_forward(params, "prior", cfg.l_prior, x_c)
    return T.add(T.softplus(T.reshape(raw, (len(x_c),))), ALPHA_FLOOR)


def mha_stochastic(params, cfg, x_t, x_c, values, eps, order=None):
    """Weibull-reparameterized cross-attention with a key-based Gamma prior.

    ``eps`` has shape [heads, n_target, n_context] in (0, 1).
    """
    if len(x_c) == 0:
        raise ValueError("attention needs at least one key")
    logits = layers.attention_logits(params, "attn", embed_qk(params, cfg, x_t),
                                     embed_qk(params, cfg, x_c), cfg.heads)
    if eps.shape != logits.shape:
        raise T.DimensionError(f"attention noise {eps.shape} != logits {logits.shape}")
    k = cfg.K
    log_w = T.log_softmax(logits)
    w_standard = T.exp(log_w)
    log_g = math.lgamma(1.0 + 1.0 / k)
    shift = -log_g if cfg.lambda_rule == "divide" else log_g
    lam = T.scale(w_standard, math.exp(shift))
    log_lam = T.add(log_w, shift)
    w_hat = T.mul(lam, weibull_noise_factor(eps, k))
    w = T.normalize_last(w_hat)

    alpha = prior_shape(params, cfg, x_c)
    heads, n, m = logits.shape
    kl_total = None
    # unregularized weights can underflow to exactly 0, outside the Weibull domain
    if cfg.use_attn_kl:
        alpha_b = T.expand(alpha, (heads, n))
        kl = kl_weibull_gamma(WeibullParams(k, lam), GammaParams(alpha_b, cfg.beta), log_lam=log_lam)
        kl_total = T.scale(T.sum(kl), 1.0 / (heads * n))

    rep = layers.attention_readout(params, "attn", w, values, cfg.heads)
    order = np.arange(m) if order is None else order
    return AttnOutput(weights=w, local_rep=rep, order=order, w_standard=w_standard,
                      lam=lam, alpha=alpha, kl_total=kl_total)


def decoder(params, cfg, x_t, reps):
    """reps: list of [n, d_h] tensors placed before x (i.e. [z, r_i, x_i])."""
    h = T.concat(list(reps) + [T.as_tensor(x_t)], axis=-1)
    out = layers.mlp_forward(params, "dec", cfg.l_dec, h)
    mu = T.slice_last(out, 0, cfg.d_y)
    raw = T.slice_last(out, cfg.d_y, 2 * cfg.d_y)
    sigma = T.add(T.scale(T.softplus(raw), 1.0 - cfg.sigma_floor), cfg.sigma_floor)
    return mu, sigma


# ------------------------------------------------------------------ forward


def sample_noise(cfg: ModelConfig, n_target, n_context, rng):
    """Fresh noise for one forward pass: z draw first, then attention cells."""
    z = rng.standard_normal(cfg.d_h) if cfg.has_latent else None
    attn = None
    if cfg.family == "NPSA":
        u = rng.random((cfg.heads, n_target, n_context))
        attn = np.clip(u, np.finfo(float).tiny, 1.0 - 2.0**-53)
    return Noise(z=z, attn=attn)


def forward(params, cfg: ModelConfig, task, noise: Noise | None, mode="train", deterministic=False):
    """One pass over ``task``.

    mode='train' samples z from q(z | targets) and reports the latent KL;
    mode='eval' samples z from q(z | context) and never reads target y.
    ``deterministic`` replaces every draw by its mean (non-paper evaluation).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x_c = np.asarray(task.x_context, dtype=np.float64)
    y_c = np.asarray(task.y_context, dtype=np.float64)
    x_t = np.asarray(task.x_target, dtype=np.float64)
    if x_c.shape[1] != cfg.d_x or y_c.shape[1] != cfg.d_y or x_t.shape[1] != cfg.d_x:
        raise T.DimensionError("task dimensions do not match the model config")
    order = canonical_order(x_c, y_c)
    x_c, y_c = x_c[order], y_c[order]
    n = len(x_t)
    reps = []
    latent = None
    attn = None

    if cfg.family == "CNP":
        r = deterministic_encoder(params, cfg, x_c, y_c)
        reps.append(T.expand(T.reshape(r, (cfg.d_h,)), (n,)))

    if cfg.has_latent:
        q_c = latent_encoder(params, cfg, x_c, y_c)
        q_t, kl_z = None, None
        if mode == "train":
            y_t = np.asarray(task.y_target, dtype=np.float64)
            q_t = latent_encoder(params, cfg, x_t, y_t)
            kl_z = kl_diag_gaussian(q_t, q_c)
        q = q_t if mode == "train" else q_c
        z = q.mu if deterministic else gaussian_rsample(q, noise.z)
        latent = LatentOutput(z=z, q_context=q_c, q_target=q_t, kl_z=kl_z)
        reps.append(T.expand(z, (n,)))

    if cfg.has_attention:
        values = layers.mlp_forward(params, "det_pre", cfg.l_pre, np.concatenate([x_c, y_c], axis=1))
        if cfg.family == "ANP":
            attn = mha_deterministic(params, cfg, x_t, x_c, values, order)
        else:
            eps = noise.attn[..., order] if not deterministic else np.full(
                (cfg.heads, n, len(x_c)), -math.expm1(-1.0))
            attn = mha_stochastic(params, cfg, x_t, x_c, values, eps, order)
        reps.append(attn.local_rep)

    mu, sigma = decoder(params, cfg, x_t, reps)
    return ForwardOut(mu=mu, sigma=sigma, latent=latent, attn=attn)


# ------------------------------------------------------------------- losses


def _single_loss(params, cfg, task, noise):
    out = forward(params, cfg, task, noise, mode="train")
    n = len(task.x_target)
    ll = gaussian_log_likelihood(task.y_target, out.mu, out.sigma)
    recon = T.neg(T.mean(ll))
    total = recon
    kl_z_term = kl_w_term = None
    if out.latent is not None:
        kl_z_term = T.scale(out.latent.kl_z, 1.0 / n)
        total = T.add(total, kl_z_term)
    if cfg.family == "NPSA" and cfg.use_attn_kl:
        kl_w_term = T.scale(out.attn.kl_total, cfg.attn_kl_weight)
        total = T.add(total, kl_w_term)
    return total, recon, kl_z_term, kl_w_term, out


def loss(params, cfg: ModelConfig, task, noise):
    """Per-task objective (negative ELBO per target point).

    ``noise`` is a single :class:`Noise`, or a list of them for the
    importance-weighted variant (log-mean-exp over per-sample ELBOs).
    """
    if isinstance(noise, (list, tuple)):
        if len(noise) == 1:
            noise = noise[0]
        else:
            return _iwae_loss(params, cfg, task, noise)
    total, recon, kz, kw, out = _single_loss(params, cfg, task, noise)
    return LossBreakdown(
        total=total,
        recon=float(recon.data),
        kl_z_term=0.0 if kz is None else float(kz.data),
        kl_w_term=0.0 if kw is None else float(kw.data),
        out=out,
    )


def _iwae_loss(params, cfg, task, noises):
    n = len(task.x_target)
    s = len(noises)
    parts = [_single_loss(params, cfg, task, nz) for nz in noises]
    log_w = T.stack([T.scale(p[0], -float(n)) for p in parts])
    total = T.scale(T.sub(T.logsumexp(log_w), math.log(s)), -1.0 / n)
    kz = float(np.mean([0.0 if p[2] is None else p[2].data for p in parts]))
    kw = float(np.mean([0.0 if p[3] is None else p[3].data for p in parts]))
    return LossBreakdown(total=total, recon=float(total.data) - kz - kw,
                         kl_z_term=kz, kl_w_term=kw, out=parts[0][4])


loss_cnp = loss_np = loss_npsa = loss


def training_noise(cfg: ModelConfig, task, rng):
    draws = [sample_noise(cfg, len(task.x_target), len(task.x_context), rng)
             for _ in range(cfg.iwae_samples)]
    return draws if cfg.iwae_samples > 1 else draws[0]


# --------------------------------------------------------------- prediction


def predict(params, cfg: ModelConfig, task, mode="eval", seed=0, deterministic=False):
    """Per-target (mu, sigma) arrays from one Monte-Carlo draw seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    noise = sample_noise(cfg, len(task.x_target), len(task.x_context), rng)
    out = forward(params, cfg, task, noise, mode=mode, deterministic=deterministic)
    return out.mu.data, out.sigma.data
