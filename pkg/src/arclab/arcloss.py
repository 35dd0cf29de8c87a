"""Training objectives and the alternating update schedule.

Losses return exact parameter gradients computed from one forward/backward
evaluation.  Sign conventions (fixed jointly by the min-max objective and the
contrastive term): discriminator logits are fakeness scores, the generator
descends the relativistic loss, the discriminator ascends it.

Draw order from the supplied Generator is part of each loss's contract so that
fixed-seed replay reproduces a loss surface exactly (the finite-difference
tests rely on this):

    rf_loss:     eps (n,d), then t (n,)
    compute_LR / compute_LS:
                 eps_t (n,d), t (n,), s (n,), eps_real (n,d), eps_gen (n,d)
    compute_LC:  s (n,), eps (n,d), then the prompt permutation
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .flowcore import LogitNormalSpec, LogSnrRange, sample_pdisc, sample_pgen, sigmoid
from .optim import AdamW, grads_add
from .toydata import LabeledBatch

__all__ = [
    "LossConfig",
    "PairedLogits",
    "f_log_sigmoid",
    "relativistic_pair_loss",
    "rf_loss",
    "compute_LR",
    "compute_LC",
    "compute_LS",
    "LeastSquaresLosses",
    "arc_step",
    "generator_half_step",
    "discriminator_half_step",
    "ArcOptimizer",
    "ArcStepStats",
    "random_derangement",
]


@dataclass(frozen=True)
class LossConfig:
    lambda_c: float = 1.0
    gen_range: LogSnrRange = LogSnrRange(-6.0, 2.0)
    disc_spec: LogitNormalSpec = LogitNormalSpec(0.0, 1.0, 0.5)
    adversarial_kind: str = "relativistic"
    derangement: bool = True

    def __post_init__(self):
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be >= 0")
        if self.adversarial_kind not in ("relativistic", "least_squares"):
            raise ValueError(f"unknown adversarial_kind {self.adversarial_kind!r}")


@dataclass(frozen=True)
class PairedLogits:
    delta_gen: float
    delta_real: float


def f_log_sigmoid(x):
    """log(sigmoid(x)) = -log(1 + e^-x), stable for |x| up to 1e4 and beyond:
    f(x) = min(x, 0) - log1p(e^-|x|)."""
    arr = np.asarray(x, dtype=float)
    out = np.minimum(arr, 0.0) - np.log1p(np.exp(-np.abs(arr)))
    return float(out) if out.ndim == 0 else out


def relativistic_pair_loss(pair: PairedLogits) -> float:
    """f(delta_gen - delta_real): the log Bradley-Terry probability that the
    generated member of the pair is scored more fake than the real one."""
    return f_log_sigmoid(pair.delta_gen - pair.delta_real)


def random_derangement(n, rng):
    """Uniform permutation of range(n) without fixed points (rejection)."""
    if n < 2:
        raise ValueError("derangements need n >= 2")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


def _check_finite(loss, what, diagnostics=None):
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite {what}: {loss}", diagnostics)


def rf_loss(net, batch: LabeledBatch, rng, gen_range: LogSnrRange):
    """Flow-matching regression: mean over the batch of |v - net(x_t,t,c)|^2
    with per-item noise and per-item t uniform in log-SNR."""
    x0, c = batch.samples, batch.prompts
    n = len(batch)
    eps = rng.standard_normal(x0.shape)
    t = sample_pgen(gen_range, rng, size=n)
    x_t = (1.0 - t[:, None]) * x0 + t[:, None] * eps
    target = eps - x0
    pred, cache = net.velocity_with_cache(x_t, t, c)
    resid = pred - target
    loss = float(np.sum(resid * resid) / n)
    _check_finite(loss, "rf_loss")
    grads, _ = net.backward(cache, 2.0 * resid / n)
    return loss, grads


def _paired_forward(gen, disc, batch: LabeledBatch, cfg: LossConfig, rng, trace=None):
    """Shared construction for the adversarial losses: noise real data at
    t ~ p_gen, denoise with the generator, then re-noise the real/generated
    pair at one shared s ~ p_disc with independent noise draws per side."""
    x0, c = batch.samples, batch.prompts
    n = len(batch)
    eps_t = rng.standard_normal(x0.shape)
    t = sample_pgen(cfg.gen_range, rng, size=n)
    s = sample_pdisc(cfg.disc_spec, rng, size=n)
    eps_real = rng.standard_normal(x0.shape)
    eps_gen = rng.standard_normal(x0.shape)

    x_t = (1.0 - t[:, None]) * x0 + t[:, None] * eps_t
    v, gen_cache = gen.velocity_with_cache(x_t, t, c)
    xhat0 = x_t - t[:, None] * v
    s_col = s[:, None]
    xs_real = (1.0 - s_col) * x0 + s_col * eps_real
    xs_gen = (1.0 - s_col) * xhat0 + s_col * eps_gen
    d_gen, cache_g = disc.logit_with_cache(xs_gen, s, c)
    d_real, cache_r = disc.logit_with_cache(xs_real, s, c)
    if trace is not None:
        trace.update(
            t=t, s=s, x_t=x_t, xhat0=xhat0, xs_real=xs_real, xs_gen=xs_gen,
            d_gen=d_gen, d_real=d_real,
        )
    return t, s, d_gen, d_real, gen_cache, cache_g, cache_r


def _gen_grads_from_disc_input(gen, gen_cache, dxs_gen, t, s):
    """Chain an upstream gradient at the re-noised generated sample back to the
    generator parameters: xs_gen = (1-s)*xhat0, xhat0 = x_t - t*v."""
    dxhat0 = (1.0 - s[:, None]) * dxs_gen
    dv = -t[:, None] * dxhat0
    grads, _ = gen.backward(gen_cache, dv)
    return grads


def compute_LR(gen, disc, batch: LabeledBatch, cfg: LossConfig, rng, trace=None):
    """Relativistic adversarial loss mean f(delta_gen - delta_real).

    Returns (loss, gen_grads, disc_grads); both gradient sets come from the one
    evaluation and consumers use the side they update.
    """
    n = len(batch)
    t, s, d_gen, d_real, gen_cache, cache_g, cache_r = _paired_forward(
        gen, disc, batch, cfg, rng, trace
    )
    margins = d_gen - d_real
    loss = float(np.mean(f_log_sigmoid(margins)))
    _check_finite(loss, "relativistic loss", {"d_gen": d_gen, "d_real": d_real})
    dmargin = sigmoid(-margins) / n  # f'(x) = sigmoid(-x)
    disc_g_side, dxs_gen = disc.backward(cache_g, dmargin)
    disc_r_side, _ = disc.backward(cache_r, -dmargin)
    disc_grads = grads_add(disc_g_side, disc_r_side)
    gen_grads = _gen_grads_from_disc_input(gen, gen_cache, dxs_gen, t, s)
    return loss, gen_grads, disc_grads


def compute_LC(disc, batch: LabeledBatch, rng, disc_spec: LogitNormalSpec,
               permutation=None, derangement=True):
    """Contrastive discriminator loss mean f(delta(x_s, s, P[c]) - delta(x_s, s, c)).

    The same noised input is scored under the shuffled and the true prompt; the
    permutation defaults to a uniform random derangement (fixed points only add
    a constant -ln 2 with zero gradient).  Discriminator gradients only.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("contrastive loss needs batch size >= 2")
    x0, c = batch.samples, batch.prompts
    s = sample_pdisc(disc_spec, rng, size=n)
    eps = rng.standard_normal(x0.shape)
    x_s = (1.0 - s[:, None]) * x0 + s[:, None] * eps
    if permutation is None:
        permutation = random_derangement(n, rng) if derangement else rng.permutation(n)
    permutation = np.asarray(permutation, dtype=int)
    d_mis, cache_mis = disc.logit_with_cache(x_s, s, c[permutation])
    d_match, cache_match = disc.logit_with_cache(x_s, s, c)
    margins = d_mis - d_match
    loss = float(np.mean(f_log_sigmoid(margins)))
    _check_finite(loss, "contrastive loss", {"d_mis": d_mis, "d_match": d_match})
    dmargin = sigmoid(-margins) / n
    g_mis, _ = disc.backward(cache_mis, dmargin)
    g_match, _ = disc.backward(cache_match, -dmargin)
    return loss, grads_add(g_mis, g_match)


@dataclass
class LeastSquaresLosses:
    gen_loss: float
    disc_loss: float
    gen_grads: dict
    disc_grads: dict


def compute_LS(gen, disc, batch: LabeledBatch, cfg: LossConfig, rng, trace=None):
    """Least-squares ablation on the same noised inputs as compute_LR.

    Discriminator minimizes (delta_real - 0)^2 + (delta_gen - 1)^2; generator
    minimizes (delta_gen - 0)^2 (targets: real -> 0, fake -> 1 for D; fake -> 0
    for G, consistent with higher logit = more fake).
    """
    n = len(batch)
    t, s, d_gen, d_real, gen_cache, cache_g, cache_r = _paired_forward(
        gen, disc, batch, cfg, rng, trace
    )
    disc_loss = float(np.mean(d_real**2 + (d_gen - 1.0) ** 2))
    gen_loss = float(np.mean(d_gen**2))
    _check_finite(disc_loss, "least-squares disc loss")
    _check_finite(gen_loss, "least-squares gen loss")
    g_r, _ = disc.backward(cache_r, 2.0 * d_real / n)
    g_g, _ = disc.backward(cache_g, 2.0 * (d_gen - 1.0) / n)
    disc_grads = grads_add(g_r, g_g)
    _, dxs_gen = disc.backward(cache_g, 2.0 * d_gen / n)
    gen_grads = _gen_grads_from_disc_input(gen, gen_cache, dxs_gen, t, s)
    return LeastSquaresLosses(gen_loss, disc_loss, gen_grads, disc_grads)


@dataclass
class ArcOptimizer:
    """Bundles the two AdamW states used by the alternating schedule."""

    gen_opt: AdamW
    disc_opt: AdamW


@dataclass
class ArcStepStats:
    gen_loss: float
    disc_adv_loss: float
    disc_contrastive_loss: float


def generator_half_step(gen, disc, batch: LabeledBatch, cfg: LossConfig,
                        opt: ArcOptimizer, rng) -> float:
    """One generator update descending its adversarial loss; psi untouched."""
    if cfg.adversarial_kind == "relativistic":
        gen_loss, gen_grads, _ = compute_LR(gen, disc, batch, cfg, rng)
    else:
        ls = compute_LS(gen, disc, batch, cfg, rng)
        gen_loss, gen_grads = ls.gen_loss, ls.gen_grads
    opt.gen_opt.update(gen.params, gen_grads)
    return gen_loss


def discriminator_half_step(gen, disc, batch: LabeledBatch, cfg: LossConfig,
                            opt: ArcOptimizer, rng):
    """One discriminator update ascending (adversarial + lambda_c * contrastive);
    phi untouched.  When lambda_c == 0 the contrastive loss is never evaluated."""
    if cfg.adversarial_kind == "relativistic":
        disc_adv_loss, _, adv_grads = compute_LR(gen, disc, batch, cfg, rng)
        disc_grads = {k: -v for k, v in adv_grads.items()}
    else:
        ls = compute_LS(gen, disc, batch, cfg, rng)
        disc_adv_loss, disc_grads = ls.disc_loss, ls.disc_grads
    lc_loss = 0.0
    if cfg.lambda_c > 0:
        lc_loss, lc_grads = compute_LC(disc, batch, rng, cfg.disc_spec,
                                       derangement=cfg.derangement)
        disc_grads = grads_add(disc_grads, lc_grads, scale=-cfg.lambda_c)
    opt.disc_opt.update(disc.params, disc_grads)
    return disc_adv_loss, lc_loss


def arc_step(gen, disc, batch_G: LabeledBatch, batch_D: LabeledBatch,
             cfg: LossConfig, opt: ArcOptimizer, rng, order="gd") -> ArcStepStats:
    """One alternation on fresh batches with fresh noise: a generator update
    (discriminator frozen) and a discriminator update (generator frozen), in
    the given order ("gd" or "dg")."""
    if order == "gd":
        gen_loss = generator_half_step(gen, disc, batch_G, cfg, opt, rng)
        disc_adv_loss, lc_loss = discriminator_half_step(gen, disc, batch_D, cfg, opt, rng)
    elif order == "dg":
        disc_adv_loss, lc_loss = discriminator_half_step(gen, disc, batch_D, cfg, opt, rng)
        gen_loss = generator_half_step(gen, disc, batch_G, cfg, opt, rng)
    else:
        raise ValueError(f"unknown update order {order!r}")
    return ArcStepStats(gen_loss, disc_adv_loss, lc_loss)
