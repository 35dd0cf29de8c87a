"""Shared fixtures and oracle helpers for the test suite."""

import numpy as np
import pytest

from arclab.nets import Topology, VelocityNet, init_from_pretrained


# ---------------------------------------------------------------------------
# finite-difference oracle

def fd_gradient_check(params, loss_fn, analytic, rng, n_coords=200, h=1e-4, floor=1e-6):
    """Worst relative error between `analytic` gradients and central finite
    differences of loss_fn() over randomly chosen parameter coordinates.

    loss_fn must recompute the loss from the (mutated) params with identical
    randomness; analytic maps param name -> gradient array.
    """
    coords = [(name, i) for name, arr in params.items() for i in range(arr.size)]
    take = min(n_coords, len(coords))
    chosen = rng.choice(len(coords), size=take, replace=False)
    worst = 0.0
    for ci in chosen:
        name, flat = coords[ci]
        arr = params[name]
        orig = arr.flat[flat]
        arr.flat[flat] = orig + h
        lp = loss_fn()
        arr.flat[flat] = orig - h
        lm = loss_fn()
        arr.flat[flat] = orig
        fd = (lp - lm) / (2.0 * h)
        an = analytic[name].flat[flat] if name in analytic else 0.0
        rel = abs(an - fd) / max(abs(an), abs(fd), floor)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# empirical-distribution oracles

def ks_statistic_uniform(values, lo, hi):
    """One-sample Kolmogorov-Smirnov statistic against Uniform(lo, hi)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    cdf = (x - lo) / (hi - lo)
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(0, n) / n)
    return max(upper, lower)


def ks_statistic_two_sample(a, b):
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    both = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, both, side="right") / a.size
    cdf_b = np.searchsorted(b, both, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


# ---------------------------------------------------------------------------
# tiny-net fixtures (width <= 8 keeps finite differences fast)

TINY_TOPO = Topology(d=2, K=4, width=8, hidden=4, embed_dim=4, time_freqs=3, head_blocks=4)


@pytest.fixture
def tiny_velocity():
    return VelocityNet.init(TINY_TOPO, np.random.default_rng(11))


@pytest.fixture
def tiny_pair(tiny_velocity):
    """Generator + discriminator with a randomized (non-zero) head so gradient
    flow through every parameter is non-trivial."""
    gen, disc = init_from_pretrained(tiny_velocity, np.random.default_rng(12))
    head_rng = np.random.default_rng(13)
    for name, arr in disc.params.items():
        if name.startswith(("hw", "hb", "hg", "hbeta")) or name in ("w_out", "b_out"):
            disc.params[name] = arr + 0.3 * head_rng.standard_normal(arr.shape)
    return gen, disc


class FixedNormalRng:
    """Duck-typed rng whose normal() returns a constant (test hook for the
    shifted logit-normal arithmetic)."""

    def __init__(self, value=0.0):
        self.value = value

    def normal(self, mean, std, size=None):
        if size is None:
            return mean + std * self.value
        return np.full(size, mean + std * self.value)
