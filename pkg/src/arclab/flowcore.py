"""Rectified-flow core: linear interpolant, log-SNR transforms, timestep laws,
and the Euler ODE sampler.

Time convention: t in [0, 1] with 0 = data and 1 = noise.  The interpolant
x_t = (1-t)*x0 + t*eps has SNR(t) = ((1-t)/t)^2, so its log-SNR is
lambda = 2*ln((1-t)/t) and conversely t = sigmoid(-lambda/2).

All sampling operations take an explicit numpy Generator and are pure given it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError

__all__ = [
    "LogSnrRange",
    "LogitNormalSpec",
    "sigmoid",
    "noise",
    "velocity_target",
    "logsnr_to_t",
    "t_to_logsnr",
    "sample_pgen",
    "sample_pdisc",
    "euler_sample",
]


def sigmoid(x):
    """Numerically stable logistic function; scalar in, scalar out."""
    arr = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LogSnrRange:
    """Closed log-SNR interval; lo == hi is the degenerate point mass."""

    lo: float = -6.0
    hi: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("log-SNR bounds must be finite")
        if self.lo > self.hi:
            raise ValueError(f"need lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class LogitNormalSpec:
    """Shifted logit-normal law for discriminator noise levels.

    t0 = sigmoid(N(mean, std^2)); t = shift*t0 / (1 + (shift-1)*t0).
    shift = 1 is the plain logit-normal; shift < 1 moves mass toward low t
    (mid-to-high SNR).
    """

    mean: float = 0.0
    std: float = 1.0
    shift: float = 0.5

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")
        if self.shift <= 0:
            raise ValueError("shift must be positive")


def _align_time(t, x):
    """Broadcast a per-row time vector against a batch of row vectors."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 1 and x.ndim == 2:
        if t.shape[0] != x.shape[0]:
            raise ValueError(f"time vector length {t.shape[0]} != batch size {x.shape[0]}")
        return t[:, None]
    return t


def noise(x0, eps, t):
    """Forward corruption (1-t)*x0 + t*eps.

    x0 and eps must have identical shape ((d,) or (n, d)); t is a scalar or a
    length-n vector applied row-wise.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = _align_time(t, x0)
    return (1.0 - t) * x0 + t * eps


def velocity_target(x0, eps):
    """Regression target of the flow: eps - x0."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs eps {eps.shape}")
    return eps - x0


def logsnr_to_t(lam):
    """t = 1 / (1 + exp(lam/2)); monotone decreasing in lam."""
    lam = np.asarray(lam, dtype=float)
    return sigmoid(-lam / 2.0)


def t_to_logsnr(t):
    """lam = 2*ln((1-t)/t); defined for t strictly inside (0, 1)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("log-SNR is infinite at t in {0, 1}")
    out = 2.0 * np.log((1.0 - arr) / arr)
    return float(out) if out.ndim == 0 else out


def sample_pgen(gen_range: LogSnrRange, rng, size=None):
    """Noise level t whose log-SNR is uniform on [lo, hi]."""
    lam = rng.uniform(gen_range.lo, gen_range.hi, size)
    return logsnr_to_t(lam)


def sample_pdisc(spec: LogitNormalSpec, rng, size=None):
    """Noise level t from the shifted logit-normal law; always in (0, 1)."""
    u = rng.normal(spec.mean, spec.std, size)
    t0 = sigmoid(u)
    return spec.shift * t0 / (1.0 + (spec.shift - 1.0) * t0)


def _euler_grid(t_start, steps, grid, logsnr_cap):
    if grid == "uniform_t":
        return np.linspace(t_start, 0.0, steps + 1)
    if grid == "uniform_logsnr":
        if steps == 1:
            return np.array([t_start, 0.0])
        lam_start = t_to_logsnr(min(t_start, 1.0 - 1e-12))
        lams = np.linspace(lam_start, logsnr_cap, steps)
        interior = logsnr_to_t(lams[1:])
        return np.concatenate([[t_start], interior, [0.0]])
    raise ValueError(f"unknown grid {grid!r}")


def euler_sample(v, x_start, prompt, steps, t_start=1.0, *, grid="uniform_t", logsnr_cap=12.0):
    """Integrate the sampling ODE dx = -v dt from t_start down to 0.

    `v` is either a callable v(x, t, prompt) -> array or an object exposing a
    `.velocity` method with that signature.  The state update over one step of
    width dt is x <- x - dt * v(x, t, prompt), evaluated at the left (noisier)
    endpoint.  t_start = 0 degenerates to returning x_start unchanged.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= t_start <= 1.0:
        raise ValueError(f"t_start must lie in [0, 1], got {t_start}")
    x = np.array(x_start, dtype=float)
    if t_start == 0.0:
        return x
    vfn = getattr(v, "velocity", v)
    ts = _euler_grid(float(t_start), int(steps), grid, logsnr_cap)
    for i in range(steps):
        vel = np.asarray(vfn(x, float(ts[i]), prompt), dtype=float)
        if vel.shape != x.shape:
            raise ValueError(f"velocity shape {vel.shape} != state shape {x.shape}")
        if not np.all(np.isfinite(vel)):
            raise DivergenceError(f"non-finite velocity at t={ts[i]:.6g}")
        x = x - (ts[i] - ts[i + 1]) * vel
    return x
