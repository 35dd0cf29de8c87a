"""Few-step inference: denoise to a clean estimate, re-noise to the next lower
level, repeat.  Exactly one generator invocation per schedule level and no
re-noising after the final denoise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .flowcore import LogSnrRange, logsnr_to_t
from .nets import generator_predict

__all__ = ["PingPongSchedule", "make_schedule", "pingpong_sample", "style_transfer"]


@dataclass(frozen=True)
class PingPongSchedule:
    """Noise levels in strictly decreasing order, all in (0, 1]; generation
    from pure noise starts at 1."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 1:
            raise ValueError("schedule needs at least one level")
        for tau in levels:
            if not 0.0 < tau <= 1.0:
                raise ValueError(f"levels must lie in (0, 1], got {tau}")
        if any(a <= b for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly decreasing")

    def __len__(self):
        return len(self.levels)


def make_schedule(N, gen_range: LogSnrRange, grid="logsnr") -> PingPongSchedule:
    """N levels starting at 1; the N-1 interior levels sit at the log-SNR cell
    midpoints of gen_range ("logsnr" grid, so a single interior level lands on
    the range midpoint), or uniformly in t ("uniform_t")."""
    if N < 1:
        raise ValueError("step count must be >= 1")
    if N == 1:
        return PingPongSchedule((1.0,))
    if grid == "logsnr":
        span = gen_range.hi - gen_range.lo
        lams = gen_range.lo + (np.arange(N - 1) + 0.5) * span / (N - 1)
        interior = sorted((float(logsnr_to_t(l)) for l in lams), reverse=True)
    elif grid == "uniform_t":
        interior = list(np.linspace(1.0, 0.0, N + 1)[1:N])
    else:
        raise ValueError(f"unknown grid {grid!r}")
    return PingPongSchedule((1.0, *interior))


def pingpong_sample(gen, schedule: PingPongSchedule, prompt, rng, x_init=None, d=None):
    """Run the denoise/re-noise loop; returns the final clean estimate.

    Starts from x_init when given, else from a fresh standard-normal draw of
    dimension d (taken from gen.topology when present).  `prompt` may be a
    scalar (single sample) or a length-n vector (batch of n).  Deterministic
    given the Generator state.
    """
    levels = schedule.levels
    prompt_arr = np.asarray(prompt)
    batched = prompt_arr.ndim == 1
    if x_init is not None:
        x = np.array(x_init, dtype=float)
        shape = x.shape
    else:
        if d is None:
            d = gen.topology.d
        shape = (prompt_arr.shape[0], d) if batched else (d,)
        x = rng.standard_normal(shape)
    xhat0 = x
    for i, tau in enumerate(levels):
        xhat0 = np.asarray(generator_predict(gen, x, tau, prompt), dtype=float)
        if not np.all(np.isfinite(xhat0)):
            raise DivergenceError(f"non-finite generation at level {tau:.6g}")
        if i + 1 < len(levels):
            tau_next = levels[i + 1]
            x = (1.0 - tau_next) * xhat0 + tau_next * rng.standard_normal(shape)
    return xhat0


def style_transfer(gen, schedule: PingPongSchedule, prompt, x_ref, tau_start, rng):
    """Initialize the loop from a reference sample noised to the largest
    schedule level <= tau_start, then sample as usual."""
    if not 0.0 < tau_start <= 1.0:
        raise ValueError(f"tau_start must lie in (0, 1], got {tau_start}")
    kept = tuple(tau for tau in schedule.levels if tau <= tau_start)
    if not kept:
        raise ValueError(f"no schedule levels at or below tau_start={tau_start}")
    x_ref = np.asarray(x_ref, dtype=float)
    tau_top = kept[0]
    x_init = (1.0 - tau_top) * x_ref + tau_top * rng.standard_normal(x_ref.shape)
    return pingpong_sample(gen, PingPongSchedule(kept), prompt, rng, x_init=x_init)
