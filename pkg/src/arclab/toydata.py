"""Synthetic conditional data: per-class Gaussian mixtures with known moments.

Prompts are plain integers in [0, K).  Every class of the default spec owns two
modes so conditional diversity is measurable (and its collapse observable).
Data is sampled online; frozen evaluation sets are materialized to CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConditionalMixtureSpec",
    "LabeledBatch",
    "default_spec",
    "ring_spec",
    "sample_real",
    "sample_real_batch",
    "draw_labeled_batch",
    "ground_truth_stats",
    "write_labeled_csv",
    "read_labeled_csv",
]


@dataclass(frozen=True)
class ConditionalMixtureSpec:
    """K-class conditional mixture; class k draws uniformly among its modes.

    modes_per_class[k] is a tuple of (mean, std) pairs; means are length-d
    vectors, stds are positive scalars (isotropic modes).
    """

    K: int
    d: int
    modes_per_class: tuple

    def __post_init__(self):
        if self.K < 1 or len(self.modes_per_class) != self.K:
            raise ValueError("modes_per_class must list exactly K classes")
        for modes in self.modes_per_class:
            if len(modes) < 1:
                raise ValueError("each class needs at least one mode")
            for mean, std in modes:
                if np.asarray(mean, dtype=float).shape != (self.d,):
                    raise ValueError("mode mean has wrong dimension")
                if std <= 0:
                    raise ValueError("mode std must be positive")

    def check_prompt(self, prompt):
        p = int(prompt)
        if not 0 <= p < self.K:
            raise ValueError(f"prompt {prompt} outside [0, {self.K})")
        return p


@dataclass
class LabeledBatch:
    """Paired samples (n, d) and integer prompts (n,)."""

    samples: np.ndarray
    prompts: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.prompts = np.asarray(self.prompts, dtype=int)
        if self.samples.ndim != 2 or self.prompts.ndim != 1:
            raise ValueError("samples must be (n, d) and prompts (n,)")
        if self.samples.shape[0] != self.prompts.shape[0]:
            raise ValueError("samples and prompts have different lengths")
        if self.samples.shape[0] < 1:
            raise ValueError("batch is empty")

    def __len__(self):
        return self.samples.shape[0]


def ring_spec(K=4, d=2, modes_per_class=2, radius=4.0, std=0.25) -> ConditionalMixtureSpec:
    """K*modes_per_class modes equally spaced on a radius-`radius` ring in the
    first two coordinates; class k owns the contiguous block of modes
    [k*m, (k+1)*m)."""
    m = modes_per_class
    total = K * m
    modes = []
    for k in range(K):
        cls = []
        for j in range(m):
            ang = 2.0 * np.pi * (k * m + j) / total
            mean = np.zeros(d)
            mean[0] = radius * np.cos(ang)
            if d > 1:
                mean[1] = radius * np.sin(ang)
            cls.append((mean, std))
        modes.append(tuple(cls))
    return ConditionalMixtureSpec(K=K, d=d, modes_per_class=tuple(modes))


def default_spec() -> ConditionalMixtureSpec:
    """4 classes in 2-D, 8 modes on a radius-4 ring (std 0.25), 2 modes per class."""
    return ring_spec(K=4, d=2, modes_per_class=2, radius=4.0, std=0.25)


def sample_real(spec: ConditionalMixtureSpec, prompt, rng):
    """One draw from class `prompt`: uniform mode choice, then Gaussian."""
    p = spec.check_prompt(prompt)
    modes = spec.modes_per_class[p]
    mean, std = modes[rng.integers(len(modes))]
    return np.asarray(mean, dtype=float) + std * rng.standard_normal(spec.d)


def sample_real_batch(spec: ConditionalMixtureSpec, prompts, rng) -> np.ndarray:
    """Vectorized draws, one per entry of `prompts`."""
    prompts = np.asarray(prompts, dtype=int)
    n = prompts.shape[0]
    out = np.empty((n, spec.d))
    noise = rng.standard_normal((n, spec.d))
    # mode indices drawn per item; per-class mode counts may differ
    for i, p in enumerate(prompts):
        modes = spec.modes_per_class[spec.check_prompt(p)]
        mean, std = modes[rng.integers(len(modes))]
        out[i] = np.asarray(mean, dtype=float) + std * noise[i]
    return out


def draw_labeled_batch(spec: ConditionalMixtureSpec, n, rng) -> LabeledBatch:
    """n pairs (x0, c) with equiprobable classes."""
    prompts = rng.integers(spec.K, size=n)
    return LabeledBatch(sample_real_batch(spec, prompts, rng), prompts)


def balanced_eval_batch(spec: ConditionalMixtureSpec, n, rng) -> LabeledBatch:
    """Frozen-set construction: classes cycled exactly (n is padded up to a
    multiple of K is NOT done; remainder classes simply get one fewer item)."""
    prompts = np.arange(n) % spec.K
    return LabeledBatch(sample_real_batch(spec, prompts, rng), prompts)


def ground_truth_stats(spec: ConditionalMixtureSpec, prompt):
    """Exact conditional mean and covariance of class `prompt`.

    For an equal-weight mixture of isotropic Gaussians:
      mu = mean_i(mu_i)
      Sigma = mean_i(sigma_i^2 I + mu_i mu_i^T) - mu mu^T
    """
    p = spec.check_prompt(prompt)
    modes = spec.modes_per_class[p]
    w = 1.0 / len(modes)
    mu = sum(w * np.asarray(mean, dtype=float) for mean, _ in modes)
    cov = np.zeros((spec.d, spec.d))
    for mean, std in modes:
        mean = np.asarray(mean, dtype=float)
        cov += w * (std**2 * np.eye(spec.d) + np.outer(mean, mean))
    cov -= np.outer(mu, mu)
    return mu, cov


def write_labeled_csv(path, batch: LabeledBatch, label_column="class_id", extra_columns=None):
    """Write `class_id,x0,x1,...` rows; floats use repr so they round-trip
    bit-exactly.  Generated-sample dumps use label_column="prompt_id" and an
    extra_columns dict (name -> sequence), e.g. the per-dump seed."""
    d = batch.samples.shape[1]
    extra = extra_columns or {}
    header = [label_column, *extra.keys(), *[f"x{j}" for j in range(d)]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(batch)):
            row = [int(batch.prompts[i])]
            row += [extra[name][i] for name in extra]
            row += [repr(float(v)) for v in batch.samples[i]]
            writer.writerow(row)


def read_labeled_csv(path) -> LabeledBatch:
    """Inverse of write_labeled_csv (extra columns are ignored)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        xcols = [i for i, name in enumerate(header) if name.startswith("x") and name[1:].isdigit()]
        label_col = header.index("class_id") if "class_id" in header else header.index("prompt_id")
        prompts, rows = [], []
        for row in reader:
            prompts.append(int(row[label_col]))
            rows.append([float(row[i]) for i in xcols])
    return LabeledBatch(np.asarray(rows, dtype=float), np.asarray(prompts, dtype=int))
