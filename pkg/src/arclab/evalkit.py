"""Evaluation metrics: conditional diversity (mean pairwise cosine distance
within same-prompt groups), k-NN manifold recall/coverage, Gaussian Frechet
distance, sliced Wasserstein against ground truth, prompt adherence via a
mixture classifier, and wall-clock timing.

All metrics are pure functions over immutable sample sets.  Embeddings default
to L2-normalized identity features; a fitted classifier supplies an alternative
feature map (per-mode responsibilities).
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, fields

import numpy as np

from .toydata import ConditionalMixtureSpec, LabeledBatch

__all__ = [
    "identity_embedding",
    "classifier_embedding",
    "ccds",
    "recall",
    "coverage",
    "frechet_distance",
    "frechet_from_stats",
    "sliced_wasserstein",
    "adherence_score",
    "timing_report",
    "TimingReport",
    "MixtureModeClassifier",
    "UniformClassifier",
    "MetricReport",
]


# ---------------------------------------------------------------------------
# embeddings

def identity_embedding(x) -> np.ndarray:
    """Rows scaled to unit L2 norm."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def classifier_embedding(classifier):
    """Feature map from a fitted classifier: unit-normalized per-mode
    responsibilities."""

    def embed(x):
        resp = classifier.mode_responsibilities(x)
        norms = np.linalg.norm(resp, axis=1, keepdims=True)
        return resp / np.maximum(norms, 1e-12)

    return embed


# ---------------------------------------------------------------------------
# metrics

def ccds(groups) -> float:
    """Mean over groups of the mean pairwise cosine distance (1 - cos) over all
    unordered pairs inside each group; each group shares one prompt."""
    scores = []
    for group in groups:
        e = identity_embedding(group)
        m = e.shape[0]
        if m < 2:
            raise ValueError("conditional-diversity groups need >= 2 members")
        gram = e @ e.T
        cos_sum = (gram.sum() - np.trace(gram)) / 2.0
        pairs = m * (m - 1) / 2.0
        scores.append(1.0 - cos_sum / pairs)
    if not scores:
        raise ValueError("no groups given")
    return float(np.mean(scores))


def _sq_dists(a, b):
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def _knn_sq_radii(x, k):
    d2 = _sq_dists(x, x)
    d2.sort(axis=1)
    return d2[:, k]  # column 0 is the self-distance


def _check_knn_sizes(real_emb, gen_emb, k):
    real_emb = np.asarray(real_emb, dtype=float)
    gen_emb = np.asarray(gen_emb, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if real_emb.shape[0] < k + 1 or gen_emb.shape[0] < k + 1:
        raise ValueError(f"both sets need at least k+1={k + 1} points")
    return real_emb, gen_emb


def recall(real_emb, gen_emb, k) -> float:
    """Fraction of real points inside the generated manifold: the union of
    balls around each generated point with its k-NN radius within gen_emb."""
    real_emb, gen_emb = _check_knn_sizes(real_emb, gen_emb, k)
    radii = _knn_sq_radii(gen_emb, k)
    d2 = _sq_dists(real_emb, gen_emb)
    covered = np.any(d2 <= radii[None, :], axis=1)
    return float(covered.mean())


def coverage(real_emb, gen_emb, k) -> float:
    """Fraction of real points whose own k-NN ball (radius within real_emb)
    contains at least one generated point."""
    real_emb, gen_emb = _check_knn_sizes(real_emb, gen_emb, k)
    radii = _knn_sq_radii(real_emb, k)
    d2 = _sq_dists(real_emb, gen_emb)
    covered = d2.min(axis=1) <= radii
    return float(covered.mean())


def _sqrtm_psd(mat):
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if np.min(w) < -1e-8 * scale:
        raise ValueError("matrix is not positive semi-definite")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_from_stats(mu1, cov1, mu2, cov2, reg=1e-6) -> float:
    """|mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) with S_i = cov_i + reg*I and
    the cross term computed via the symmetrized product sqrt(A S1 A), A = S2^{1/2}."""
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    d = mu1.shape[0]
    s1 = np.asarray(cov1, dtype=float) + reg * np.eye(d)
    s2 = np.asarray(cov2, dtype=float) + reg * np.eye(d)
    a = _sqrtm_psd(s2)
    cross = _sqrtm_psd(a @ s1 @ a)
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))


def frechet_distance(real_emb, gen_emb) -> float:
    """Gaussian Frechet distance between the empirical moments of two sets."""
    real_emb = np.asarray(real_emb, dtype=float)
    gen_emb = np.asarray(gen_emb, dtype=float)
    d = real_emb.shape[1]
    if real_emb.shape[0] < d + 1 or gen_emb.shape[0] < d + 1:
        raise ValueError(f"need at least d+1={d + 1} points per set")
    mu1, mu2 = real_emb.mean(axis=0), gen_emb.mean(axis=0)
    cov1 = np.atleast_2d(np.cov(real_emb, rowvar=False))
    cov2 = np.atleast_2d(np.cov(gen_emb, rowvar=False))
    return frechet_from_stats(mu1, cov1, mu2, cov2)


def sliced_wasserstein(a, b, projections, rng) -> float:
    """Mean over random unit projections of the 1-D 2-Wasserstein distance
    (root mean squared sorted difference); requires equal set sizes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    dirs = rng.standard_normal((projections, a.shape[1]))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    w2 = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    return float(w2.mean())


# ---------------------------------------------------------------------------
# adherence classifier

class MixtureModeClassifier:
    """Per-class isotropic Gaussian mixture with uniform priors.

    Fit on labeled real data by deterministic per-class k-means (farthest-point
    seeding, Lloyd refinement), or built directly from a ground-truth spec.
    """

    def __init__(self, means, stds):
        self.means = np.asarray(means, dtype=float)  # (K, M, d)
        self.stds = np.asarray(stds, dtype=float)    # (K, M)
        if self.means.ndim != 3 or self.stds.shape != self.means.shape[:2]:
            raise ValueError("means must be (K, M, d) with stds (K, M)")

    @property
    def K(self):
        return self.means.shape[0]

    @classmethod
    def from_spec(cls, spec: ConditionalMixtureSpec) -> "MixtureModeClassifier":
        m = max(len(modes) for modes in spec.modes_per_class)
        means = np.zeros((spec.K, m, spec.d))
        stds = np.full((spec.K, m), 1e-6)
        for k, modes in enumerate(spec.modes_per_class):
            for j, (mean, std) in enumerate(modes):
                means[k, j] = mean
                stds[k, j] = std
        return cls(means, stds)

    @classmethod
    def fit(cls, samples, prompts, modes_per_class=2, iters=25) -> "MixtureModeClassifier":
        samples = np.asarray(samples, dtype=float)
        prompts = np.asarray(prompts, dtype=int)
        K = int(prompts.max()) + 1
        d = samples.shape[1]
        means = np.zeros((K, modes_per_class, d))
        stds = np.zeros((K, modes_per_class))
        for k in range(K):
            pts = samples[prompts == k]
            if pts.shape[0] < modes_per_class:
                raise ValueError(f"class {k} has too few samples to fit")
            centers = _farthest_point_seeds(pts, modes_per_class)
            for _ in range(iters):
                assign = np.argmin(_sq_dists(pts, centers), axis=1)
                for m in range(modes_per_class):
                    members = pts[assign == m]
                    if members.shape[0]:
                        centers[m] = members.mean(axis=0)
            assign = np.argmin(_sq_dists(pts, centers), axis=1)
            for m in range(modes_per_class):
                members = pts[assign == m]
                if members.shape[0]:
                    var = np.mean(np.sum((members - centers[m]) ** 2, axis=1)) / d
                else:
                    var = 1.0
                stds[k, m] = max(np.sqrt(var), 1e-6)
            means[k] = centers
        return cls(means, stds)

    def _log_component_densities(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x.shape[1]
        diff = x[:, None, None, :] - self.means[None, :, :, :]
        sq = np.sum(diff * diff, axis=3)  # (n, K, M)
        var = self.stds[None, :, :] ** 2
        return -0.5 * sq / var - d * np.log(self.stds[None, :, :]) - 0.5 * d * np.log(2 * np.pi)

    def predict_proba(self, x) -> np.ndarray:
        logc = self._log_component_densities(x)
        m = self.means.shape[1]
        class_log = _logsumexp(logc, axis=2) - np.log(m)
        shifted = class_log - class_log.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=1, keepdims=True)

    def mode_responsibilities(self, x) -> np.ndarray:
        """Posterior over all K*M mixture components; the classifier's feature
        map for embedding-based metrics."""
        logc = self._log_component_densities(x)
        n = logc.shape[0]
        flat = logc.reshape(n, -1)
        shifted = flat - flat.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=1, keepdims=True)

    def accuracy(self, samples, prompts) -> float:
        pred = np.argmax(self.predict_proba(samples), axis=1)
        return float(np.mean(pred == np.asarray(prompts, dtype=int)))


def _farthest_point_seeds(pts, m):
    start = int(np.argmax(np.sum((pts - pts.mean(axis=0)) ** 2, axis=1)))
    chosen = [start]
    for _ in range(m - 1):
        d2 = _sq_dists(pts, pts[chosen]).min(axis=1)
        chosen.append(int(np.argmax(d2)))
    return pts[chosen].copy()


def _logsumexp(x, axis):
    mx = x.max(axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(x - mx), axis=axis))


class UniformClassifier:
    """Test hook: predicts 1/K for every class."""

    def __init__(self, K):
        self.K = K

    def predict_proba(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.full((x.shape[0], self.K), 1.0 / self.K)


def adherence_score(gen_samples: LabeledBatch, classifier) -> float:
    """Mean predicted probability of each sample's requested class."""
    if classifier is None or not hasattr(classifier, "predict_proba"):
        raise ValueError("adherence needs a fitted classifier with predict_proba")
    probs = classifier.predict_proba(gen_samples.samples)
    n = len(gen_samples)
    if probs.shape[0] != n:
        raise ValueError("classifier returned wrong number of rows")
    return float(np.mean(probs[np.arange(n), gen_samples.prompts]))


# ---------------------------------------------------------------------------
# timing

@dataclass(frozen=True)
class TimingReport:
    wall_seconds_per_sample: float
    baseline_seconds_per_sample: float
    speedup: float


def timing_report(sampler, baseline, n_warmup=2, n_runs=9, samples_per_call=1) -> TimingReport:
    """Median wall time per sample after warmup for the candidate closure and a
    baseline closure; speedup = baseline median / candidate median."""
    if n_runs < 3:
        raise ValueError("n_runs must be >= 3")

    def median_seconds(fn):
        for _ in range(n_warmup):
            fn()
        times = []
        for _ in range(n_runs):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return statistics.median(times) / samples_per_call

    cand = median_seconds(sampler)
    base = median_seconds(baseline)
    return TimingReport(cand, base, base / cand)


# ---------------------------------------------------------------------------
# report container

_METRIC_FIELDS = ("ccds", "ccds_feat", "recall", "coverage", "fd", "sw",
                  "adherence", "wall_seconds_per_sample", "steps")


@dataclass
class MetricReport:
    """Named metric values plus the metadata needed to reproduce them.

    wall_seconds_per_sample is 0.0 when timing was not measured (timing is the
    one non-deterministic quantity, so deterministic reports leave it off).
    """

    label: str
    sampler: str
    steps: int
    ccds: float
    ccds_feat: float
    recall: float
    coverage: float
    fd: float
    sw: float
    adherence: float
    wall_seconds_per_sample: float
    seed: int
    config_hash: str
    checkpoint: str
    schema_version: int = 1

    def __post_init__(self):
        for name in _METRIC_FIELDS:
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"metric {name} is not finite")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def csv_header(cls) -> list:
        return [f.name for f in fields(cls)]

    def to_csv_row(self) -> list:
        row = []
        for f in fields(self):
            value = getattr(self, f.name)
            row.append(repr(value) if isinstance(value, float) else str(value))
        return row
