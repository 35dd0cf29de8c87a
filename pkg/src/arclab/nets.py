"""Small conditional networks with exact hand-derived gradients.

Two architectures over a shared input pipeline concat(x, time-features(t),
prompt-embedding(c)):

  VelocityNet   -- H hidden affine+SiLU layers, affine head to R^d.  Serves both
                   as the pretrained flow model and, via generator_predict, as
                   the few-step generator (x_t - t * v).
  Discriminator -- prompt embedding + the first ceil(0.75*H) hidden layers
                   copied from a pretrained VelocityNet, followed by a fresh
                   head of affine+LayerNorm+SiLU blocks ending in one scalar
                   logit (higher = judged more fake).

Forward passes optionally return a cache; `backward(cache, upstream)` yields
exact parameter gradients plus the input gradient, verified against central
finite differences in the test suite.  Parameters live in plain insertion-
ordered dicts, which also fixes the checkpoint tensor order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Topology",
    "VelocityNet",
    "Discriminator",
    "time_features",
    "forward_velocity",
    "generator_predict",
    "discriminator_logit",
    "init_from_pretrained",
    "save_checkpoint",
    "load_checkpoint",
    "param_shapes",
]

_LN_EPS = 1e-5


@dataclass(frozen=True)
class Topology:
    d: int = 2
    K: int = 4
    width: int = 128
    hidden: int = 6
    embed_dim: int = 16
    time_freqs: int = 16
    head_blocks: int = 4

    @property
    def input_dim(self):
        return self.d + 2 * self.time_freqs + self.embed_dim

    @property
    def backbone_layers(self):
        return math.ceil(0.75 * self.hidden)


def time_features(t, n_freqs):
    """Sinusoidal features of t at geometrically spaced frequencies; (n, 2F),
    entries bounded in [-1, 1]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = 2.0 ** np.arange(n_freqs)
    ang = np.pi * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
    return z * s


def _dsilu(z):
    s = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
    return s * (1.0 + z * (1.0 - s))


def _as_batch(x, t, c, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected samples of dimension {d}, got shape {x.shape}")
    n = X.shape[0]
    T = np.full(n, float(t)) if np.ndim(t) == 0 else np.asarray(t, dtype=float)
    C = np.full(n, int(c)) if np.ndim(c) == 0 else np.asarray(c, dtype=int)
    if T.shape != (n,) or C.shape != (n,):
        raise ValueError("t and c must be scalars or length-n vectors")
    return X, T, C, single


def _affine_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class VelocityNet:
    """Conditional velocity model v(x_t, t, c) in R^d."""

    def __init__(self, topology: Topology, params: dict):
        self.topology = topology
        self.params = params

    @classmethod
    def init(cls, topology: Topology, rng) -> "VelocityNet":
        p = {}
        p["embed"] = rng.normal(size=(topology.K, topology.embed_dim)) / np.sqrt(topology.embed_dim)
        fan = topology.input_dim
        for i in range(topology.hidden):
            p[f"w{i}"] = _affine_init(rng, fan, topology.width)
            p[f"b{i}"] = np.zeros(topology.width)
            fan = topology.width
        p["w_out"] = _affine_init(rng, fan, topology.d)
        p["b_out"] = np.zeros(topology.d)
        return cls(topology, p)

    def copy(self) -> "VelocityNet":
        return VelocityNet(self.topology, {k: v.copy() for k, v in self.params.items()})

    def _features(self, X, T, C):
        emb = self.params["embed"][C]
        return np.concatenate([X, time_features(T, self.topology.time_freqs), emb], axis=1)

    def velocity_with_cache(self, x, t, c):
        X, T, C, single = _as_batch(x, t, c, self.topology.d)
        h = self._features(X, T, C)
        hs, zs = [h], []
        for i in range(self.topology.hidden):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            h = _silu(z)
            zs.append(z)
            hs.append(h)
        out = h @ self.params["w_out"] + self.params["b_out"]
        cache = (C, hs, zs, single)
        return (out[0] if single else out), cache

    def velocity(self, x, t, c):
        out, _ = self.velocity_with_cache(x, t, c)
        return out

    __call__ = velocity

    def backward(self, cache, d_out):
        """Gradients of sum(d_out * output) w.r.t. params and input x."""
        C, hs, zs, single = cache
        topo = self.topology
        d_out = np.asarray(d_out, dtype=float)
        if single:
            d_out = d_out[None, :]
        g = {}
        g["w_out"] = hs[-1].T @ d_out
        g["b_out"] = d_out.sum(axis=0)
        dh = d_out @ self.params["w_out"].T
        for i in reversed(range(topo.hidden)):
            dz = dh * _dsilu(zs[i])
            g[f"w{i}"] = hs[i].T @ dz
            g[f"b{i}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"w{i}"].T
        dx = dh[:, : topo.d]
        g_embed = np.zeros_like(self.params["embed"])
        np.add.at(g_embed, C, dh[:, topo.d + 2 * topo.time_freqs :])
        g["embed"] = g_embed
        return g, (dx[0] if single else dx)


class Discriminator:
    """Truncated-backbone discriminator with a fresh normalized head."""

    def __init__(self, topology: Topology, params: dict):
        self.topology = topology
        self.params = params

    def copy(self) -> "Discriminator":
        return Discriminator(self.topology, {k: v.copy() for k, v in self.params.items()})

    def _features(self, X, T, C):
        emb = self.params["embed"][C]
        return np.concatenate([X, time_features(T, self.topology.time_freqs), emb], axis=1)

    def logit_with_cache(self, x, s, c):
        X, S, C, single = _as_batch(x, s, c, self.topology.d)
        topo = self.topology
        h = self._features(X, S, C)
        hs, zs = [h], []
        for i in range(topo.backbone_layers):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            h = _silu(z)
            zs.append(z)
            hs.append(h)
        head = []
        for j in range(topo.head_blocks):
            z = h @ self.params[f"hw{j}"] + self.params[f"hb{j}"]
            mu = z.mean(axis=1, keepdims=True)
            ivar = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + _LN_EPS)
            zhat = (z - mu) * ivar
            y = zhat * self.params[f"hg{j}"] + self.params[f"hbeta{j}"]
            head.append((h, ivar, zhat, y))
            h = _silu(y)
        out = h @ self.params["w_out"] + self.params["b_out"]
        cache = (C, hs, zs, head, h, single)
        logits = out[:, 0]
        return (float(logits[0]) if single else logits), cache

    def logit(self, x, s, c):
        out, _ = self.logit_with_cache(x, s, c)
        return out

    __call__ = logit

    def backward(self, cache, d_logit):
        """Gradients of sum(d_logit * logit) w.r.t. params and input x."""
        C, hs, zs, head, h_last, single = cache
        topo = self.topology
        d_logit = np.atleast_1d(np.asarray(d_logit, dtype=float))
        d_out = d_logit[:, None]
        g = {}
        g["w_out"] = h_last.T @ d_out
        g["b_out"] = d_out.sum(axis=0)
        dh = d_out @ self.params["w_out"].T
        for j in reversed(range(topo.head_blocks)):
            h_in, ivar, zhat, y = head[j]
            dy = dh * _dsilu(y)
            g[f"hg{j}"] = (dy * zhat).sum(axis=0)
            g[f"hbeta{j}"] = dy.sum(axis=0)
            dzhat = dy * self.params[f"hg{j}"]
            dz = ivar * (
                dzhat
                - (dzhat * zhat).mean(axis=1, keepdims=True) * zhat
                - dzhat.mean(axis=1, keepdims=True)
            )
            g[f"hw{j}"] = h_in.T @ dz
            g[f"hb{j}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"hw{j}"].T
        for i in reversed(range(topo.backbone_layers)):
            dz = dh * _dsilu(zs[i])
            g[f"w{i}"] = hs[i].T @ dz
            g[f"b{i}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"w{i}"].T
        dx = dh[:, : topo.d]
        g_embed = np.zeros_like(self.params["embed"])
        np.add.at(g_embed, C, dh[:, topo.d + 2 * topo.time_freqs :])
        g["embed"] = g_embed
        return g, (dx[0] if single else dx)


def forward_velocity(net, x_t, t, c):
    """Velocity of `net` at (x_t, t, c); `net` may also be a bare callable."""
    vfn = getattr(net, "velocity", net)
    return vfn(x_t, t, c)


def generator_predict(net, x_t, t, c):
    """Few-step generator output x_t - t * v(x_t, t, c).  Identity at t = 0."""
    v = np.asarray(forward_velocity(net, x_t, t, c), dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if t_arr.ndim == 1 and x_t.ndim == 2:
        t_arr = t_arr[:, None]
    return x_t - t_arr * v


def discriminator_logit(disc: Discriminator, x_s, s, c):
    return disc.logit(x_s, s, c)


def init_from_pretrained(pretrained: VelocityNet, rng):
    """Build the post-training pair: a deep-copied generator and a
    discriminator whose embedding + first ceil(0.75*H) hidden layers are copied
    while the head starts fresh (final layer zeroed, so the initial logit is 0).
    """
    topo = pretrained.topology
    generator = pretrained.copy()
    p = {"embed": pretrained.params["embed"].copy()}
    for i in range(topo.backbone_layers):
        p[f"w{i}"] = pretrained.params[f"w{i}"].copy()
        p[f"b{i}"] = pretrained.params[f"b{i}"].copy()
    for j in range(topo.head_blocks):
        p[f"hw{j}"] = _affine_init(rng, topo.width, topo.width)
        p[f"hb{j}"] = np.zeros(topo.width)
        p[f"hg{j}"] = np.ones(topo.width)
        p[f"hbeta{j}"] = np.zeros(topo.width)
    p["w_out"] = np.zeros((topo.width, 1))
    p["b_out"] = np.zeros(1)
    return generator, Discriminator(topo, p)


# ---------------------------------------------------------------------------
# checkpoint format: text manifest, a "---" separator line, then the raw
# little-endian float32 tensor data concatenated in manifest order.

_FORMAT_MAGIC = "arclab-net 1"
_TOPO_KEYS = ("d", "K", "width", "hidden", "embed_dim", "time_freqs", "head_blocks")


def param_shapes(kind: str, topo: Topology) -> dict:
    """Expected name -> shape map; load-time shape validation checks against it."""
    shapes = {"embed": (topo.K, topo.embed_dim)}
    if kind == "velocity":
        fan = topo.input_dim
        for i in range(topo.hidden):
            shapes[f"w{i}"] = (fan, topo.width)
            shapes[f"b{i}"] = (topo.width,)
            fan = topo.width
        shapes["w_out"] = (fan, topo.d)
        shapes["b_out"] = (topo.d,)
    elif kind == "discriminator":
        fan = topo.input_dim
        for i in range(topo.backbone_layers):
            shapes[f"w{i}"] = (fan, topo.width)
            shapes[f"b{i}"] = (topo.width,)
            fan = topo.width
        for j in range(topo.head_blocks):
            shapes[f"hw{j}"] = (topo.width, topo.width)
            shapes[f"hb{j}"] = (topo.width,)
            shapes[f"hg{j}"] = (topo.width,)
            shapes[f"hbeta{j}"] = (topo.width,)
        shapes["w_out"] = (topo.width, 1)
        shapes["b_out"] = (1,)
    else:
        raise ValueError(f"unknown net kind {kind!r}")
    return shapes


def save_checkpoint(path, net, creation_seed="", extra=None):
    kind = "velocity" if isinstance(net, VelocityNet) else "discriminator"
    topo = net.topology
    lines = [_FORMAT_MAGIC, f"kind: {kind}"]
    for key in _TOPO_KEYS:
        lines.append(f"{key}: {getattr(topo, key)}")
    lines.append(f"creation_seed: {creation_seed}")
    if kind == "discriminator":
        lines.append("prompt_embedding: trained")
    for name, value in (extra or {}).items():
        lines.append(f"{name}: {value}")
    for name, tensor in net.params.items():
        lines.append(f"tensor: {name} {' '.join(str(s) for s in tensor.shape)}")
    header = "\n".join(lines) + "\n---\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for tensor in net.params.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (net, meta).  Shapes are validated against the manifest and the
    topology-implied layout; mismatches raise ValueError."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n---\n")
    if sep < 0:
        raise ValueError(f"{path}: missing checkpoint header separator")
    header = blob[:sep].decode("utf-8").splitlines()
    data = blob[sep + len(b"\n---\n") :]
    if not header or header[0] != _FORMAT_MAGIC:
        raise ValueError(f"{path}: not an arclab checkpoint")
    meta, tensors = {}, []
    for line in header[1:]:
        key, _, value = line.partition(":")
        value = value.strip()
        if key == "tensor":
            name, *dims = value.split()
            tensors.append((name, tuple(int(x) for x in dims)))
        else:
            meta[key] = value
    topo = Topology(**{k: int(meta[k]) for k in _TOPO_KEYS})
    kind = meta["kind"]
    expected = param_shapes(kind, topo)
    if [name for name, _ in tensors] != list(expected):
        raise ValueError(f"{path}: tensor list does not match {kind} layout")
    params = {}
    offset = 0
    for name, shape in tensors:
        if shape != expected[name]:
            raise ValueError(f"{path}: tensor {name} has shape {shape}, expected {expected[name]}")
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        if raw.size != count:
            raise ValueError(f"{path}: truncated tensor data at {name}")
        offset += count * 4
        params[name] = raw.astype(float).reshape(shape)
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after tensor data")
    net = VelocityNet(topo, params) if kind == "velocity" else Discriminator(topo, params)
    return net, meta
