"""Fusion network over precomputed encoder features.

Per utterance the two encoder outputs (mono T x 768, multi T x 1024) are
average-pooled to 300 dims, stacked into a T x 300 x 2 map (multi on depth 0),
convolved with a (16, 2) kernel at stride (4, 1), flattened and projected to a
d_emb-dim frame embedding. The phoneme head reads logits straight off that
embedding; the four articulatory heads each apply a small ReLU MLP to the same
embedding, so all lattices stay time-synchronous.

Everything is plain float64 numpy with hand-written backward passes; caches
returned by the forward functions carry the activations backward needs.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .af_inventory import AF_STREAMS, STREAM_CLASSES


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass(frozen=True)
class NetConfig:
    """Shapes of the fusion network.

    Defaults follow the full-size model; tests shrink them freely.
    """

    pool_dim: int = 300
    conv_kernel: int = 16
    conv_stride: int = 4
    conv_channels: int = 8
    d_emb: int = 256
    af_hidden: int = 128
    n_phones: int = 39
    af_classes: tuple = tuple((s, len(STREAM_CLASSES[s])) for s in AF_STREAMS)

    def __post_init__(self):
        if self.pool_dim < self.conv_kernel:
            raise ValueError("pool_dim must be >= conv_kernel")
        for name in ("pool_dim", "conv_kernel", "conv_stride", "conv_channels",
                     "d_emb", "af_hidden", "n_phones"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def conv_positions(self):
        return (self.pool_dim - self.conv_kernel) // self.conv_stride + 1

    @property
    def flat_dim(self):
        return self.conv_positions * self.conv_channels

    @property
    def af_streams(self):
        return tuple(s for s, _ in self.af_classes)

    def af_class_count(self, stream):
        for s, n in self.af_classes:
            if s == stream:
                return n
        raise KeyError(stream)


@dataclass
class ModelParams:
    """All trainable tensors. `af` maps stream id -> {w1, b1, w2, b2}."""

    conv_w: np.ndarray  # (C, K, 2)
    conv_b: np.ndarray  # (C,)
    proj_w: np.ndarray  # (flat_dim, d_emb)
    proj_b: np.ndarray  # (d_emb,)
    pr_w: np.ndarray    # (d_emb, n_phones + 1)
    pr_b: np.ndarray    # (n_phones + 1,)
    af: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, cfg: NetConfig, rng: np.random.Generator):
        k2 = cfg.conv_kernel * 2
        conv_w = _glorot(rng, (cfg.conv_channels, cfg.conv_kernel, 2), k2, cfg.conv_channels)
        proj_w = _glorot(rng, (cfg.flat_dim, cfg.d_emb), cfg.flat_dim, cfg.d_emb)
        pr_w = _glorot(rng, (cfg.d_emb, cfg.n_phones + 1), cfg.d_emb, cfg.n_phones + 1)
        af = {}
        for stream, n_classes in cfg.af_classes:
            out = n_classes + 1
            af[stream] = {
                "w1": _glorot(rng, (cfg.d_emb, cfg.af_hidden), cfg.d_emb, cfg.af_hidden),
                "b1": np.zeros(cfg.af_hidden),
                "w2": _glorot(rng, (cfg.af_hidden, out), cfg.af_hidden, out),
                "b2": np.zeros(out),
            }
        return cls(
            conv_w=conv_w,
            conv_b=np.zeros(cfg.conv_channels),
            proj_w=proj_w,
            proj_b=np.zeros(cfg.d_emb),
            pr_w=pr_w,
            pr_b=np.zeros(cfg.n_phones + 1),
            af=af,
        )

    def named_arrays(self):
        """Stable (name, array) listing; the ordering is the checkpoint order."""
        out = [
            ("conv_w", self.conv_w),
            ("conv_b", self.conv_b),
            ("proj_w", self.proj_w),
            ("proj_b", self.proj_b),
            ("pr_w", self.pr_w),
            ("pr_b", self.pr_b),
        ]
        for stream in sorted(self.af):
            for part in ("w1", "b1", "w2", "b2"):
                out.append((f"af.{stream}.{part}", self.af[stream][part]))
        return out

    def zeros_like(self):
        return ModelParams(
            conv_w=np.zeros_like(self.conv_w),
            conv_b=np.zeros_like(self.conv_b),
            proj_w=np.zeros_like(self.proj_w),
            proj_b=np.zeros_like(self.proj_b),
            pr_w=np.zeros_like(self.pr_w),
            pr_b=np.zeros_like(self.pr_b),
            af={s: {k: np.zeros_like(v) for k, v in head.items()}
                for s, head in self.af.items()},
        )

    def copy(self):
        return ModelParams(
            conv_w=self.conv_w.copy(),
            conv_b=self.conv_b.copy(),
            proj_w=self.proj_w.copy(),
            proj_b=self.proj_b.copy(),
            pr_w=self.pr_w.copy(),
            pr_b=self.pr_b.copy(),
            af={s: {k: v.copy() for k, v in head.items()}
                for s, head in self.af.items()},
        )

    def to_dict(self):
        return dict(self.named_arrays())

    @classmethod
    def from_dict(cls, arrays):
        af = {}
        for name, arr in arrays.items():
            if name.startswith("af."):
                _, stream, part = name.split(".")
                af.setdefault(stream, {})[part] = np.asarray(arr, dtype=np.float64)
        return cls(
            conv_w=np.asarray(arrays["conv_w"], dtype=np.float64),
            conv_b=np.asarray(arrays["conv_b"], dtype=np.float64),
            proj_w=np.asarray(arrays["proj_w"], dtype=np.float64),
            proj_b=np.asarray(arrays["proj_b"], dtype=np.float64),
            pr_w=np.asarray(arrays["pr_w"], dtype=np.float64),
            pr_b=np.asarray(arrays["pr_b"], dtype=np.float64),
            af=af,
        )


_pool_matrices: dict = {}


def _pool_matrix(d_in: int, d_out: int) -> np.ndarray:
    """Averaging matrix for adaptive pooling; cached because D is one of few values."""
    key = (d_in, d_out)
    if key not in _pool_matrices:
        m = np.zeros((d_in, d_out))
        for i in range(d_out):
            lo = (i * d_in) // d_out
            hi = -(-(i + 1) * d_in // d_out)  # ceil
            m[lo:hi, i] = 1.0 / (hi - lo)
        _pool_matrices[key] = m
    return _pool_matrices[key]


def downsample(x: np.ndarray, d_out: int = 300) -> np.ndarray:
    """Adaptive average pooling along the feature axis: bin i covers input
    indices [floor(i*D/d_out), ceil((i+1)*D/d_out))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a T x D matrix, got shape {x.shape}")
    if x.shape[1] < d_out:
        raise ValueError(f"feature dim {x.shape[1]} is smaller than pool size {d_out}")
    return x @ _pool_matrix(x.shape[1], d_out)


def stack_views(mono300: np.ndarray, multi300: np.ndarray) -> np.ndarray:
    """Stack the pooled streams into T x pool x 2 with multi on depth 0."""
    mono300 = np.asarray(mono300, dtype=np.float64)
    multi300 = np.asarray(multi300, dtype=np.float64)
    if mono300.shape != multi300.shape:
        raise ValueError(f"stream shapes differ: {mono300.shape} vs {multi300.shape}")
    return np.stack([multi300, mono300], axis=-1)


def align_frames(mono: np.ndarray, multi: np.ndarray, tolerance: int = 2):
    """Truncate a small frame-count mismatch between the streams.

    Both encoders run at the same frame rate, so anything beyond a couple of
    edge frames means the files do not belong to the same utterance.
    """
    t_mono, t_multi = mono.shape[0], multi.shape[0]
    if abs(t_mono - t_multi) > tolerance:
        raise ValueError(f"stream frame counts differ too much: {t_mono} vs {t_multi}")
    t = min(t_mono, t_multi)
    return mono[:t], multi[:t]


def prepare_input(mono: np.ndarray, multi: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """Full input pipeline: frame alignment, pooling, stacking."""
    mono, multi = align_frames(np.asarray(mono, dtype=np.float64),
                               np.asarray(multi, dtype=np.float64))
    return stack_views(downsample(mono, cfg.pool_dim), downsample(multi, cfg.pool_dim))


def _windows(stacked: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """im2col over the feature axis: (T, positions, kernel*2)."""
    t = stacked.shape[0]
    p = cfg.conv_positions
    out = np.empty((t, p, cfg.conv_kernel * 2))
    for i in range(p):
        lo = i * cfg.conv_stride
        out[:, i, :] = stacked[:, lo:lo + cfg.conv_kernel, :].reshape(t, -1)
    return out


def fuse_forward(stacked: np.ndarray, params: ModelParams, cfg: NetConfig):
    """Conv + ReLU + flatten + projection; returns (fused T x d_emb, cache)."""
    stacked = np.asarray(stacked, dtype=np.float64)
    if stacked.ndim != 3 or stacked.shape[1] != cfg.pool_dim or stacked.shape[2] != 2:
        raise ValueError(f"expected T x {cfg.pool_dim} x 2 input, got {stacked.shape}")
    t = stacked.shape[0]
    win = _windows(stacked, cfg)                      # (T, P, K*2)
    w_mat = params.conv_w.reshape(cfg.conv_channels, -1).T  # (K*2, C)
    pre = win @ w_mat + params.conv_b                 # (T, P, C)
    act = np.maximum(pre, 0.0)
    flat = act.reshape(t, cfg.flat_dim)
    fused = flat @ params.proj_w + params.proj_b
    cache = {"win": win, "pre": pre, "flat": flat, "fused": fused, "cfg": cfg}
    return fused, cache


def heads_forward(fused: np.ndarray, params: ModelParams, cfg: NetConfig):
    """All output heads. Returns (pr_logits, phon_emb, af_logits, cache).

    phon_emb is the representation the phoneme head reads from, i.e. `fused`
    itself; the articulatory heads consume the same embedding.
    """
    pr_logits = fused @ params.pr_w + params.pr_b
    af_logits = {}
    af_pre = {}
    for stream in cfg.af_streams:
        head = params.af[stream]
        pre = fused @ head["w1"] + head["b1"]
        hid = np.maximum(pre, 0.0)
        af_logits[stream] = hid @ head["w2"] + head["b2"]
        af_pre[stream] = (pre, hid)
    cache = {"fused": fused, "af_pre": af_pre}
    return pr_logits, fused, af_logits, cache


def forward(stacked: np.ndarray, params: ModelParams, cfg: NetConfig):
    """Whole-network forward: returns (pr_logits, af_logits, cache)."""
    fused, fuse_cache = fuse_forward(stacked, params, cfg)
    pr_logits, _, af_logits, head_cache = heads_forward(fused, params, cfg)
    cache = {"fuse": fuse_cache, "heads": head_cache}
    return pr_logits, af_logits, cache


def backward(d_pr: Optional[np.ndarray], d_af: dict, params: ModelParams,
             cache: dict) -> ModelParams:
    """Reverse-mode pass from logit gradients to parameter gradients.

    `d_pr` may be None and `d_af` may omit streams; inactive heads get zero
    gradients. Shared parameters accumulate contributions from every active
    head. Input gradients are not computed: features are fixed data.
    """
    fuse_cache = cache["fuse"]
    head_cache = cache["heads"]
    cfg: NetConfig = fuse_cache["cfg"]
    fused = fuse_cache["fused"]
    grads = params.zeros_like()
    d_fused = np.zeros_like(fused)

    if d_pr is not None:
        d_pr = np.asarray(d_pr, dtype=np.float64)
        grads.pr_w += fused.T @ d_pr
        grads.pr_b += d_pr.sum(axis=0)
        d_fused += d_pr @ params.pr_w.T

    for stream, d_logits in d_af.items():
        if d_logits is None:
            continue
        d_logits = np.asarray(d_logits, dtype=np.float64)
        head = params.af[stream]
        pre, hid = head_cache["af_pre"][stream]
        g = grads.af[stream]
        g["w2"] += hid.T @ d_logits
        g["b2"] += d_logits.sum(axis=0)
        d_hid = d_logits @ head["w2"].T
        d_pre = d_hid * (pre > 0.0)
        g["w1"] += fused.T @ d_pre
        g["b1"] += d_pre.sum(axis=0)
        d_fused += d_pre @ head["w1"].T

    d_flat = d_fused @ params.proj_w.T
    grads.proj_w += fuse_cache["flat"].T @ d_fused
    grads.proj_b += d_fused.sum(axis=0)

    d_act = d_flat.reshape(fuse_cache["pre"].shape)
    d_conv_pre = d_act * (fuse_cache["pre"] > 0.0)      # (T, P, C)
    win = fuse_cache["win"]                             # (T, P, K*2)
    k2 = cfg.conv_kernel * 2
    g_wmat = win.reshape(-1, k2).T @ d_conv_pre.reshape(-1, cfg.conv_channels)
    grads.conv_w += g_wmat.T.reshape(params.conv_w.shape)
    grads.conv_b += d_conv_pre.sum(axis=(0, 1))
    return grads
