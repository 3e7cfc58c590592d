"""Desk-scale audio-conditioned denoiser.

Layout (channels last, one clip ``[f, h, w, c_lat]`` at a time)::

    in-proj -> down0 (h x w) -> pool -> down1 (h/2) -> up0 (h/2, +skip1)
            -> upsample -> up1 (h x w, +skip0) -> out-proj

Every stage runs: SiLU residual block (conditioning embedding added after
the first linear), spatial audio cross-attention gated by the face mask,
temporal self-attention, and temporal audio cross-attention against the
clip-pooled audio tokens. All ops go through the ``numerics`` tape so the
same code serves inference and training.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, asdict

import numpy as np

from .. import numerics as nx
from ..errors import DimensionError
from ..motion import MotionBuckets, bucket_encoding
from ..numerics import AttentionWeights, Var

ATTN = ("sa", "ts", "ta")  # spatial-audio, temporal-self, temporal-audio


@dataclass(frozen=True)
class ToyConfig:
    h: int = 8
    w: int = 8
    c_lat: int = 4
    f: int = 8
    hidden: int = 16
    audio_width: int = 20
    ref_width: int = 16
    dim_pe: int = 128
    dim_time: int = 32
    n_down: int = 2
    n_up: int = 2

    def __post_init__(self):
        if self.h % 2 or self.w % 2:
            raise DimensionError(f"latent grid must be even for pooling, got {self.h}x{self.w}")
        if self.n_down != 2 or self.n_up != 2:
            raise DimensionError("the toy network is fixed at 2 down and 2 up stages")

    @property
    def n_stages(self) -> int:
        return self.n_down + self.n_up


class DenoiserParams:
    """Named parameter arrays with a stable flattening order."""

    def __init__(self, config: ToyConfig, arrays: dict):
        self.config = config
        self.arrays = dict(arrays)

    @classmethod
    def init(cls, config: ToyConfig, seed: int = 0, dtype=np.float64) -> "DenoiserParams":
        rng = np.random.default_rng(seed)
        c = config.hidden

        def mat(a, b, gain=1.0):
            return (rng.standard_normal((a, b)) * gain / math.sqrt(a)).astype(dtype)

        def zeros(n):
            return np.zeros(n, dtype=dtype)

        p = {
            "in.w": mat(config.c_lat, c), "in.b": zeros(c),
            "audio.w0": mat(config.audio_width, c), "audio.b0": zeros(c),
            "audio.w1": mat(c, c), "audio.b1": zeros(c),
            "audio.w2": mat(c, c), "audio.b2": zeros(c),
            "time.w": mat(config.dim_time, c, 0.5),
            "bucket.w": mat(2 * config.dim_pe, c, 0.5),
            "ref.w": mat(config.ref_width, c, 0.5),
            "out.w": mat(c, config.c_lat, 0.5), "out.b": zeros(config.c_lat),
        }
        for k in range(config.n_stages):
            p[f"stage{k}.res.w1"] = mat(c, c)
            p[f"stage{k}.res.b1"] = zeros(c)
            p[f"stage{k}.res.w2"] = mat(c, c, 0.5)
            p[f"stage{k}.res.b2"] = zeros(c)
            for name in ATTN:
                for part in ("q", "k", "v"):
                    p[f"stage{k}.{name}.{part}"] = mat(c, c)
                p[f"stage{k}.{name}.o"] = mat(c, c, 0.5)
        return cls(config, p)

    def names(self):
        return list(self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays.values()])

    def unflatten(self, flat: np.ndarray) -> "DenoiserParams":
        out = {}
        i = 0
        for name, a in self.arrays.items():
            out[name] = np.asarray(flat[i:i + a.size], dtype=a.dtype).reshape(a.shape)
            i += a.size
        if i != flat.size:
            raise DimensionError(f"flat vector has {flat.size} values, parameters need {i}")
        return DenoiserParams(self.config, out)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def attention(self, stage: int, name: str) -> AttentionWeights:
        g = self.arrays
        pre = f"stage{stage}.{name}."
        return AttentionWeights(g[pre + "q"], g[pre + "k"], g[pre + "v"], g[pre + "o"])

    def save(self, path):
        from ..tensorio import save_checkpoint
        return save_checkpoint(path, self.arrays, dtype="f64", config=asdict(self.config))

    @classmethod
    def load(cls, path, dtype=np.float64) -> "DenoiserParams":
        from ..tensorio import load_checkpoint
        arrays, header = load_checkpoint(path)
        config = ToyConfig(**header["config"])
        return cls(config, {k: v.astype(dtype) for k, v in arrays.items()})


# --------------------------------------------------------------------------
# the two audio attention paths, standalone
# --------------------------------------------------------------------------

def spatial_audio_attend(z_s, c_a_frame, mask, w: AttentionWeights):
    """``z_s + CrossAttn(z_s, c_a) * M`` for one frame; ``z_s`` is [(h*w), c]."""
    z_s = np.asarray(z_s)
    mask = np.asarray(mask).reshape(-1)
    if mask.shape[0] != z_s.shape[0]:
        raise DimensionError(f"mask has {mask.shape[0]} cells, latent has {z_s.shape[0]} positions")
    att = nx.cross_attention(z_s, c_a_frame, w)
    return z_s + att * mask[:, None]


def temporal_audio_attend(z_t, c_ta, w: AttentionWeights):
    """``z_t + CrossAttn(z_t, c_ta)``; ``z_t`` is [(h*w), f, c], ``c_ta`` is
    the pooled [d, c] shared by every spatial location."""
    z_t = np.asarray(z_t)
    c_ta = np.asarray(c_ta)
    if z_t.ndim != 3:
        raise DimensionError(f"z_t must be [(h*w), f, c], got {z_t.shape}")
    if c_ta.ndim != 2:
        raise DimensionError(f"c_ta must be [d, c], got {c_ta.shape}")
    repeated = np.broadcast_to(c_ta, (z_t.shape[0],) + c_ta.shape)
    return z_t + nx.cross_attention(z_t, repeated, w)


# --------------------------------------------------------------------------
# forward pass on the tape
# --------------------------------------------------------------------------

def _pool2(x: Var) -> Var:
    f, h, w, c = nx.value_of(x).shape
    return nx.mean(nx.reshape(x, (f, h // 2, 2, w // 2, 2, c)), axis=(2, 4))


def _up2(x: Var) -> Var:
    xv = nx.value_of(x)
    f, h, w, c = xv.shape
    spread = nx.add(nx.reshape(x, (f, h, 1, w, 1, c)),
                    np.zeros((1, 1, 2, 1, 2, 1), dtype=xv.dtype))
    return nx.reshape(spread, (f, 2 * h, 2 * w, c))


def _pool_mask(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    return mask.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3))


@functools.lru_cache(maxsize=64)
def frame_positions(n: int, start: int, dim: int, dtype) -> np.ndarray:
    out = np.stack([nx.sinusoidal_encode(start + i, dim, dtype) for i in range(n)])
    out.flags.writeable = False
    return out


def forward(P: dict, cfg: ToyConfig, x, audio, t: int, buckets, r_img, mask,
            use_image=True, use_audio=True, context=None) -> Var:
    """Noise prediction for one clip. ``P`` maps names to arrays or ``Var``s."""
    f, h, w, _ = x.shape
    dtype = nx.value_of(P["in.w"]).dtype
    c = cfg.hidden
    a = np.asarray(audio, dtype=dtype)
    if not use_audio:
        a = np.zeros_like(a)
    A = a
    for i in range(3):
        A = nx.linear(A, P[f"audio.w{i}"], P[f"audio.b{i}"])  # [f, d, c]
    c_ta = nx.mean(A, axis=0)  # [d, c]

    if not isinstance(buckets, MotionBuckets):
        buckets = MotionBuckets(*buckets)
    ref = np.asarray(r_img, dtype=dtype).reshape(1, -1)
    if not use_image:
        ref = np.zeros_like(ref)
    emb = nx.add(
        nx.add(nx.matmul(nx.sinusoidal_encode(t, cfg.dim_time, dtype).reshape(1, -1), P["time.w"]),
               nx.matmul(bucket_encoding(buckets, cfg.dim_pe, dtype).reshape(1, -1), P["bucket.w"])),
        nx.matmul(ref, P["ref.w"]))  # [1, c]

    o = 0 if context is None else context.latents.shape[0]
    hid = nx.add(nx.linear(np.asarray(x, dtype=dtype), P["in.w"], P["in.b"]),
                 frame_positions(f, o, c, np.dtype(dtype)).reshape(f, 1, 1, c))
    ctx = None
    if o:
        ctx = nx.add(nx.linear(np.asarray(context.latents, dtype=dtype), P["in.w"], P["in.b"]),
                     frame_positions(o, 0, c, np.dtype(dtype)).reshape(o, 1, 1, c))

    mask = np.asarray(mask, dtype=dtype)
    masks = [mask, _pool_mask(mask)]
    ctxs = [ctx, None if ctx is None else _pool2(ctx)]

    hid = _stage(P, 0, hid, emb, A, c_ta, masks[0], ctxs[0])
    skip0 = hid
    hid = _pool2(hid)
    hid = _stage(P, 1, hid, emb, A, c_ta, masks[1], ctxs[1])
    skip1 = hid
    hid = _stage(P, 2, nx.add(hid, skip1), emb, A, c_ta, masks[1], ctxs[1])
    hid = _up2(hid)
    hid = _stage(P, 3, nx.add(hid, skip0), emb, A, c_ta, masks[0], ctxs[0])
    return nx.linear(hid, P["out.w"], P["out.b"])


def _attn(P, stage, name, x, ctx):
    pre = f"stage{stage}.{name}."
    return nx.attend(x, ctx, P[pre + "q"], P[pre + "k"], P[pre + "v"], P[pre + "o"])


def _stage(P, k, hid, emb, A, c_ta, mask, ctx):
    f, h, w, c = nx.value_of(hid).shape
    pre = f"stage{k}.res."
    inner = nx.silu(nx.add(nx.linear(hid, P[pre + "w1"], P[pre + "b1"]), emb))
    hid = nx.add(hid, nx.linear(inner, P[pre + "w2"], P[pre + "b2"]))

    zs = nx.reshape(hid, (f, h * w, c))
    zs = nx.add(zs, nx.mul(_attn(P, k, "sa", zs, A), mask.reshape(1, h * w, 1)))

    zt = nx.transpose(nx.reshape(zs, (f, h * w, c)), (1, 0, 2))  # [(h*w), f, c]
    if ctx is not None:
        o = nx.value_of(ctx).shape[0]
        ct = nx.transpose(nx.reshape(ctx, (o, h * w, c)), (1, 0, 2))
        kv = nx.concat([ct, zt], axis=1)
    else:
        kv = zt
    zt = nx.add(zt, _attn(P, k, "ts", zt, kv))
    zt = nx.add(zt, _attn(P, k, "ta", zt, c_ta))
    return nx.reshape(nx.transpose(zt, (1, 0, 2)), (f, h, w, c))


def denoising_loss(params: DenoiserParams, x0, noise, audio, t, buckets, r_img, mask,
                   schedule, use_image=True, use_audio=True, context=None,
                   with_grad=True):
    """MSE between predicted and true noise; returns (loss, grads dict or None)."""
    x_t = schedule.add_noise(x0, noise, t)
    if with_grad:
        P = {k: nx.param(v) for k, v in params.arrays.items()}
    else:
        P = params.arrays
    pred = forward(P, params.config, x_t, audio, t, buckets, r_img, mask,
                   use_image, use_audio, context)
    loss = nx.square_mean(nx.sub(pred, np.asarray(noise, dtype=params.dtype)))
    if not with_grad:
        return float(loss), None
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    return float(loss.value), grads


class ToyDenoiser:
    """Backbone adapter: binds parameters to the run's reference embedding
    and face mask."""

    def __init__(self, params: DenoiserParams, r_img, mask, dtype=None):
        self.params = params if dtype is None else params.astype(dtype)
        self.r_img = np.asarray(r_img)
        self.mask = np.asarray(mask)
        cfg = params.config
        if self.mask.shape != (cfg.h, cfg.w):
            raise DimensionError(f"mask shape {self.mask.shape} != latent grid {(cfg.h, cfg.w)}")
        self.clip_len = cfg.f

    def predict_eps(self, x, audio, t, buckets, *, use_image=True, use_audio=True, context=None):
        out = forward(self.params.arrays, self.params.config, x, audio, t, buckets, self.r_img,
                      self.mask, use_image, use_audio, context)
        return nx.check_finite(out.astype(x.dtype, copy=False), "toy denoiser")
