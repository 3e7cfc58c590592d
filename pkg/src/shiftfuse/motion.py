"""Motion buckets: amplitude statistics from boxes and landmarks, their
sinusoidal embedding, and the audio-to-bucket predictor with dynamic scale."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BucketRangeError, ConfigError, DimensionError, InputError, InsufficientDataError
from .numerics import sinusoidal_encode

BUCKET_MAX = 128
DEFAULT_K = 4096.0
BETA_PRESETS = {"mild": 0.5, "moderate": 1.0, "intense": 2.0}


@dataclass(frozen=True)
class MotionBuckets:
    m_t: int
    m_e: int
    beta: float = 1.0

    def __post_init__(self):
        for name in ("m_t", "m_e"):
            v = getattr(self, name)
            if not 0 <= v <= BUCKET_MAX or int(v) != v:
                raise BucketRangeError(f"{name}={v} outside the integer range [0, {BUCKET_MAX}]")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def _to_bucket(value: float, k: float) -> int:
    return int(math.floor(min(max(k * value, 0.0), BUCKET_MAX) + 0.5))


def box_statistic(boxes, mode: str = "centers") -> float:
    """Mean per-coordinate temporal variance, in units of the mean box diagonal.

    ``mode`` picks what varies: box ``centers`` (default), all four
    ``corners``, or box ``sizes``.
    """
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if arr.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 frames of boxes, got {arr.shape[0]}")
    wh = arr[:, 2:] - arr[:, :2]
    diag = float(np.mean(np.hypot(wh[:, 0], wh[:, 1])))
    if diag <= 0:
        raise InputError("boxes have zero mean diagonal")
    if mode == "centers":
        track = (arr[:, :2] + arr[:, 2:]) / 2
    elif mode == "corners":
        track = arr
    elif mode == "sizes":
        track = wh
    else:
        raise ConfigError(f"unknown box statistic {mode!r}")
    return float(np.mean(np.var(track / diag, axis=0)))


def bucket_from_boxes(boxes, k_t: float = DEFAULT_K, mode: str = "centers") -> int:
    return _to_bucket(box_statistic(boxes, mode), k_t)


def landmark_statistic(landmarks) -> float:
    frames = [np.asarray(p, dtype=np.float64) for p in landmarks]
    if len(frames) < 2:
        raise InsufficientDataError(f"need at least 2 frames of landmarks, got {len(frames)}")
    counts = {p.shape for p in frames}
    if len(counts) != 1:
        raise InputError(f"landmark point counts differ across frames: {sorted(counts)}")
    pts = np.stack(frames)  # [frames, points, 2]
    rel = pts - pts.mean(axis=1, keepdims=True)
    return float(np.mean(np.var(rel, axis=0)))


def bucket_from_landmarks(landmarks, k_e: float = DEFAULT_K) -> int:
    """Expression bucket from centroid-relative landmark variance; head
    translation does not leak in."""
    return _to_bucket(landmark_statistic(landmarks), k_e)


def bucket_encoding(b: MotionBuckets, dim_pe: int = 128, dtype=np.float64) -> np.ndarray:
    return np.concatenate([sinusoidal_encode(b.m_t, dim_pe, dtype),
                           sinusoidal_encode(b.m_e, dim_pe, dtype)])


def embed_buckets(b: MotionBuckets, dim_pe: int, W: np.ndarray) -> np.ndarray:
    """``[Pe(m_t), Pe(m_e)] @ W`` with ``W`` of shape (2 * dim_pe, dim_block)."""
    if not isinstance(b, MotionBuckets):
        b = MotionBuckets(*b)
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != 2 * dim_pe:
        raise DimensionError(f"W must have {2 * dim_pe} input rows, got shape {W.shape}")
    return bucket_encoding(b, dim_pe, W.dtype) @ W


@dataclass
class BucketPredictor:
    """Three linear layers with ReLU between; input is the token-mean of the
    pooled audio concatenated with the reference embedding."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ConfigError("bucket predictor has exactly three layers")
        if self.weights[-1].shape[1] != 2:
            raise DimensionError(f"predictor head must output 2 values, got {self.weights[-1].shape[1]}")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError(f"predictor layers do not chain: {a.shape} -> {b.shape}")

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def random(cls, rng, audio_width, ref_width, hidden=32, dtype=np.float64):
        dims = [audio_width + ref_width, hidden, hidden, 2]
        ws = [(rng.standard_normal((a, b)) / math.sqrt(a)).astype(dtype)
              for a, b in zip(dims[:-1], dims[1:])]
        bs = [np.zeros(b, dtype=dtype) for b in dims[1:]]
        return cls(ws, bs)

    def raw(self, pooled_audio: np.ndarray, r_img: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.asarray(pooled_audio).mean(axis=0), np.asarray(r_img).reshape(-1)])
        if x.shape[0] != self.in_width:
            raise DimensionError(f"predictor input width {x.shape[0]} != {self.in_width}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < 2:
                x = np.maximum(x, 0)
        return x

    def squashed(self, pooled_audio, r_img) -> np.ndarray:
        return BUCKET_MAX / (1.0 + np.exp(-self.raw(pooled_audio, r_img)))


def scale_buckets(pred, beta: float) -> MotionBuckets:
    """Apply the dynamic scale to real-valued predictions, then clamp and round."""
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    m_t, m_e = (_to_bucket(float(v), beta) for v in pred)
    return MotionBuckets(m_t, m_e, beta)


def predict_buckets(c_ta: np.ndarray, r_img: np.ndarray, p: BucketPredictor,
                    beta: float = 1.0) -> MotionBuckets:
    return scale_buckets(p.squashed(c_ta, r_img), beta)
