"""Audio condition tensors: frame alignment, projection, temporal pooling and
the face mask that restricts spatial audio attention."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorio
from .errors import ConfigError, DimensionError, EmptyInputError, InputError
from .numerics import linear


@dataclass(frozen=True)
class RawAudioFeatures:
    rate_hz: float
    stages: list  # each [n_tokens, c_stage]

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ConfigError(f"rate_hz must be positive, got {self.rate_hz}")
        if not self.stages:
            raise ConfigError("audio features need at least one stage")
        n = {s.shape[0] for s in self.stages}
        if len(n) != 1:
            raise DimensionError(f"stages disagree on token count: {sorted(n)}")

    @property
    def n_tokens(self) -> int:
        return self.stages[0].shape[0]

    @property
    def width(self) -> int:
        return sum(s.shape[1] for s in self.stages)

    def save(self, path):
        stacked = np.stack(self.stages)  # [stages, n_tokens, c_stage]
        return tensorio.save_tensor(path, stacked, rate_hz=self.rate_hz, stages=len(self.stages))

    @classmethod
    def load(cls, path) -> "RawAudioFeatures":
        data, header = tensorio.load_tensor(path)
        if data.ndim != 3:
            raise DimensionError(f"audio payload must be [stages, tokens, channels], got {data.shape}")
        if "stages" in header and header["stages"] != data.shape[0]:
            raise DimensionError(f"header says {header['stages']} stages, payload has {data.shape[0]}")
        return cls(float(header["rate_hz"]), [np.array(s) for s in data])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def window_token_range(frame: int, fps: float, rate_hz: float, window_sec: float = 0.2):
    """Half-open token range ``[start, start + d)`` for one video frame.

    The window is centred on the frame midpoint ``(frame + 0.5) / fps``.
    """
    d = max(1, _round_half_up(window_sec * rate_hz))
    center = (frame + 0.5) / fps * rate_hz
    start = _round_half_up(center - d / 2)
    return start, start + d


def align_audio(raw: RawAudioFeatures, n_frames: int, fps: float,
                window_sec: float = 0.2) -> np.ndarray:
    """Gather per-frame audio context windows; returns [n_frames, d, width].

    Token positions outside the recording are zero-filled, so the output
    always has ``n_frames`` frames.
    """
    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    if window_sec <= 0:
        raise ConfigError(f"window_sec must be positive, got {window_sec}")
    feats = np.concatenate(raw.stages, axis=1)
    if feats.shape[0] == 0 or feats.shape[1] == 0:
        raise ConfigError("audio stages are empty")
    d = max(1, _round_half_up(window_sec * raw.rate_hz))
    padded_len = raw.n_tokens
    out = np.zeros((n_frames, d, feats.shape[1]), dtype=feats.dtype)
    for i in range(n_frames):
        start, stop = window_token_range(i, fps, raw.rate_hz, window_sec)
        lo, hi = max(start, 0), min(stop, padded_len)
        if lo < hi:
            out[i, lo - start:hi - start] = feats[lo:hi]
    return out


@dataclass
class ProjectionStack:
    """Linear layers applied in sequence, no activations in between."""

    weights: list
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if not self.biases:
            self.biases = [np.zeros(w.shape[1], dtype=w.dtype) for w in self.weights]
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError(f"projection layers do not chain: {a.shape} -> {b.shape}")

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def random(cls, rng, in_width, width, n_layers=3, dtype=np.float64):
        dims = [in_width] + [width] * n_layers
        ws = [(rng.standard_normal((a, b)) / math.sqrt(a)).astype(dtype)
              for a, b in zip(dims[:-1], dims[1:])]
        return cls(ws)


def project_audio(emb: np.ndarray, proj: ProjectionStack) -> np.ndarray:
    if emb.ndim != 3:
        raise DimensionError(f"audio embedding must be [frames, tokens, channels], got {emb.shape}")
    if emb.shape[-1] != proj.in_width:
        raise DimensionError(
            f"channel axis {emb.shape[-1]} does not match projection input {proj.in_width}")
    x = emb
    for w, b in zip(proj.weights, proj.biases):
        x = linear(x, w, b)
    return x


def pool_temporal(emb: np.ndarray) -> np.ndarray:
    """Mean over the frame axis: [f, d, c] -> [d, c]."""
    emb = np.asarray(emb)
    if emb.ndim != 3:
        raise DimensionError(f"audio embedding must be [frames, tokens, channels], got {emb.shape}")
    if emb.shape[0] == 0:
        raise EmptyInputError("cannot pool an embedding with zero frames")
    return emb.mean(axis=0)


# --------------------------------------------------------------------------
# face boxes
# --------------------------------------------------------------------------

def joint_box(boxes: Sequence) -> tuple:
    """Componentwise min of mins / max of maxes over ``(x0, y0, x1, y1)``."""
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return (arr[:, 0].min(), arr[:, 1].min(), arr[:, 2].max(), arr[:, 3].max())


def _cell_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    first = min(max(int(math.floor(lo * n)), 0), n - 1)
    last = int(math.ceil(hi * n)) - 1
    last = min(max(last, first), n - 1)
    return first, last


def build_face_mask(boxes: Sequence, h: int, w: int) -> np.ndarray:
    """Binary [h, w] mask covering the joint box of all per-frame boxes.

    Boxes are normalised ``(x0, y0, x1, y1)``. No boxes means no restriction.
    """
    if h < 1 or w < 1:
        raise ConfigError(f"mask grid must be positive, got {h}x{w}")
    mask = np.zeros((h, w), dtype=np.float64)
    if len(boxes) == 0:
        mask[:] = 1.0
        return mask
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(arr < 0) or np.any(arr > 1):
        raise InputError("boxes must lie in normalised [0, 1] coordinates")
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise InputError("box corners are inverted")
    x0, y0, x1, y1 = joint_box(arr)
    c0, c1 = _cell_span(x0, x1, w)
    r0, r1 = _cell_span(y0, y1, h)
    mask[r0:r1 + 1, c0:c1 + 1] = 1.0
    return mask


# --------------------------------------------------------------------------
# JSON records for boxes / landmarks
# --------------------------------------------------------------------------

def _records(data, key):
    if isinstance(data, dict):
        data = data.get("frames", data.get(key + "s", []))
    out = []
    for rec in data:
        out.append(rec[key] if isinstance(rec, dict) else rec)
    return out


def load_boxes(path) -> list:
    """Read ``[{"frame": i, "box": [x0, y0, x1, y1]}, ...]`` (bare lists accepted)."""
    return [tuple(float(v) for v in b) for b in _records(json.loads(Path(path).read_text()), "box")]


def save_boxes(path, boxes):
    Path(path).write_text(json.dumps(
        [{"frame": i, "box": [float(v) for v in b]} for i, b in enumerate(boxes)], indent=1))


def load_landmarks(path) -> list:
    return [np.asarray(p, dtype=np.float64)
            for p in _records(json.loads(Path(path).read_text()), "points")]


def save_landmarks(path, landmarks):
    Path(path).write_text(json.dumps(
        [{"frame": i, "points": np.asarray(p).tolist()} for i, p in enumerate(landmarks)],
        indent=1))
