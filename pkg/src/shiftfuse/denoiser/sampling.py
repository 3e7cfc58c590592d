"""One guided reverse step on a clip, plus the shared cost counter."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from ..diffusion import GuidanceConfig, NoiseSchedule, guided_predict
from ..errors import DimensionError, InputError

BRANCHES = (  # (use_image, use_audio)
    (False, False),
    (True, False),
    (True, True),
)


@dataclass
class LatentClip:
    frames: np.ndarray  # [f, h, w, c_lat]
    frame_offset: int = 0

    def __post_init__(self):
        if self.frame_offset < 0:
            raise InputError(f"frame_offset must be >= 0, got {self.frame_offset}")


@dataclass
class MotionContext:
    """Previously denoised frames handed to the next clip."""

    latents: np.ndarray  # [o, h, w, c_lat]
    audio: np.ndarray  # [o, d, c_a]

    @property
    def length(self) -> int:
        return self.latents.shape[0]


@dataclass
class CostCounter:
    """Accumulate-only tallies; safe to bump from concurrent window workers."""

    windows: int = 0
    model_evals: int = 0
    frames_processed: int = 0
    frames_written: int = 0
    context_frames: int = 0
    motion_extra_pairs: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, **deltas):
        with self._lock:
            for k, v in deltas.items():
                setattr(self, k, getattr(self, k) + v)

    def merge(self, other: "CostCounter"):
        self.bump(**other.as_dict())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}


def denoise_clip(clip: LatentClip, audio: np.ndarray, buckets, model, t: int,
                 g: GuidanceConfig, schedule: NoiseSchedule,
                 counter: Optional[CostCounter] = None,
                 context: Optional[MotionContext] = None) -> LatentClip:
    """Guided reverse step t -> t-1 on one clip.

    Three model evaluations (unconditional, image, image + audio) are combined
    by :func:`guided_predict` and fed to the deterministic sampler. Only the
    clip's own frames are read or written.
    """
    schedule.check(t)
    x = clip.frames
    if audio.shape[0] != x.shape[0]:
        raise DimensionError(f"audio slice has {audio.shape[0]} frames, clip has {x.shape[0]}")
    branches = [model.predict_eps(x, audio, t, buckets, use_image=use_image,
                                  use_audio=use_audio, context=context)
                for use_image, use_audio in BRANCHES]
    eps = guided_predict(*branches, g)
    out = schedule.step(x, eps.astype(x.dtype, copy=False), t)
    if counter is not None:
        o = 0 if context is None else context.length
        f = x.shape[0]
        counter.bump(windows=1, model_evals=len(branches), frames_processed=f,
                     motion_extra_pairs=(f + o) ** 2 - f ** 2)
    return LatentClip(out, clip.frame_offset)
