"""Long-sequence denoising strategies.

``run_shift`` is the position-shift fusion scheduler: every timestep sweeps
the whole sequence with non-overlapping windows of the model's clip length,
but the sweep starts ``alpha`` frames later than at the previous timestep
and wraps circularly past the end, so window boundaries never stay put.
The three baselines (independent clips, overlapping windows, motion-frame
context) share the same clip denoiser and cost counter.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .denoiser.sampling import CostCounter, LatentClip, MotionContext, denoise_clip
from .diffusion import GuidanceConfig, NoiseSchedule
from .errors import ConfigError, DimensionError, InputError

STRATEGIES = ("shift", "independent", "overlap", "motion_frames")


@dataclass(frozen=True)
class ShiftConfig:
    l: int
    f: int
    alpha: int = 7
    T: int = 25
    strict: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.f < 1 or self.l < 1:
            raise ConfigError(f"l and f must be positive, got l={self.l}, f={self.f}")
        if self.strict and not 0 < self.alpha < self.f < self.l:
            raise ConfigError(
                f"need 0 < alpha < f < l, got alpha={self.alpha}, f={self.f}, l={self.l}")
        if not self.strict and (self.alpha < 0 or self.f > self.l):
            raise ConfigError(f"need alpha >= 0 and f <= l, got alpha={self.alpha}, "
                              f"f={self.f}, l={self.l}")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "shift"
    o: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.o < 0:
            raise ConfigError(f"context/overlap size must be >= 0, got {self.o}")


@dataclass
class Window:
    start: int
    end: int  # taken modulo l, so end < start means the window wrapped
    indices: list
    duplicate: list
    wraps: bool = False

    def as_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "wraps": self.wraps,
                "indices": list(self.indices), "duplicate": list(self.duplicate)}


@dataclass
class TimestepPlan:
    k: int
    t: int
    start: int
    windows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"k": self.k, "t": self.t, "start": self.start,
                "windows": [w.as_dict() for w in self.windows]}


@dataclass
class WindowPlan:
    config: ShiftConfig
    steps: list

    def as_dict(self) -> dict:
        c = self.config
        return {"l": c.l, "f": c.f, "alpha": c.alpha, "T": c.T,
                "timesteps": [s.as_dict() for s in self.steps]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1)


def step_start(k: int, alpha: int, l: int) -> int:
    """Sweep start for the k-th executed timestep (k = 0 is t = T)."""
    return (k * alpha) % l


def plan_timestep(k: int, cfg: ShiftConfig) -> TimestepPlan:
    l, f = cfg.l, cfg.f
    start = step_start(k, cfg.alpha, l)
    written = np.zeros(l, dtype=bool)
    plan = TimestepPlan(k=k, t=cfg.T - k, start=start)
    s, n = start, 0
    while n < l:
        idx = [(s + j) % l for j in range(f)]
        dup = []
        for i in idx:
            dup.append(bool(written[i]))
            written[i] = True
        wraps = s + f > l
        plan.windows.append(Window(s, (s + f) % l if wraps else s + f, idx, dup, wraps))
        s, n = s + f, n + f
        if s >= l:
            s %= l
    return plan


def plan_windows(cfg: ShiftConfig) -> WindowPlan:
    """Per-timestep window layout; later visits to an already written index
    are flagged duplicate and their outputs are discarded."""
    return WindowPlan(cfg, [plan_timestep(k, cfg) for k in range(cfg.T)])


# --------------------------------------------------------------------------
# strategies
# --------------------------------------------------------------------------

def _resolve_schedule(model, schedule, T):
    schedule = schedule or getattr(model, "schedule", None) or NoiseSchedule(T)
    if schedule.T != T:
        raise ConfigError(f"schedule has T={schedule.T}, strategy asked for T={T}")
    return schedule


def _check_inputs(z, audio):
    if z.ndim != 4:
        raise DimensionError(f"latent sequence must be [l, h, w, c], got {z.shape}")
    if audio.shape[0] != z.shape[0]:
        raise InputError(f"audio has {audio.shape[0]} frames, latents have {z.shape[0]}")


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_shift(z_T, audio, cfg: ShiftConfig, model, buckets, g: GuidanceConfig,
              schedule: Optional[NoiseSchedule] = None,
              counter: Optional[CostCounter] = None, workers: int = 1) -> np.ndarray:
    z_T = np.asarray(z_T)
    _check_inputs(z_T, audio)
    if z_T.shape[0] != cfg.l:
        raise InputError(f"latent length {z_T.shape[0]} != configured l={cfg.l}")
    schedule = _resolve_schedule(model, schedule, cfg.T)
    x = z_T.copy()
    for k in range(cfg.T):
        step = plan_timestep(k, cfg)
        t = step.t
        current = x

        def one(win, current=current, t=t):
            idx = np.asarray(win.indices)
            out = denoise_clip(LatentClip(current[idx], win.start), audio[idx], buckets,
                               model, t, g, schedule, counter)
            return idx, out.frames

        results = _map(one, step.windows, workers)
        x = current.copy()
        written = 0
        for win, (idx, frames) in zip(step.windows, results):
            keep = ~np.asarray(win.duplicate)
            x[idx[keep]] = frames[keep]
            written += int(keep.sum())
        if counter is not None:
            counter.bump(frames_written=written)
    return x


def _pad(z, audio, f):
    l = z.shape[0]
    pad = (-l) % f
    if pad:
        z = np.concatenate([z, np.zeros((pad,) + z.shape[1:], dtype=z.dtype)])
        audio = np.concatenate([audio, np.zeros((pad,) + audio.shape[1:], dtype=audio.dtype)])
    return z, audio


def run_independent(z_T, audio, f: int, T: int, model, buckets, g: GuidanceConfig,
                    schedule: Optional[NoiseSchedule] = None,
                    counter: Optional[CostCounter] = None, workers: int = 1) -> np.ndarray:
    """Denoise each f-clip on its own; a ragged tail is zero-padded and cut."""
    z_T = np.asarray(z_T)
    _check_inputs(z_T, audio)
    schedule = _resolve_schedule(model, schedule, T)
    l = z_T.shape[0]
    z, a = _pad(z_T, audio, f)

    def one(s):
        x = z[s:s + f].copy()
        for t in range(T, 0, -1):
            x = denoise_clip(LatentClip(x, s), a[s:s + f], buckets, model, t, g, schedule,
                             counter).frames
        return x

    clips = _map(one, range(0, z.shape[0], f), workers)
    if counter is not None:
        counter.bump(frames_written=l * T)
    return np.concatenate(clips)[:l]


def overlap_starts(l: int, f: int, o: int) -> list:
    if not 0 < o < f:
        raise ConfigError(f"overlap must satisfy 0 < o < f, got o={o}, f={f}")
    if f > l:
        raise ConfigError(f"clip length {f} exceeds sequence length {l}")
    stride = f - o
    starts = list(range(0, l - f, stride))
    starts.append(l - f)
    return starts


def crossfade_weights(starts: list, f: int) -> list:
    """Linear ramps across each pair of overlapping windows; the two weights
    in any overlap sum to one."""
    weights = []
    for j, s in enumerate(starts):
        w = np.ones(f)
        if j > 0:
            ov = starts[j - 1] + f - s
            if ov > 0:
                w[:ov] = np.minimum(w[:ov], (np.arange(ov) + 1) / (ov + 1))
        if j + 1 < len(starts):
            ov = s + f - starts[j + 1]
            if ov > 0:
                w[f - ov:] = np.minimum(w[f - ov:], 1 - (np.arange(ov) + 1) / (ov + 1))
        weights.append(w)
    return weights


def run_overlap(z_T, audio, f: int, o: int, T: int, model, buckets, g: GuidanceConfig,
                schedule: Optional[NoiseSchedule] = None,
                counter: Optional[CostCounter] = None, workers: int = 1) -> np.ndarray:
    """Windows advance by ``f - o``; overlapping predictions are cross-faded."""
    z_T = np.asarray(z_T)
    _check_inputs(z_T, audio)
    schedule = _resolve_schedule(model, schedule, T)
    l = z_T.shape[0]
    starts = overlap_starts(l, f, o)
    weights = crossfade_weights(starts, f)
    x = z_T.copy()
    shape = (f,) + (1,) * (x.ndim - 1)
    for t in range(T, 0, -1):
        current = x

        def one(s, current=current, t=t):
            return denoise_clip(LatentClip(current[s:s + f], s), audio[s:s + f], buckets,
                                model, t, g, schedule, counter).frames

        outs = _map(one, starts, workers)
        acc = np.zeros(x.shape, dtype=np.float64)
        norm = np.zeros(l)
        for s, w, y in zip(starts, weights, outs):
            acc[s:s + f] += w.reshape(shape) * y
            norm[s:s + f] += w
        x = (acc / norm.reshape((l,) + (1,) * (x.ndim - 1))).astype(z_T.dtype)
        if counter is not None:
            counter.bump(frames_written=l)
    return x


def run_motion_frames(z_T, audio, f: int, o: int, T: int, model, buckets, g: GuidanceConfig,
                      schedule: Optional[NoiseSchedule] = None,
                      counter: Optional[CostCounter] = None) -> np.ndarray:
    """Sequential clips; each sees the previous clip's last ``o`` denoised
    frames (zeros before the first clip). ``o = 0`` is plain independent
    clips."""
    z_T = np.asarray(z_T)
    _check_inputs(z_T, audio)
    if not 0 <= o < f:
        raise ConfigError(f"motion frames must satisfy 0 <= o < f, got o={o}, f={f}")
    schedule = _resolve_schedule(model, schedule, T)
    l = z_T.shape[0]
    z, a = _pad(z_T, audio, f)
    context = None
    if o:
        context = MotionContext(np.zeros((o,) + z.shape[1:], dtype=z.dtype),
                                np.zeros((o,) + a.shape[1:], dtype=a.dtype))
    clips = []
    for s in range(0, z.shape[0], f):
        x = z[s:s + f].copy()
        if counter is not None and o:
            counter.bump(context_frames=o)
        for t in range(T, 0, -1):
            x = denoise_clip(LatentClip(x, s), a[s:s + f], buckets, model, t, g, schedule,
                             counter, context=context).frames
        clips.append(x)
        if o:
            context = MotionContext(x[f - o:].copy(), a[s + f - o:s + f].copy())
    if counter is not None:
        counter.bump(frames_written=l * T)
    return np.concatenate(clips)[:l]


def run_strategy(kind: str, z_T, audio, *, f: int, T: int, model, buckets, g,
                 alpha: int = 7, o: int = 0, schedule=None, counter=None, workers=1,
                 strict: bool = True):
    if kind == "shift":
        cfg = ShiftConfig(z_T.shape[0], f, alpha, T, strict=strict)
        return run_shift(z_T, audio, cfg, model, buckets, g, schedule, counter, workers)
    if kind == "independent":
        return run_independent(z_T, audio, f, T, model, buckets, g, schedule, counter, workers)
    if kind == "overlap":
        return run_overlap(z_T, audio, f, o, T, model, buckets, g, schedule, counter, workers)
    if kind == "motion_frames":
        return run_motion_frames(z_T, audio, f, o, T, model, buckets, g, schedule, counter)
    raise ConfigError(f"unknown strategy {kind!r}")
