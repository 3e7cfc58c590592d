"""Toy training loop with per-sample condition dropout."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..diffusion import NoiseSchedule
from ..errors import ConfigError, EmptyInputError, NumericalError
from .toy import DenoiserParams, denoising_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DropoutRates:
    p_audio: float = 0.05
    p_img: float = 0.05
    p_both: float = 0.05

    def __post_init__(self):
        ps = (self.p_audio, self.p_img, self.p_both)
        if any(p < 0 for p in ps) or sum(ps) > 1 + 1e-12:
            raise ConfigError(f"dropout probabilities must be >= 0 and sum to <= 1, got {ps}")


def sample_dropout(rng: np.random.Generator, rates: DropoutRates) -> tuple[bool, bool]:
    """One uniform draw split into disjoint bands: audio-only, image-only,
    both. Returns ``(drop_audio, drop_image)``."""
    u = rng.random()
    if u < rates.p_audio:
        return True, False
    u -= rates.p_audio
    if u < rates.p_img:
        return False, True
    u -= rates.p_img
    if u < rates.p_both:
        return True, True
    return False, False


@dataclass
class TrainingSample:
    x0: np.ndarray  # [f, h, w, c_lat]
    audio: np.ndarray  # [f, d, c_a]
    r_img: np.ndarray
    mask: np.ndarray
    buckets: object


class Adam:
    def __init__(self, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {}
        self.v = {}
        self.n = 0

    def update(self, arrays: dict, grads: dict) -> dict:
        self.n += 1
        out = {}
        for k, p in arrays.items():
            g = grads[k]
            m = self.m[k] = self.b1 * self.m.get(k, 0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0) + (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.n)
            vh = v / (1 - self.b2 ** self.n)
            out[k] = p - self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


def train_toy(params: DenoiserParams, dataset: Sequence[TrainingSample],
              dropout: DropoutRates = DropoutRates(), steps: int = 100, seed: int = 0,
              schedule: Optional[NoiseSchedule] = None, lr: float = 1e-3,
              hook: Optional[Callable] = None, trace_path=None):
    """Adam on the noise-prediction MSE, one sample per step.

    Dropped audio becomes zero tokens and a dropped image a zero reference
    embedding. ``hook(step, sample_index, drop_audio, drop_image, audio)``
    sees the exact audio tensor fed to the network. Returns the updated
    parameters and the loss trace.
    """
    if not dataset:
        raise EmptyInputError("training dataset is empty")
    if steps == 0:
        return params, []
    schedule = schedule or NoiseSchedule(25)
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    current = params.copy()
    trace = []
    for step in range(steps):
        i = int(rng.integers(len(dataset)))
        sample = dataset[i]
        drop_audio, drop_img = sample_dropout(rng, dropout)
        t = int(rng.integers(1, schedule.T + 1))
        noise = rng.standard_normal(sample.x0.shape)
        audio = np.zeros_like(sample.audio) if drop_audio else sample.audio
        r_img = np.zeros_like(sample.r_img) if drop_img else sample.r_img
        if hook is not None:
            hook(step, i, drop_audio, drop_img, audio)
        loss, grads = denoising_loss(current, sample.x0, noise, audio, t, sample.buckets,
                                     r_img, sample.mask, schedule)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss at step {step}", index=step)
        current = DenoiserParams(current.config, opt.update(current.arrays, grads))
        trace.append((step, loss))
        if step % 50 == 0:
            log.debug("step %d loss %.6f", step, loss)
    if trace_path is not None:
        write_loss_trace(trace_path, trace)
    return current, trace


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in trace:
            w.writerow([step, repr(float(loss))])
