"""Variance-preserving noise schedule, deterministic reverse step and
multi-condition guidance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ScheduleError


@dataclass(frozen=True)
class GuidanceConfig:
    r_i: float = 2.0
    r_a: float = 7.5

    def __post_init__(self):
        if self.r_i < 0 or self.r_a < 0:
            raise ConfigError(f"guidance scales must be non-negative, got ({self.r_i}, {self.r_a})")


class NoiseSchedule:
    """Cosine alpha-bar over ``T`` steps, ``alpha_bar[0] == 1`` (clean).

    ``alpha_bar[t]`` for t = 1..T is strictly decreasing; the terminal value
    is floored at ``min_alpha_bar`` so the first reverse step is defined.
    """

    def __init__(self, T: int = 25, offset: float = 0.008, min_alpha_bar: float = 1e-4):
        if T < 1:
            raise ConfigError(f"T must be >= 1, got {T}")
        self.T = T
        u = np.arange(T + 1, dtype=np.float64) / T
        ab = np.cos((u + offset) / (1 + offset) * math.pi / 2) ** 2
        ab = ab / ab[0]
        ab[-1] = max(ab[-1], min_alpha_bar)
        if not np.all(np.diff(ab) < 0):
            raise ConfigError("alpha_bar is not strictly decreasing; lower min_alpha_bar")
        self.alpha_bar = ab

    def __repr__(self):
        return f"NoiseSchedule(T={self.T})"

    def check(self, t: int):
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [1, {self.T}]")

    def add_noise(self, x0, noise, t):
        a = self.alpha_bar[t]
        return math.sqrt(a) * x0 + math.sqrt(1 - a) * noise

    def step(self, x_t: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
        """Deterministic (eta = 0) update from ``t`` to ``t - 1``."""
        self.check(t)
        a, a_prev = self.alpha_bar[t], self.alpha_bar[t - 1]
        dtype = x_t.dtype
        x0 = (x_t - math.sqrt(1 - a) * eps) / math.sqrt(a)
        return (math.sqrt(a_prev) * x0 + math.sqrt(1 - a_prev) * eps).astype(dtype, copy=False)

    def predict_x0(self, x_t, eps, t):
        a = self.alpha_bar[t]
        return (x_t - math.sqrt(1 - a) * eps) / math.sqrt(a)


def guided_predict(eps_uncond, eps_img, eps_img_audio, g: GuidanceConfig) -> np.ndarray:
    """Image guidance nested inside audio guidance:
    ``u + r_i (i - u) + r_a (ia - i)``.

    Evaluated in the expanded form ``(1 - r_i) u + (r_i - r_a) i + r_a ia`` so
    that scales (1, 1) and (0, 0) return a branch bit-exactly.
    """
    if not (np.shape(eps_uncond) == np.shape(eps_img) == np.shape(eps_img_audio)):
        raise DimensionError(
            f"branch shapes differ: {np.shape(eps_uncond)}, {np.shape(eps_img)}, "
            f"{np.shape(eps_img_audio)}")
    return ((1.0 - g.r_i) * eps_uncond + (g.r_i - g.r_a) * eps_img
            + g.r_a * eps_img_audio)
