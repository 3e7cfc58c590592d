"""Seeded synthetic latents, audio features and face tracks.

A scalar driver signal ``d[i]`` (one value per video frame) moves both the
latent frames and the audio tokens, so the audio carries real information
about the motion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..conditioning import RawAudioFeatures
from ..errors import ConfigError

KINDS = ("sinusoid", "coupled_random")


@dataclass(frozen=True)
class SyntheticSpec:
    period: float = 16.0  # frames, sinusoid kind
    smooth: float = 3.0  # gaussian width in frames, coupled_random kind
    fps: float = 25.0
    rate_hz: float = 50.0
    n_stages: int = 5
    stage_width: int = 4
    audio_noise: float = 0.1


def driver_signal(kind: str, l: int, seed: int, spec: SyntheticSpec = SyntheticSpec()) -> np.ndarray:
    """Unit-scale driver, one value per frame."""
    if kind == "sinusoid":
        phase = np.random.default_rng([seed, 0]).uniform(0, 2 * math.pi)
        return np.sin(2 * math.pi * np.arange(l) / spec.period + phase)
    if kind == "coupled_random":
        rng = np.random.default_rng([seed, 0])
        pad = int(math.ceil(4 * spec.smooth))
        white = rng.standard_normal(l + 2 * pad)
        k = np.exp(-0.5 * (np.arange(-pad, pad + 1) / spec.smooth) ** 2)
        d = np.convolve(white, k / k.sum(), mode="valid")[:l]
        return (d - d.mean()) / (d.std() + 1e-12)
    raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")


def _check_dims(**dims):
    for name, v in dims.items():
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v}")


def gen_synthetic(kind: str, l: int, h: int, w: int, c_lat: int, seed: int,
                  spec: SyntheticSpec = SyntheticSpec()):
    """Returns ``(target [l, h, w, c_lat], RawAudioFeatures)``.

    Frames are ``base + d[i] * load + 0.1 * d[i]**2 * bend`` with a strictly
    positive ``load``, so the per-frame mean tracks the driver. Stage 0,
    channel 0 of the audio observes the driver with unit loading.
    """
    _check_dims(l=l, h=h, w=w, c_lat=c_lat)
    d = driver_signal(kind, l, seed, spec)
    rng = np.random.default_rng([seed, 1])
    shape = (h, w, c_lat)
    base = 0.3 * rng.standard_normal(shape)
    load = 0.5 + np.abs(rng.standard_normal(shape))
    bend = rng.standard_normal(shape)
    target = base[None] + d[:, None, None, None] * load[None] \
        + 0.1 * (d ** 2)[:, None, None, None] * bend[None]

    n_tok = int(math.ceil(l / spec.fps * spec.rate_hz))
    tok_frame = (np.arange(n_tok) + 0.5) / spec.rate_hz * spec.fps - 0.5
    d_tok = np.interp(tok_frame, np.arange(l), d)
    loadings = rng.standard_normal((spec.n_stages, spec.stage_width))
    loadings[0, 0] = 1.0
    stages = []
    for s in range(spec.n_stages):
        noise = spec.audio_noise * rng.standard_normal((n_tok, spec.stage_width))
        stages.append(d_tok[:, None] * loadings[s][None] + noise)
    return target, RawAudioFeatures(spec.rate_hz, stages)


def gen_tracks(kind: str, l: int, seed: int, n_points: int = 8,
               spec: SyntheticSpec = SyntheticSpec()):
    """Face boxes and landmarks whose motion follows the same driver.

    Returns ``(boxes, landmarks)``: boxes ``(x0, y0, x1, y1)`` normalised,
    landmarks ``[n_points, 2]`` per frame.
    """
    _check_dims(l=l, n_points=n_points)
    d = driver_signal(kind, l, seed, spec)
    rng = np.random.default_rng([seed, 2])
    cx, cy = 0.5 + 0.02 * d, 0.45 + 0.01 * d
    half = 0.2
    boxes = [(float(x - half), float(y - half), float(x + half), float(y + half))
             for x, y in zip(cx, cy)]
    ang = np.linspace(0, 2 * math.pi, n_points, endpoint=False)
    jitter = 0.002 * rng.standard_normal((l, n_points, 2))
    landmarks = []
    for i in range(l):
        open_ = 0.05 * (1 + 0.3 * d[i])
        pts = np.stack([cx[i] + 0.08 * np.cos(ang), cy[i] + 0.1 + open_ * np.sin(ang)], axis=1)
        landmarks.append(pts + jitter[i])
    return boxes, landmarks


def reference_embedding(seed: int, width: int = 16) -> np.ndarray:
    return np.random.default_rng([seed, 3]).standard_normal(width)
