"""Analytic denoisers with closed-form noise predictions.

Both oracles model the clean latent as ``x0 = m + r``: a condition-driven
mean ``m`` (reference image term plus a linear readout of the frame's audio
tokens) and a zero-mean Gaussian residual ``r``. They differ only in the
residual prior:

* :class:`LinearGaussianOracle` - every element independent, variance
  ``sigma**2``. Frames never interact, so any partition of the sequence
  into clips gives the same result.
* :class:`GaussianProcessOracle` - squared-exponential covariance over
  window positions, so frames inside one window are coupled.

The noise prediction is the exact posterior-mean one,
``eps = (x_t - sqrt(a) E[x0 | x_t]) / sqrt(1 - a)``.
"""
from __future__ import annotations

import math

import numpy as np

from ..diffusion import NoiseSchedule
from ..errors import DimensionError
from ..motion import BUCKET_MAX, MotionBuckets


def bucket_gain(buckets) -> float:
    """Residual amplitude multiplier in [0.5, 1.5] driven by the motion buckets."""
    if buckets is None:
        return 1.0
    if not isinstance(buckets, MotionBuckets):
        buckets = MotionBuckets(*buckets)
    return 0.5 + (buckets.m_t + buckets.m_e) / (2.0 * BUCKET_MAX)


class _OracleBase:
    def __init__(self, schedule: NoiseSchedule, frame_shape, audio_readout, image_term,
                 sigma: float = 1.0, clip_len: int = 8):
        self.schedule = schedule
        self.frame_shape = tuple(frame_shape)
        self.audio_readout = np.asarray(audio_readout, dtype=np.float64)
        self.image_term = np.asarray(image_term, dtype=np.float64).reshape(-1)
        self.sigma = sigma
        self.clip_len = clip_len
        n = int(np.prod(self.frame_shape))
        if self.audio_readout.shape[1] != n or self.image_term.shape[0] != n:
            raise DimensionError(f"readouts must map to {n} latent elements per frame")

    @classmethod
    def from_seed(cls, seed: int, schedule: NoiseSchedule, frame_shape, audio_width: int,
                  r_img, audio_gain: float = 0.25, **kw):
        rng = np.random.default_rng(seed)
        n = int(np.prod(frame_shape))
        readout = rng.standard_normal((audio_width, n)) * (audio_gain / math.sqrt(audio_width))
        r_img = np.asarray(r_img, dtype=np.float64).reshape(-1)
        img_map = rng.standard_normal((r_img.shape[0], n)) / math.sqrt(r_img.shape[0])
        return cls(schedule, frame_shape, readout, r_img @ img_map * 0.5, **kw)

    def mean(self, audio, use_image: bool, use_audio: bool) -> np.ndarray:
        """Per-frame prior mean [f, n]; each row depends on its own frame only."""
        f = audio.shape[0]
        n = self.image_term.shape[0]
        m = np.zeros((f, n), dtype=np.float64)
        for i in range(f):
            if use_audio:
                m[i] = np.asarray(audio[i], dtype=np.float64).mean(axis=0) @ self.audio_readout
            if use_image:
                m[i] = m[i] + self.image_term
        return m

    def _flatten(self, x):
        f = x.shape[0]
        if x.shape[1:] != self.frame_shape:
            raise DimensionError(f"frame shape {x.shape[1:]} != oracle frame shape {self.frame_shape}")
        return np.asarray(x, dtype=np.float64).reshape(f, -1)

    def _eps_from_x0(self, x, x0_hat, t):
        a = self.schedule.alpha_bar[t]
        eps = (x - math.sqrt(a) * x0_hat) / math.sqrt(1 - a)
        return eps


class LinearGaussianOracle(_OracleBase):
    """Per-element ``x0 ~ N(m, s**2)``; ignores motion context."""

    def predict_eps(self, x, audio, t, buckets=None, *, use_image=True, use_audio=True,
                    context=None):
        xf = self._flatten(x)
        m = self.mean(audio, use_image, use_audio)
        s2 = (self.sigma * bucket_gain(buckets)) ** 2
        a = self.schedule.alpha_bar[t]
        gain = s2 * math.sqrt(a) / (a * s2 + 1 - a)
        x0_hat = m + gain * (xf - math.sqrt(a) * m)
        return self._eps_from_x0(xf, x0_hat, t).reshape(x.shape).astype(x.dtype)

    def posterior_gain(self, t, buckets=None) -> float:
        s2 = (self.sigma * bucket_gain(buckets)) ** 2
        a = self.schedule.alpha_bar[t]
        return s2 * math.sqrt(a) / (a * s2 + 1 - a)


def se_kernel(n: int, length: float, sigma: float) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    return sigma ** 2 * np.exp(-0.5 * ((i[:, None] - i[None, :]) / length) ** 2)


class GaussianProcessOracle(_OracleBase):
    """Residual ``r ~ GP(0, k)`` over window positions with an SE kernel.

    Motion context frames sit at positions ``-o..-1`` ahead of the window and
    are treated as observations at the current noise level, the way frames
    concatenated into the window would be seen.
    """

    def __init__(self, *args, length: float = 3.0, jitter: float = 1e-9, **kw):
        super().__init__(*args, **kw)
        self.length = length
        self.jitter = jitter

    def predict_eps(self, x, audio, t, buckets=None, *, use_image=True, use_audio=True,
                    context=None):
        xf = self._flatten(x)
        f = xf.shape[0]
        a = self.schedule.alpha_bar[t]
        sigma = self.sigma * bucket_gain(buckets)
        m = self.mean(audio, use_image, use_audio)
        y = (xf - math.sqrt(a) * m) / math.sqrt(a)  # residual + noise of variance v
        v = (1 - a) / a
        if context is not None and context.length > 0:
            o = context.length
            m_ctx = self.mean(context.audio, use_image, use_audio)
            y_ctx = self._flatten(context.latents) - m_ctx
            y = np.concatenate([y_ctx, y])
            K = se_kernel(o + f, self.length, sigma)
            rows = slice(o, o + f)
        else:
            K = se_kernel(f, self.length, sigma)
            rows = slice(0, f)
        S = K + (v + self.jitter) * np.eye(K.shape[0])
        r_hat = K[rows] @ np.linalg.solve(S, y)
        x0_hat = m + r_hat
        return self._eps_from_x0(xf, x0_hat, t).reshape(x.shape).astype(x.dtype)
