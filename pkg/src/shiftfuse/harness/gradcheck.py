"""Finite-difference check of the full toy denoiser loss."""
from __future__ import annotations

import numpy as np

from ..denoiser.toy import DenoiserParams, ToyConfig, denoising_loss
from ..diffusion import NoiseSchedule
from ..motion import MotionBuckets
from ..numerics import grad_check


def toy_gradcheck(frames=4, h=8, w=8, seed=0, eps=1e-3, hidden=8, t=7, indices=None):
    """Returns ``(max relative error, parameter count)`` over every
    parameter of a random 64-bit instance."""
    cfg = ToyConfig(h=h, w=w, f=frames, hidden=hidden)
    params = DenoiserParams.init(cfg, seed, np.float64)
    rng = np.random.default_rng([seed, 7])
    x0 = rng.standard_normal((frames, h, w, cfg.c_lat))
    noise = rng.standard_normal(x0.shape)
    audio = rng.standard_normal((frames, 10, cfg.audio_width))
    r_img = rng.standard_normal(cfg.ref_width)
    mask = np.zeros((h, w))
    mask[h // 4:h - h // 4, 1:w - 1] = 1.0
    buckets = MotionBuckets(10, 20)
    schedule = NoiseSchedule(25)
    names = params.names()

    def with_grad(flat):
        loss, g = denoising_loss(params.unflatten(flat), x0, noise, audio, t, buckets, r_img,
                                 mask, schedule)
        return loss, np.concatenate([g[k].reshape(-1) for k in names])

    def loss_only(flat):
        return denoising_loss(params.unflatten(flat), x0, noise, audio, t, buckets, r_img, mask,
                              schedule, with_grad=False)[0]

    flat = params.flatten()
    return grad_check(with_grad, flat, eps, indices=indices, loss_fn=loss_only), flat.size
