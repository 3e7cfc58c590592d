"""Seam and smoothness proxies over a denoised sequence."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionError, InputError


@dataclass
class SeamReport:
    boundaries: list
    boundary_values: list  # L2 frame difference across each boundary
    boundary_mean: float
    within_mean: float
    seam_ratio: float
    smoothness: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def frame_differences(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 2:
        raise DimensionError(f"sequence needs a frame axis plus content, got {z.shape}")
    flat = z.reshape(z.shape[0], -1)
    return np.linalg.norm(flat[1:] - flat[:-1], axis=1)


def seam_metric(z, boundaries) -> SeamReport:
    """Boundary ``b`` is the jump between frames ``b - 1`` and ``b``.

    ``seam_ratio`` is mean boundary jump over mean within-clip jump (1 when
    there are no boundaries or both are zero). ``smoothness`` is
    ``1 - mean jump / (2 * mean distance to the sequence mean)``, clamped to
    [0, 1]; the triangle inequality keeps the ratio near [0, 1] on its own.
    """
    z = np.asarray(z, dtype=np.float64)
    l = z.shape[0]
    bounds = sorted({int(b) for b in boundaries})
    for b in bounds:
        if not 0 < b < l:
            raise InputError(f"boundary {b} outside (0, {l})")
    diffs = frame_differences(z)
    at = np.zeros(diffs.shape[0], dtype=bool)
    at[[b - 1 for b in bounds]] = True
    bvals = diffs[at]
    within = diffs[~at]
    b_mean = float(bvals.mean()) if bvals.size else 0.0
    w_mean = float(within.mean()) if within.size else 0.0
    if not bounds or (b_mean == 0.0 and w_mean == 0.0):
        ratio = 1.0
    elif w_mean == 0.0:
        ratio = float("inf")
    else:
        ratio = b_mean / w_mean

    flat = z.reshape(l, -1)
    dev = float(np.linalg.norm(flat - flat.mean(axis=0), axis=1).mean())
    mean_diff = float(diffs.mean()) if diffs.size else 0.0
    smooth = 1.0 if dev == 0.0 else 1.0 - min(max(mean_diff / (2 * dev), 0.0), 1.0)
    return SeamReport(bounds, [float(v) for v in bvals], b_mean, w_mean, ratio, smooth)


def clip_boundaries(l: int, f: int) -> list:
    return list(range(f, l, f))
