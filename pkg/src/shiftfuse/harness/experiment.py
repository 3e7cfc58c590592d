"""Experiment orchestration: build inputs and backbone from a config, run
one strategy, write latents, seam and cost reports.

Every artifact is a pure function of the config: JSON is written with
sorted keys, floats with ``repr`` and nothing records wall-clock time.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .. import tensorio
from ..conditioning import (RawAudioFeatures, align_audio, build_face_mask, load_boxes,
                            load_landmarks, pool_temporal)
from ..costmodel import CostConfig, reconcile
from ..denoiser import (CostCounter, DenoiserParams, DropoutRates, GaussianProcessOracle,
                        LinearGaussianOracle, ToyConfig, ToyDenoiser, train_toy)
from ..denoiser.training import TrainingSample
from ..diffusion import GuidanceConfig, NoiseSchedule
from ..errors import ConfigError, InputError, NumericalError, ShiftFuseError
from ..motion import (BucketPredictor, MotionBuckets, bucket_from_boxes, bucket_from_landmarks,
                      predict_buckets, scale_buckets)
from ..numerics import resolve_dtype
from ..scheduler import STRATEGIES, run_strategy
from .metrics import SeamReport, clip_boundaries, seam_metric
from .synthetic import KINDS, gen_synthetic, gen_tracks, reference_embedding

log = logging.getLogger(__name__)

BACKBONES = ("oracle_independent", "oracle_coupled", "toy_trained")
BUCKET_MODES = ("tracks", "fixed", "predictor")
CSV_COLUMNS = ("strategy", "alpha", "seed", "seam_ratio", "smoothness_proxy",
               "counted_forwards", "closed_form_cost")
SWEEP_ALPHAS = (1, 3, 5, 7, 9)


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str = "shift"
    l: int = 40
    f: int = 8
    alpha: int = 7
    T: int = 25
    o: int = 2  # overlap / motion-frame count
    r_i: float = 2.0
    r_a: float = 7.5
    beta: float = 1.0
    bucket_mode: str = "tracks"
    buckets: Optional[tuple] = None  # (m_t, m_e) for bucket_mode="fixed"
    seed: int = 0
    backbone: str = "oracle_coupled"
    data_kind: str = "coupled_random"
    h: int = 4
    w: int = 4
    c_lat: int = 4
    fps: float = 25.0
    window_sec: float = 0.2
    precision: str = "f32"
    workers: int = 1
    strict: bool = True
    omega: float = 1.0
    omega_r: float = 0.3
    omega_m: float = 0.1
    toy_hidden: int = 8
    train_steps: int = 100
    checkpoint: Optional[str] = None
    audio_path: Optional[str] = None
    target_path: Optional[str] = None
    boxes_path: Optional[str] = None
    landmarks_path: Optional[str] = None
    output_dir: Optional[str] = None
    experiment_id: Optional[str] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.bucket_mode not in BUCKET_MODES:
            raise ConfigError(f"unknown bucket_mode {self.bucket_mode!r}")
        if self.bucket_mode == "fixed" and self.buckets is None:
            raise ConfigError("bucket_mode 'fixed' needs buckets=[m_t, m_e]")
        if self.data_kind not in KINDS:
            raise ConfigError(f"unknown data_kind {self.data_kind!r}; expected one of {KINDS}")
        resolve_dtype(self.precision)
        for name in ("audio_path", "target_path", "boxes_path", "landmarks_path", "checkpoint"):
            p = getattr(self, name)
            if p is not None and not _exists(p):
                raise ConfigError(f"{name} {p!r} does not exist")

    @property
    def id(self) -> str:
        return self.experiment_id or f"{self.strategy}-a{self.alpha}-s{self.seed}"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        d = dict(d)
        if d.get("buckets") is not None:
            d["buckets"] = tuple(d["buckets"])
        return cls(**d)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["buckets"] is not None:
            d["buckets"] = list(d["buckets"])
        return d


def _exists(p) -> bool:
    p = Path(p)
    return p.exists() or p.with_suffix(".json").exists()


@dataclass
class ExperimentResult:
    experiment_id: str
    latents: np.ndarray
    seam: SeamReport
    cost: object
    summary: dict
    output_dir: Optional[Path] = None
    row: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------

@dataclass
class Inputs:
    target: np.ndarray
    raw_audio: RawAudioFeatures
    audio: np.ndarray  # aligned [l, d, width]
    boxes: list
    landmarks: list
    r_img: np.ndarray
    mask: np.ndarray


def build_inputs(cfg: ExperimentConfig) -> Inputs:
    target, raw = gen_synthetic(cfg.data_kind, cfg.l, cfg.h, cfg.w, cfg.c_lat, cfg.seed)
    boxes, landmarks = gen_tracks(cfg.data_kind, cfg.l, cfg.seed)
    if cfg.audio_path:
        raw = RawAudioFeatures.load(cfg.audio_path)
    if cfg.target_path:
        target, _ = tensorio.load_tensor(cfg.target_path)
        if target.shape != (cfg.l, cfg.h, cfg.w, cfg.c_lat):
            raise InputError(f"target shape {target.shape} does not match the configured "
                             f"{(cfg.l, cfg.h, cfg.w, cfg.c_lat)}")
    if cfg.boxes_path:
        boxes = load_boxes(cfg.boxes_path)
    if cfg.landmarks_path:
        landmarks = load_landmarks(cfg.landmarks_path)
    dtype = resolve_dtype(cfg.precision)
    audio = align_audio(raw, cfg.l, cfg.fps, cfg.window_sec).astype(dtype)
    mask = build_face_mask(boxes, cfg.h, cfg.w)
    return Inputs(target, raw, audio, boxes, landmarks, reference_embedding(cfg.seed), mask)


def resolve_buckets(cfg: ExperimentConfig, inp: Inputs) -> MotionBuckets:
    if cfg.bucket_mode == "fixed":
        return scale_buckets(cfg.buckets, cfg.beta)
    if cfg.bucket_mode == "tracks":
        return scale_buckets((bucket_from_boxes(inp.boxes), bucket_from_landmarks(inp.landmarks)),
                             cfg.beta)
    rng = np.random.default_rng([cfg.seed, 4])
    c_ta = pool_temporal(inp.audio.astype(np.float64))
    p = BucketPredictor.random(rng, c_ta.shape[1], inp.r_img.shape[0])
    return predict_buckets(c_ta, inp.r_img, p, cfg.beta)


def toy_config(cfg: ExperimentConfig, audio_width: int) -> ToyConfig:
    return ToyConfig(h=cfg.h, w=cfg.w, c_lat=cfg.c_lat, f=cfg.f, hidden=cfg.toy_hidden,
                     audio_width=audio_width)


def quick_train(cfg: ExperimentConfig, inp: Inputs, buckets, schedule) -> DenoiserParams:
    """Short seeded training run on the experiment's own clips."""
    tc = toy_config(cfg, inp.audio.shape[2])
    params = DenoiserParams.init(tc, cfg.seed)
    audio = inp.audio.astype(np.float64)
    data = [TrainingSample(inp.target[s:s + cfg.f], audio[s:s + cfg.f], inp.r_img, inp.mask,
                           buckets)
            for s in range(0, cfg.l - cfg.f + 1, cfg.f)]
    params, _ = train_toy(params, data, DropoutRates(), cfg.train_steps, cfg.seed, schedule)
    return params


def build_backbone(cfg: ExperimentConfig, inp: Inputs, buckets, schedule):
    frame_shape = (cfg.h, cfg.w, cfg.c_lat)
    width = inp.audio.shape[2]
    if cfg.backbone == "oracle_independent":
        return LinearGaussianOracle.from_seed(cfg.seed, schedule, frame_shape, width, inp.r_img,
                                              clip_len=cfg.f)
    if cfg.backbone == "oracle_coupled":
        return GaussianProcessOracle.from_seed(cfg.seed, schedule, frame_shape, width, inp.r_img,
                                               clip_len=cfg.f)
    if cfg.checkpoint:
        params = DenoiserParams.load(cfg.checkpoint)
        tc = params.config
        if (tc.h, tc.w, tc.c_lat, tc.f) != (cfg.h, cfg.w, cfg.c_lat, cfg.f):
            raise ConfigError(f"checkpoint was built for {(tc.h, tc.w, tc.c_lat, tc.f)}, "
                              f"experiment needs {(cfg.h, cfg.w, cfg.c_lat, cfg.f)}")
    else:
        params = quick_train(cfg, inp, buckets, schedule)
    return ToyDenoiser(params, inp.r_img, inp.mask, dtype=resolve_dtype(cfg.precision))


def initial_noise(cfg: ExperimentConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 5])
    z = rng.standard_normal((cfg.l, cfg.h, cfg.w, cfg.c_lat))
    return z.astype(resolve_dtype(cfg.precision))


def cost_config(cfg: ExperimentConfig) -> CostConfig:
    o = cfg.o if cfg.strategy in ("overlap", "motion_frames") else 0
    return CostConfig(omega=cfg.omega, omega_r=cfg.omega_r, omega_m=cfg.omega_m, T=cfg.T,
                      n=math.ceil(cfg.l / cfg.f), f=cfg.f, o=o)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> ExperimentResult:
    """Run one strategy end to end; artifacts go to ``output_dir`` (or
    ``cfg.output_dir``) when one is given."""
    try:
        return _run(cfg, output_dir)
    except ShiftFuseError as e:
        e.experiment_id = cfg.id
        raise


def _run(cfg: ExperimentConfig, output_dir) -> ExperimentResult:
    schedule = NoiseSchedule(cfg.T)
    inp = build_inputs(cfg)
    buckets = resolve_buckets(cfg, inp)
    model = build_backbone(cfg, inp, buckets, schedule)
    g = GuidanceConfig(cfg.r_i, cfg.r_a)
    counter = CostCounter()
    z = run_strategy(cfg.strategy, initial_noise(cfg), inp.audio, f=cfg.f, T=cfg.T, model=model,
                     buckets=buckets, g=g, alpha=cfg.alpha, o=cfg.o, schedule=schedule,
                     counter=counter, workers=cfg.workers, strict=cfg.strict)
    bad = np.flatnonzero(~np.isfinite(z.reshape(z.shape[0], -1)).all(axis=1))
    if bad.size:
        raise NumericalError(f"denoised latents are non-finite from frame {bad[0]}",
                             index=int(bad[0]))
    seam = seam_metric(z, clip_boundaries(cfg.l, cfg.f))
    cost = reconcile(cfg.strategy, counter.as_dict(), cost_config(cfg), l=cfg.l)
    row = {"strategy": cfg.strategy, "alpha": cfg.alpha, "seed": cfg.seed,
           "seam_ratio": seam.seam_ratio, "smoothness_proxy": seam.smoothness,
           "counted_forwards": counter.windows, "closed_form_cost": cost.closed_form}
    config = cfg.as_dict()
    config.pop("output_dir")
    summary = {"experiment_id": cfg.id, "config": config,
               "buckets": {"m_t": buckets.m_t, "m_e": buckets.m_e, "beta": buckets.beta},
               "alpha_valid": 0 < cfg.alpha < cfg.f < cfg.l,
               "seam": seam.as_dict(), "cost": cost.as_dict(), "tallies": counter.as_dict()}
    out = output_dir if output_dir is not None else cfg.output_dir
    result = ExperimentResult(cfg.id, z, seam, cost, summary, None, row)
    if out is not None:
        result.output_dir = write_artifacts(Path(out), cfg, result)
    return result


def write_artifacts(out: Path, cfg: ExperimentConfig, result: ExperimentResult) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    tensorio.save_tensor(out / "latents", result.latents, dtype=cfg.precision,
                         experiment_id=cfg.id)
    (out / "seam.json").write_text(_dump(result.seam.as_dict()))
    (out / "cost.json").write_text(_dump(result.cost.as_dict()))
    (out / "cost.csv").write_text(result.cost.to_csv())
    (out / "summary.json").write_text(_dump(result.summary))
    (out / "results.csv").write_text(csv_text([result.row]))
    return out


def _run_many(cfgs, out_dirs, jobs):
    def one(pair):
        c, d = pair
        return run_experiment(c, d)

    pairs = list(zip(cfgs, out_dirs))
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def compare_strategies(cfg: ExperimentConfig, strategies=STRATEGIES, output_dir=None,
                       jobs: int = 1) -> list:
    """Same inputs and seed under each strategy; one CSV row per strategy."""
    cfgs = [replace(cfg, strategy=s, experiment_id=None, output_dir=None) for s in strategies]
    root = Path(output_dir) if output_dir is not None else None
    dirs = [None if root is None else root / c.strategy for c in cfgs]
    results = _run_many(cfgs, dirs, jobs)
    if root is not None:
        (root / "results.csv").write_text(csv_text([r.row for r in results]))
        (root / "comparison.json").write_text(_dump({r.experiment_id: r.summary for r in results}))
    return results


def sweep_alpha(cfg: ExperimentConfig, alphas=SWEEP_ALPHAS, output_dir=None,
                jobs: int = 1) -> list:
    """Shift fusion at each offset. Offsets outside ``0 < alpha < f`` still
    run (non-strict) and are flagged ``alpha_valid: false`` in the summary."""
    cfgs = [replace(cfg, strategy="shift", alpha=a, strict=0 < a < cfg.f < cfg.l,
                    experiment_id=None, output_dir=None) for a in alphas]
    root = Path(output_dir) if output_dir is not None else None
    dirs = [None if root is None else root / f"alpha{c.alpha}" for c in cfgs]
    results = _run_many(cfgs, dirs, jobs)
    if root is not None:
        (root / "results.csv").write_text(csv_text([r.row for r in results]))
        (root / "sweep.json").write_text(_dump(
            [{"alpha": r.row["alpha"], "alpha_valid": r.summary["alpha_valid"],
              "seam": r.seam.as_dict()} for r in results]))
    return results
