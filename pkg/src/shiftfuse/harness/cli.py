"""Command-line entry point.

Each command prints a JSON result on stdout. Failures exit with status 1
(2 for usage errors) and print ``{"error": kind, "message": ...}`` on
stderr. Output directories default to ``$SHIFTFUSE_OUTPUT_ROOT`` (or
``./runs``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .. import tensorio
from ..conditioning import save_boxes, save_landmarks
from ..costmodel import CLOSED_FORMS, CostConfig
from ..errors import ConfigError, ShiftFuseError
from ..scheduler import STRATEGIES, ShiftConfig, plan_windows
from . import experiment as ex
from .synthetic import KINDS, gen_synthetic, gen_tracks

OUTPUT_ROOT_ENV = "SHIFTFUSE_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# config overrides shared by generate / compare-strategies / sweep-alpha
_OVERRIDES = {
    "strategy": str, "l": int, "f": int, "alpha": int, "T": int, "o": int, "r_i": float,
    "r_a": float, "beta": float, "bucket_mode": str, "seed": int, "backbone": str,
    "data_kind": str, "h": int, "w": int, "c_lat": int, "precision": str, "workers": int,
    "train_steps": int, "checkpoint": str, "audio_path": str, "target_path": str,
    "boxes_path": str, "landmarks_path": str, "experiment_id": str,
}


def _add_experiment_args(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output directory (default: output root / experiment id)")
    p.add_argument("--buckets", type=_int_list, help="m_t,m_e for bucket_mode=fixed")
    for name, typ in _OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)


def _experiment_config(args) -> ex.ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k) is not None}
    if args.buckets is not None:
        overrides["buckets"] = args.buckets
    if args.config:
        return ex.ExperimentConfig.from_json(args.config, **overrides)
    return ex.ExperimentConfig.from_dict(overrides)


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else output_root() / name


def cmd_generate(args):
    cfg = _experiment_config(args)
    out = _out_dir(args, cfg.id)
    r = ex.run_experiment(cfg, out)
    _emit({"experiment_id": r.experiment_id, "output_dir": str(out), "row": r.row})


def cmd_compare(args):
    cfg = _experiment_config(args)
    out = _out_dir(args, f"compare-s{cfg.seed}")
    strategies = args.strategies.split(",") if args.strategies else STRATEGIES
    results = ex.compare_strategies(cfg, strategies, out, jobs=args.jobs)
    _emit({"output_dir": str(out), "rows": [r.row for r in results]})


def cmd_sweep(args):
    cfg = _experiment_config(args)
    out = _out_dir(args, f"sweep-alpha-s{cfg.seed}")
    results = ex.sweep_alpha(cfg, args.alphas, out, jobs=args.jobs)
    _emit({"output_dir": str(out), "rows": [r.row for r in results]})


def cmd_cost(args):
    c = CostConfig(omega=args.omega, omega_r=args.omega_r, omega_m=args.omega_m, T=args.T,
                   n=args.n, f=args.f, o=args.o)
    kinds = [args.strategy] if args.strategy else list(CLOSED_FORMS)
    _emit({k: CLOSED_FORMS[k](c) for k in kinds})


def cmd_trace(args):
    plan = plan_windows(ShiftConfig(args.l, args.f, args.alpha, args.T, strict=not args.loose))
    text = plan.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_gradcheck(args):
    from .gradcheck import toy_gradcheck

    t0 = time.perf_counter()
    err, n = toy_gradcheck(frames=args.frames, h=args.h, w=args.w, seed=args.seed, eps=args.eps,
                           hidden=args.hidden)
    _emit({"max_rel_error": float(err), "n_params": int(n), "eps": args.eps,
           "seconds": round(time.perf_counter() - t0, 3), "pass": bool(err < 1e-4)})


def cmd_train(args):
    cfg = _experiment_config(args)
    out = _out_dir(args, f"toy-s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    from ..denoiser import DenoiserParams, DropoutRates, train_toy
    from ..denoiser.training import TrainingSample
    from ..diffusion import NoiseSchedule

    inp = ex.build_inputs(cfg)
    buckets = ex.resolve_buckets(cfg, inp)
    params = DenoiserParams.init(ex.toy_config(cfg, inp.audio.shape[2]), cfg.seed)
    audio = inp.audio.astype(np.float64)
    data = [TrainingSample(inp.target[s:s + cfg.f], audio[s:s + cfg.f], inp.r_img, inp.mask,
                           buckets) for s in range(0, cfg.l - cfg.f + 1, cfg.f)]
    params, trace = train_toy(params, data, DropoutRates(), cfg.train_steps, cfg.seed,
                              NoiseSchedule(cfg.T), trace_path=out / "loss.csv")
    params.save(out / "checkpoint")
    _emit({"checkpoint": str(out / "checkpoint.json"), "steps": len(trace),
           "final_loss": trace[-1][1] if trace else None})


def cmd_gen_data(args):
    out = _out_dir(args, f"data-{args.kind}-s{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    target, raw = gen_synthetic(args.kind, args.l, args.h, args.w, args.c_lat, args.seed)
    boxes, landmarks = gen_tracks(args.kind, args.l, args.seed)
    tensorio.save_tensor(out / "target", target, dtype="f64", kind=args.kind, seed=args.seed)
    raw.save(out / "audio")
    save_boxes(out / "boxes.json", boxes)
    save_landmarks(out / "landmarks.json", landmarks)
    _emit({"output_dir": str(out), "files": ["target.json", "audio.json", "boxes.json",
                                             "landmarks.json"]})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run one experiment")
    _add_experiment_args(g)
    g.set_defaults(fn=cmd_generate)

    c = sub.add_parser("compare-strategies", help="run every strategy on the same inputs")
    _add_experiment_args(c)
    c.add_argument("--strategies", help="comma-separated subset of " + ",".join(STRATEGIES))
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(fn=cmd_compare)

    s = sub.add_parser("sweep-alpha", help="shift fusion over several offsets")
    _add_experiment_args(s)
    s.add_argument("--alphas", type=_int_list, default=list(ex.SWEEP_ALPHAS))
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)

    k = sub.add_parser("cost", help="closed-form FLOPs of each strategy")
    k.add_argument("--strategy", choices=list(CLOSED_FORMS))
    for name, typ, default in (("omega", float, 1.0), ("omega-r", float, 0.0),
                               ("omega-m", float, 0.0), ("T", int, 25), ("n", int, 1),
                               ("f", int, 8), ("o", int, 0)):
        k.add_argument("--" + name, type=typ, default=default)
    k.set_defaults(fn=cmd_cost)

    t = sub.add_parser("trace-windows", help="dump the per-timestep window plan")
    t.add_argument("--l", type=int, required=True)
    t.add_argument("--f", type=int, required=True)
    t.add_argument("--alpha", type=int, default=7)
    t.add_argument("--T", type=int, default=25)
    t.add_argument("--loose", action="store_true", help="allow alpha outside (0, f)")
    t.add_argument("--out")
    t.set_defaults(fn=cmd_trace)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the toy denoiser")
    gc.add_argument("--frames", type=int, default=4)
    gc.add_argument("--h", type=int, default=8)
    gc.add_argument("--w", type=int, default=8)
    gc.add_argument("--hidden", type=int, default=8)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--eps", type=float, default=1e-3)
    gc.set_defaults(fn=cmd_gradcheck)

    tr = sub.add_parser("train-toy", help="train the toy denoiser on synthetic clips")
    _add_experiment_args(tr)
    tr.set_defaults(fn=cmd_train)

    d = sub.add_parser("gen-data", help="write synthetic latents, audio and face tracks")
    d.add_argument("--kind", choices=KINDS, default="coupled_random")
    d.add_argument("--l", type=int, default=40)
    d.add_argument("--h", type=int, default=4)
    d.add_argument("--w", type=int, default=4)
    d.add_argument("--c-lat", dest="c_lat", type=int, default=4)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(fn=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        args.fn(args)
    except ShiftFuseError as e:
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        return 1
    except (OSError, json.JSONDecodeError, TypeError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)},
                                    sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
