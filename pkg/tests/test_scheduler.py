import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import GOLDEN
from shiftfuse.denoiser import CostCounter, LinearGaussianOracle
from shiftfuse.diffusion import GuidanceConfig, NoiseSchedule
from shiftfuse.errors import ConfigError, DimensionError, InputError
from shiftfuse.harness.experiment import ExperimentConfig, run_experiment
from shiftfuse.scheduler import (ShiftConfig, StrategyConfig, crossfade_weights, overlap_starts,
                                 plan_timestep, plan_windows, run_independent, run_motion_frames,
                                 run_overlap, run_shift, run_strategy)

from oracles import coverage_counts, overlap_windows_brute


@st.composite
def shift_configs(draw, max_l=256, max_T=6):
    f = draw(st.integers(2, 32))
    l = draw(st.integers(f + 1, max(f + 1, max_l)))
    alpha = draw(st.integers(1, f - 1))
    T = draw(st.integers(1, max_T))
    return ShiftConfig(l, f, alpha, T)


# ---- plan_windows ----------------------------------------------------------

@given(shift_configs())
def test_plan_matches_coverage_counter(cfg):
    plan = plan_windows(cfg)
    for step, (start, writes, n_windows) in zip(plan.steps, coverage_counts(cfg.l, cfg.f,
                                                                            cfg.alpha, cfg.T)):
        assert step.start == start == (step.k * cfg.alpha) % cfg.l
        assert len(step.windows) == n_windows == math.ceil(cfg.l / cfg.f)
        got = [0] * cfg.l
        for w in step.windows:
            assert len(w.indices) == cfg.f
            assert w.indices == [(w.start + j) % cfg.l for j in range(cfg.f)]
            for i, dup in zip(w.indices, w.duplicate):
                if not dup:
                    got[i] += 1
        assert got == writes == [1] * cfg.l


def test_golden_trace():
    golden = json.loads((GOLDEN / "trace_l20_f8_a3_T2.json").read_text())
    assert plan_windows(ShiftConfig(20, 8, 3, 2)).as_dict() == golden


def test_start_zero_trace():
    ws = plan_timestep(0, ShiftConfig(20, 8, 3, 2)).windows
    assert [w.indices[0] for w in ws] == [0, 8, 16]
    assert ws[2].indices == [16, 17, 18, 19, 0, 1, 2, 3]
    assert ws[2].duplicate == [False] * 4 + [True] * 4


def test_exact_tiling_has_no_wrap():
    ws = plan_timestep(0, ShiftConfig(16, 8, 5, 1)).windows
    assert len(ws) == 2 and not any(w.wraps for w in ws)
    assert not any(any(w.duplicate) for w in ws)


def test_start_positions_accumulate():
    assert [s.start for s in plan_windows(ShiftConfig(40, 8, 7, 3)).steps] == [0, 7, 14]


def test_single_timestep():
    plan = plan_windows(ShiftConfig(20, 8, 3, 1))
    assert len(plan.steps) == 1 and plan.steps[0].start == 0 and plan.steps[0].t == 1


def test_clip_one_short_of_sequence():
    for l in range(3, 30):
        cfg = ShiftConfig(l, l - 1, 1, 3)
        for step, (_, writes, n) in zip(plan_windows(cfg).steps, coverage_counts(l, l - 1, 1, 3)):
            assert len(step.windows) == n == 2
            second = step.windows[1]
            assert sum(second.duplicate) == l - 2  # all but one index already written
            assert writes == [1] * l


def test_config_validation():
    for bad in ((20, 8, 0), (20, 8, 8), (8, 8, 3), (20, 21, 3)):
        with pytest.raises(ConfigError):
            ShiftConfig(*bad)
    ShiftConfig(40, 8, 40, strict=False)
    with pytest.raises(ConfigError):
        StrategyConfig("sliding")
    with pytest.raises(ConfigError):
        StrategyConfig("overlap", o=-1)


def test_plan_json_round_trip():
    plan = plan_windows(ShiftConfig(20, 8, 3, 2))
    assert json.loads(plan.to_json()) == plan.as_dict()


# ---- strategies ------------------------------------------------------------

class Recorder:
    """Per-frame backbone that logs what each call sees. Audio frame i
    carries the value i so slices can be traced back to indices."""

    def __init__(self, T):
        self.schedule = NoiseSchedule(T)
        self.calls = []

    def predict_eps(self, x, audio, t, buckets, *, use_image=True, use_audio=True, context=None):
        self.calls.append((t, audio[:, 0, 0].astype(int).tolist(), x.copy()))
        return 0.1 * x


def _setup(l, T=3, shape=(2, 2, 1), seed=0, model_seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((l,) + shape)
    audio = rng.standard_normal((l, 3, 4))
    model = LinearGaussianOracle.from_seed(model_seed, NoiseSchedule(T), shape, 4, np.ones(3))
    return z, audio, model


def test_audio_slices_follow_latent_indices():
    T, l = 3, 20
    rec = Recorder(T)
    audio = np.broadcast_to(np.arange(l, dtype=float)[:, None, None], (l, 2, 2)).copy()
    run_shift(np.zeros((l, 1, 1, 1)), audio, ShiftConfig(l, 8, 3, T), rec, None, GuidanceConfig())
    plan = plan_windows(ShiftConfig(l, 8, 3, T))
    expected = [w.indices for s in plan.steps for w in s.windows for _ in range(3)]
    assert [c[1] for c in rec.calls] == expected


@given(st.integers(0, 10_000))
def test_shift_equals_independent_with_per_frame_backbone(seed):
    rng = np.random.default_rng(seed)
    f = int(rng.integers(2, 8))
    l = f * int(rng.integers(2, 5))
    alpha = int(rng.integers(1, f))
    T = int(rng.integers(1, 5))
    z, audio, model = _setup(l, T, seed=seed)
    g = GuidanceConfig()
    a = run_shift(z, audio, ShiftConfig(l, f, alpha, T), model, None, g)
    b = run_independent(z, audio, f, T, model, None, g)
    assert a.tobytes() == b.tobytes()


def test_degenerate_offset_equals_independent():
    z, audio, model = _setup(24, T=4)
    g = GuidanceConfig()
    a = run_shift(z, audio, ShiftConfig(24, 8, 24, 4, strict=False), model, None, g)
    assert a.tobytes() == run_independent(z, audio, 8, 4, model, None, g).tobytes()


def test_clip_equal_to_sequence():
    z, audio, model = _setup(8, T=3)
    g = GuidanceConfig()
    a = run_shift(z, audio, ShiftConfig(8, 8, 0, 3, strict=False), model, None, g)
    assert a.tobytes() == run_independent(z, audio, 8, 3, model, None, g).tobytes()


def test_constant_input_gives_identical_clips():
    rec_model = LinearGaussianOracle.from_seed(0, NoiseSchedule(4), (1, 1, 2), 3, np.ones(2))
    z = np.ones((24, 1, 1, 2))
    audio = np.ones((24, 2, 3))
    out = run_independent(z, audio, 8, 4, rec_model, None, GuidanceConfig())
    assert out[:8].tobytes() == out[8:16].tobytes() == out[16:].tobytes()


def test_independent_pads_ragged_tail():
    z, audio, model = _setup(21, T=2)
    c = CostCounter()
    out = run_independent(z, audio, 8, 2, model, None, GuidanceConfig(), counter=c)
    assert out.shape == z.shape and c.windows == 2 * 3


def test_shift_rejects_mismatched_inputs():
    z, audio, model = _setup(20)
    with pytest.raises(InputError):
        run_shift(z, audio[:19], ShiftConfig(20, 8, 3, 3), model, None, GuidanceConfig())
    with pytest.raises(InputError):
        run_shift(z, audio, ShiftConfig(24, 8, 3, 3), model, None, GuidanceConfig())
    with pytest.raises(DimensionError):
        run_shift(z[:, 0], audio, ShiftConfig(20, 8, 3, 3), model, None, GuidanceConfig())


def test_parallel_windows_match_sequential():
    z, audio, model = _setup(40, T=5)
    cfg = ShiftConfig(40, 8, 7, 5)
    c1, c4 = CostCounter(), CostCounter()
    a = run_shift(z, audio, cfg, model, None, GuidanceConfig(), counter=c1)
    b = run_shift(z, audio, cfg, model, None, GuidanceConfig(), counter=c4, workers=4)
    assert a.tobytes() == b.tobytes() and c1.as_dict() == c4.as_dict()


def test_all_strategies_consume_identical_noise():
    z, _, _ = _setup(16, T=2)
    audio = np.broadcast_to(np.arange(16.0)[:, None, None], (16, 2, 2)).copy()
    for kind in ("shift", "independent", "overlap", "motion_frames"):
        rec = Recorder(2)
        run_strategy(kind, z, audio, f=8, T=2, model=rec, buckets=None, g=GuidanceConfig(),
                     alpha=3, o=2)
        first = {}
        for t, idx, x in rec.calls:
            if t == 2:
                for j, i in enumerate(idx):
                    first.setdefault(i, x[j])
        for i, x in first.items():
            assert x.tobytes() == z[i].tobytes(), (kind, i)


# ---- overlap ---------------------------------------------------------------

@given(st.integers(2, 32).flatmap(lambda f: st.tuples(
    st.just(f), st.integers(1, f - 1), st.integers(f, 200))))
def test_overlap_windows_match_enumeration(args):
    f, o, l = args
    starts = overlap_starts(l, f, o)
    assert starts == overlap_windows_brute(l, f, o)
    assert len(starts) == math.ceil((l - o) / (f - o))
    cover = np.zeros(l)
    hits = np.zeros(l, dtype=int)
    for s, w in zip(starts, crossfade_weights(starts, f)):
        cover[s:s + f] += w
        hits[s:s + f] += 1
    assert np.all(cover > 0)
    # pairwise ramps are a partition of unity; triple overlaps rely on the
    # normalisation inside run_overlap
    np.testing.assert_allclose(cover[hits <= 2], 1.0, rtol=0, atol=1e-12)


def test_crossfade_midpoint_is_half():
    w = crossfade_weights([0, 6], 8)  # overlap of 2 frames is even, odd below
    np.testing.assert_allclose(w[0][6:] + w[1][:2], 1.0)
    w = crossfade_weights([0, 5], 8)  # 3-frame overlap, centre frame at index 6
    assert w[0][6] == 0.5 and w[1][1] == 0.5


def test_overlap_counts_shared_frames_twice():
    z, audio, model = _setup(14, T=2)
    c = CostCounter()
    run_overlap(z, audio, 8, 2, 2, model, None, GuidanceConfig(), counter=c)
    assert c.windows == 2 * 2 and c.frames_processed == 2 * 16  # 14 frames + 2 shared


def test_overlap_validation():
    with pytest.raises(ConfigError):
        overlap_starts(40, 8, 8)
    with pytest.raises(ConfigError):
        overlap_starts(40, 8, 0)


def test_overlap_equals_independent_for_per_frame_backbone():
    z, audio, model = _setup(22, T=3)
    g = GuidanceConfig()
    a = run_overlap(z, audio, 8, 3, 3, model, None, g)
    b = run_independent(z, audio, 22, 3, model, None, g)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


# ---- motion frames ---------------------------------------------------------

class ContextRecorder(Recorder):
    def predict_eps(self, x, audio, t, buckets, *, use_image=True, use_audio=True, context=None):
        self.calls.append(None if context is None else context.latents.copy())
        return 0.1 * x


def test_first_clip_context_is_zeros_then_previous_tail():
    z, audio, _ = _setup(24, T=2)
    rec = ContextRecorder(2)
    out = run_motion_frames(z, audio, 8, 3, 2, rec, None, GuidanceConfig())
    per_clip = 2 * 3
    assert all(c is not None and not c.any() for c in rec.calls[:per_clip])
    np.testing.assert_array_equal(rec.calls[per_clip], out[5:8])
    np.testing.assert_array_equal(rec.calls[2 * per_clip], out[13:16])


def test_motion_frames_zero_context_is_independent():
    z, audio, model = _setup(24, T=3)
    g = GuidanceConfig()
    a = run_motion_frames(z, audio, 8, 0, 3, model, None, g)
    assert a.tobytes() == run_independent(z, audio, 8, 3, model, None, g).tobytes()


def test_motion_frames_validation():
    z, audio, model = _setup(24)
    with pytest.raises(ConfigError):
        run_motion_frames(z, audio, 8, 8, 3, model, None, GuidanceConfig())


# ---- coupled backbones -----------------------------------------------------

def test_shift_lowers_seams_on_trained_toy_backbone():
    common = dict(backbone="toy_trained", h=8, w=8, train_steps=100, seed=0)
    shift = run_experiment(ExperimentConfig(strategy="shift", **common)).seam.seam_ratio
    indep = run_experiment(ExperimentConfig(strategy="independent", **common)).seam.seam_ratio
    assert shift < indep


def test_independent_has_visible_seams_on_coupled_oracle():
    r = run_experiment(ExperimentConfig(strategy="independent"))
    assert r.seam.seam_ratio > 1.2
