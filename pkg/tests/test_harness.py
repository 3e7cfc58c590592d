import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shiftfuse.conditioning import align_audio
from shiftfuse.errors import ConfigError, InputError, ShiftFuseError
from shiftfuse.harness import (ExperimentConfig, compare_strategies, gen_synthetic, gen_tracks,
                               run_experiment, seam_metric, sweep_alpha)
from shiftfuse.harness.metrics import clip_boundaries, frame_differences
from shiftfuse.harness.synthetic import driver_signal
from shiftfuse import tensorio


# ---- synthetic data --------------------------------------------------------

@pytest.mark.parametrize("kind", ["sinusoid", "coupled_random"])
def test_generation_is_seeded(kind):
    a, ra = gen_synthetic(kind, 30, 4, 4, 2, seed=3)
    b, rb = gen_synthetic(kind, 30, 4, 4, 2, seed=3)
    assert a.tobytes() == b.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(ra.stages, rb.stages))
    c, _ = gen_synthetic(kind, 30, 4, 4, 2, seed=4)
    assert a.tobytes() != c.tobytes()


def test_sinusoid_is_periodic():
    target, _ = gen_synthetic("sinusoid", 64, 3, 3, 2, seed=1)
    np.testing.assert_allclose(target[16:], target[:-16], rtol=0, atol=1e-12)


def test_coupled_driver_is_standardised():
    d = driver_signal("coupled_random", 500, 0)
    assert abs(d.mean()) < 1e-12 and abs(d.std() - 1) < 1e-9


def test_audio_tracks_latent_motion():
    l = 200
    target, raw = gen_synthetic("coupled_random", l, 4, 4, 2, seed=0)
    traj = target.reshape(l, -1).mean(axis=1)
    aligned = align_audio(raw, l, 25.0)
    width = raw.stages[0].shape[1]
    # stage 0 channel 0 sits at column 0 of every token; average over the window
    est = aligned[:, :, 0].mean(axis=1)
    assert width == 4
    assert np.corrcoef(traj, est)[0, 1] > 0.9


def test_token_count_follows_rates():
    _, raw = gen_synthetic("sinusoid", 40, 2, 2, 1, seed=0)
    assert raw.stages[0].shape[0] == 80 and len(raw.stages) == 5


def test_tracks_follow_driver():
    boxes, lms = gen_tracks("sinusoid", 32, seed=2)
    assert len(boxes) == len(lms) == 32
    d = driver_signal("sinusoid", 32, 2)
    cx = np.array([(b[0] + b[2]) / 2 for b in boxes])
    assert np.corrcoef(cx, d)[0, 1] > 0.999


def test_unknown_kind():
    with pytest.raises(ConfigError):
        gen_synthetic("speech", 10, 2, 2, 1, 0)
    with pytest.raises(ConfigError):
        gen_synthetic("sinusoid", 0, 2, 2, 1, 0)


# ---- seam metric -----------------------------------------------------------

def test_constant_sequence():
    r = seam_metric(np.ones((16, 2, 2)), [8])
    assert r.seam_ratio == 1.0 and r.boundary_mean == 0 and r.smoothness == 1.0


def test_linear_ramp_has_no_seam():
    z = np.arange(24.0)[:, None] * np.ones((1, 3))
    r = seam_metric(z, clip_boundaries(24, 8))
    assert r.boundaries == [8, 16]
    assert r.seam_ratio == pytest.approx(1.0, abs=1e-12)


def test_step_at_boundary():
    z = np.zeros((16, 1))
    z[8:] = 1.0
    z += 0.01 * np.arange(16)[:, None]
    r = seam_metric(z, [8])
    assert r.boundary_values == [pytest.approx(1.01)]
    assert r.seam_ratio == pytest.approx(1.01 / 0.01)


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_seam_ratio_ignores_additive_offset(seed, c):
    z = np.random.default_rng(seed).standard_normal((20, 3))
    a, b = seam_metric(z, [5, 10, 15]), seam_metric(z + c, [5, 10, 15])
    assert a.seam_ratio == pytest.approx(b.seam_ratio, rel=1e-9)
    assert 0.0 <= a.smoothness <= 1.0


def test_frame_differences_by_hand():
    z = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
    np.testing.assert_array_equal(frame_differences(z), [5.0, 0.0])


def test_bad_boundary():
    with pytest.raises(InputError):
        seam_metric(np.zeros((8, 2)), [8])
    assert seam_metric(np.arange(8.0)[:, None], []).seam_ratio == 1.0


# ---- experiments -----------------------------------------------------------

def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig(strategy="shift", seed=4)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert set(fa) == {"latents.json", "latents.bin", "seam.json", "cost.json", "cost.csv",
                       "summary.json", "results.csv"}
    assert fa == fb


def test_artifacts_are_consistent(tmp_path):
    r = run_experiment(ExperimentConfig(strategy="overlap", o=2), tmp_path)
    z, header = tensorio.load_tensor(tmp_path / "latents")
    assert z.shape == (40, 4, 4, 4) and header["experiment_id"] == "overlap-a7-s0"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seam"]["seam_ratio"] == r.seam.seam_ratio
    assert "output_dir" not in summary["config"]
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[0] == ("strategy,alpha,seed,seam_ratio,smoothness_proxy,counted_forwards,"
                       "closed_form_cost")
    assert rows[1].startswith("overlap,7,0,")


def test_compare_strategies_rows(tmp_path):
    results = compare_strategies(ExperimentConfig(T=5), output_dir=tmp_path, jobs=2)
    assert [r.row["strategy"] for r in results] == ["shift", "independent", "overlap",
                                                    "motion_frames"]
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 5
    assert set(json.loads((tmp_path / "comparison.json").read_text())) == {
        "shift-a7-s0", "independent-a7-s0", "overlap-a7-s0", "motion_frames-a7-s0"}


def test_parallel_compare_matches_serial():
    cfg = ExperimentConfig(T=4, seed=2)
    a = compare_strategies(cfg, jobs=1)
    b = compare_strategies(cfg, jobs=3)
    assert [r.latents.tobytes() for r in a] == [r.latents.tobytes() for r in b]


def test_alpha_sweep_emits_one_report_per_alpha(tmp_path):
    results = sweep_alpha(ExperimentConfig(T=5), output_dir=tmp_path)
    assert [r.row["alpha"] for r in results] == [1, 3, 5, 7, 9]
    sweep = json.loads((tmp_path / "sweep.json").read_text())
    assert [s["alpha_valid"] for s in sweep] == [True, True, True, True, False]
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == [
        "alpha1", "alpha3", "alpha5", "alpha7", "alpha9"]
    # with l divisible by f only alpha mod f matters
    assert results[0].latents.tobytes() == results[4].latents.tobytes()


def test_bucket_modes():
    r = run_experiment(ExperimentConfig(T=2, bucket_mode="fixed", buckets=(10, 20), beta=2.0))
    assert r.summary["buckets"] == {"m_t": 20, "m_e": 40, "beta": 2.0}
    r = run_experiment(ExperimentConfig(T=2, bucket_mode="predictor"))
    assert 0 <= r.summary["buckets"]["m_t"] <= 128


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(strategy="sliding")
    with pytest.raises(ConfigError):
        ExperimentConfig(backbone="svd")
    with pytest.raises(ConfigError):
        ExperimentConfig(bucket_mode="fixed")
    with pytest.raises(ConfigError):
        ExperimentConfig(audio_path=str(tmp_path / "missing"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"strategy": "shift", "colour": 1})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"strategy": "overlap", "o": 3}))
    cfg = ExperimentConfig.from_json(p, seed=9, alpha=None)
    assert (cfg.strategy, cfg.o, cfg.seed, cfg.alpha) == ("overlap", 3, 9, 7)


def test_errors_carry_experiment_id():
    with pytest.raises(ShiftFuseError) as e:
        run_experiment(ExperimentConfig(alpha=8, experiment_id="bad-alpha"))
    assert e.value.experiment_id == "bad-alpha"
    assert e.value.to_dict()["experiment_id"] == "bad-alpha"


def test_external_inputs_override_synthetic(tmp_path):
    target, raw = gen_synthetic("sinusoid", 40, 4, 4, 4, seed=11)
    raw.save(tmp_path / "audio")
    tensorio.save_tensor(tmp_path / "target", target, dtype="f64")
    cfg = ExperimentConfig(T=3, audio_path=str(tmp_path / "audio"),
                           target_path=str(tmp_path / "target"))
    base = run_experiment(ExperimentConfig(T=3))
    assert run_experiment(cfg).latents.tobytes() != base.latents.tobytes()
    tensorio.save_tensor(tmp_path / "small", target[:10], dtype="f64")
    with pytest.raises(InputError):
        run_experiment(ExperimentConfig(T=3, target_path=str(tmp_path / "small")))
