import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shiftfuse.costmodel import (CostConfig, cost_independent, cost_motion_frames, cost_overlap,
                                 cost_shift, overlap_window_count, reconcile)
from shiftfuse.denoiser import CostCounter, LinearGaussianOracle
from shiftfuse.diffusion import GuidanceConfig, NoiseSchedule
from shiftfuse.errors import ConfigError, ReconciliationError
from shiftfuse.scheduler import run_strategy

from oracles import overlap_windows_brute


# units are zero or macroscopic so strict inequalities are not lost to rounding
units = st.one_of(st.just(0.0), st.floats(1e-3, 100))


@st.composite
def cost_configs(draw):
    f = draw(st.integers(2, 64))
    return CostConfig(omega=draw(units), omega_r=draw(units), omega_m=draw(units),
                      T=draw(st.integers(0, 100)), n=draw(st.integers(0, 50)), f=f,
                      o=draw(st.integers(0, f - 1)))


def test_worked_examples():
    c = CostConfig(omega=10, omega_r=2, omega_m=1, T=25, n=6, f=16, o=8)
    assert cost_shift(c) == 1500
    assert cost_overlap(c) == 1625
    assert cost_motion_frames(c) == 1783.5
    assert cost_shift(CostConfig(omega=10, T=25, n=0)) == 0


@given(cost_configs())
def test_zero_overlap_reduces_to_shift(c):
    z = CostConfig(c.omega, c.omega_r, c.omega_m, c.T, c.n, c.f, 0)
    assert cost_overlap(z) == cost_shift(z) == cost_independent(z)
    assert cost_motion_frames(z) == cost_shift(z)


@given(cost_configs())
def test_overheads_are_nonnegative(c):
    assert cost_shift(c) <= cost_overlap(c)
    assert cost_shift(c) <= cost_motion_frames(c)
    if c.o > 0 and c.omega > 0 and c.T > 0:
        assert cost_overlap(c) > cost_shift(c)
    if c.o > 0 and c.n > 0 and c.omega_r > 0 and c.omega_m > 0:
        assert cost_motion_frames(c) > cost_shift(c)


@given(cost_configs())
def test_linear_in_omega_and_T(c):
    for fn in (cost_shift, cost_overlap):
        assert fn(CostConfig(2 * c.omega, c.omega_r, c.omega_m, c.T, c.n, c.f, c.o)) == \
            pytest.approx(2 * fn(c), rel=1e-12, abs=1e-12)
    for fn in (cost_shift, cost_overlap, cost_motion_frames):
        assert fn(CostConfig(c.omega, c.omega_r, c.omega_m, 2 * c.T, c.n, c.f, c.o)) - fn(c) == \
            pytest.approx(fn(c) - fn(CostConfig(c.omega, c.omega_r, c.omega_m, 0, c.n, c.f, c.o)),
                          rel=1e-9, abs=1e-9)


def test_all_units_scale_motion_frames_linearly():
    c = CostConfig(omega=3, omega_r=1.5, omega_m=0.7, T=9, n=4, f=16, o=5)
    d = CostConfig(omega=6, omega_r=3, omega_m=1.4, T=9, n=4, f=16, o=5)
    assert cost_motion_frames(d) == pytest.approx(2 * cost_motion_frames(c), rel=1e-12)


def test_table4_ordering_region():
    for n in (1, 2):
        c = CostConfig(omega=1.0, omega_r=0.3, omega_m=0.1, T=25, n=n, f=16, o=8)
        assert cost_shift(c) < cost_motion_frames(c) < cost_overlap(c)
    # beyond n=2 the reference-net term outgrows the overlap surcharge
    c = CostConfig(omega=1.0, omega_r=0.3, omega_m=0.1, T=25, n=3, f=16, o=8)
    assert cost_motion_frames(c) > cost_overlap(c)


def test_invalid_configs():
    for kw in (dict(omega=-1), dict(T=-1), dict(f=0), dict(o=8, f=8), dict(n=-2)):
        with pytest.raises(ConfigError):
            CostConfig(**kw)


# ---- reconciliation --------------------------------------------------------

def _tally(kind, l, f, T, alpha=3, o=0, seed=0):
    rng = np.random.default_rng(seed)
    shape = (1, 1, 1)
    z = rng.standard_normal((l,) + shape)
    audio = rng.standard_normal((l, 2, 2))
    model = LinearGaussianOracle.from_seed(seed, NoiseSchedule(T), shape, 2, np.ones(2))
    c = CostCounter()
    run_strategy(kind, z, audio, f=f, T=T, model=model, buckets=None, g=GuidanceConfig(),
                 alpha=alpha, o=o, counter=c)
    return c.as_dict()


def test_independent_example():
    tallies = _tally("independent", 48, 8, 4)
    assert tallies["windows"] == 24 and tallies["model_evals"] == 72
    r = reconcile("independent", tallies, CostConfig(T=4, n=6, f=8))
    assert r.counted == r.closed_form == 24


def test_overlap_example_against_enumeration():
    l, f, o, T = 96, 16, 8, 2
    starts = overlap_windows_brute(l, f, o)
    assert len(starts) == overlap_window_count(l, f, o) == 11
    tallies = _tally("overlap", l, f, T, o=o)
    assert tallies["windows"] == T * len(starts)
    assert tallies["frames_processed"] == T * len(starts) * f
    r = reconcile("overlap", tallies, CostConfig(T=T, n=6, f=f, o=o), l=l)
    assert r.closed_form == 13.0 and r.counted == 22.0
    assert r.terms["eq_gap"] == 9.0
    assert r.terms["overlap_frames_per_step"] == len(starts) * f - l == 80
    assert r.notes


def test_overlap_two_windows_match_closed_form_exactly():
    tallies = _tally("overlap", 24, 16, 3, o=8)
    r = reconcile("overlap", tallies, CostConfig(T=3, n=1, f=16, o=8), l=24)
    assert r.terms["windows_per_step"] == 2
    # n = 24/16 is fractional here; the closed form is evaluated with n = 1.5
    assert 3 * (1.5 + 8 / 16) == r.counted
    assert r.terms["overlap_frames_per_step"] == 8


def test_shift_reports_wrap_overhead_separately():
    tallies = _tally("shift", 20, 8, 3, alpha=3)
    r = reconcile("shift", tallies, CostConfig(T=3, n=3, f=8), l=20)
    assert r.terms["counted_with_wrap"] == 9 and r.terms["wrap_overhead_windows"] == 0
    assert r.notes
    tallies = _tally("shift", 24, 8, 3, alpha=3)
    r = reconcile("shift", tallies, CostConfig(T=3, n=3, f=8))
    assert r.counted == r.closed_form == 9 and not r.notes


def test_motion_frames_reconciles():
    tallies = _tally("motion_frames", 48, 16, 4, o=8)
    c = CostConfig(omega=1, omega_r=0.3, omega_m=0.1, T=4, n=3, f=16, o=8)
    r = reconcile("motion_frames", tallies, c)
    assert r.counted == pytest.approx(r.closed_form, rel=1e-9)
    assert r.terms["reference_net"] == pytest.approx(0.3 * 24)


def test_mismatch_names_the_term():
    tallies = _tally("independent", 48, 8, 4)
    tallies["windows"] += 1
    with pytest.raises(ReconciliationError) as e:
        reconcile("independent", tallies, CostConfig(T=4, n=6, f=8))
    assert e.value.term == "forward_passes"
    tallies = _tally("motion_frames", 32, 8, 2, o=2)
    tallies["context_frames"] -= 1
    with pytest.raises(ReconciliationError, match="context_frames"):
        reconcile("motion_frames", tallies, CostConfig(T=2, n=4, f=8, o=2))


def test_unknown_strategy():
    with pytest.raises(ConfigError):
        reconcile("sliding", _tally("shift", 16, 8, 1), CostConfig(T=1, n=2, f=8))


def test_random_configs_reconcile():
    rng = np.random.default_rng(2024)
    kinds = ("shift", "independent", "overlap", "motion_frames")
    for i in range(100):
        kind = kinds[i % 4]
        f = int(rng.integers(2, 9))
        n = int(rng.integers(2, 5))
        T = int(rng.integers(1, 4))
        o = int(rng.integers(1, f)) if kind in ("overlap", "motion_frames") else 0
        alpha = int(rng.integers(1, f))
        c = CostConfig(omega=float(rng.uniform(0.5, 2)), omega_r=float(rng.uniform(0, 1)),
                       omega_m=float(rng.uniform(0, 1)), T=T, n=n, f=f, o=o)
        r = reconcile(kind, _tally(kind, n * f, f, T, alpha=alpha, o=o, seed=i), c)
        if kind == "overlap":
            assert r.counted == c.omega * (T * overlap_window_count(n * f, f, o))
        elif kind == "motion_frames":
            assert r.counted == pytest.approx(r.closed_form, rel=1e-9)
        else:
            assert r.counted == r.closed_form


def test_report_serialization():
    r = reconcile("independent", _tally("independent", 16, 8, 2), CostConfig(T=2, n=2, f=8))
    d = json.loads(r.to_json())
    assert d["strategy"] == "independent" and d["counted"] == 4
    lines = r.to_csv().splitlines()
    assert lines[0] == "strategy,term,value" and "independent,counted,4" in lines[2]
