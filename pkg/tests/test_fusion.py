import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdm import denoiser as dn
from bdm import fusion as fu
from bdm import sampler as sp
from bdm.schedule import build_linear_schedule

SCHED = build_linear_schedule(1e-4, 0.08, 100)


def nets(seed=0):
    rng = np.random.default_rng(seed)
    prior = dn.init_params(2, 100, rng, sched=SCHED)
    recon = dn.init_params(2, 100, rng, cond_dim=20, sched=SCHED)
    return prior, recon


COND = np.random.default_rng(99).random((3, 20))


def test_default_schedule_t1000():
    fs = fu.FusionSchedule(1000)
    assert (fs.interval, fs.duration) == (32, 16)
    assert fs.windows == {"early": (1000, 872), "middle": (872, 128), "late": (128, 0)}
    starts = [s for s, _ in fu.fusion_triggers(fs)]
    assert starts == [1000, 968, 936, 904, 128, 96, 64, 32]
    assert fu.fusion_triggers(fs)[0] == (1000, 984)


def test_default_schedule_t100():
    fs = fu.FusionSchedule(100)
    assert (fs.interval, fs.duration) == (4, 2)
    assert fs.windows["early"] == (100, 88) and fs.windows["late"] == (13, 0)
    segs = fu.fusion_triggers(fs)
    assert segs[:3] == [(100, 98), (96, 94), (92, 90)]
    assert segs[-1] == (1, 0)


def test_segment_truncated_at_stage_boundary():
    fs = fu.FusionSchedule(100, active_stages={"early"}, interval=8, duration=8)
    assert fu.fusion_triggers(fs)[-1] == (92, 88)
    fs = fu.FusionSchedule(100, active_stages={"early"}, interval=32, duration=32)
    assert fu.fusion_triggers(fs) == [(100, 88)]


def test_empty_cases():
    assert fu.fusion_triggers(fu.FusionSchedule(100, active_stages=set())) == []
    assert fu.fusion_triggers(fu.FusionSchedule(100, duration=0)) == []


@pytest.mark.parametrize("kw", [dict(duration=5, interval=4), dict(interval=0), dict(ratio=1.5),
                                dict(active_stages={"mid"})])
def test_invalid_schedules(kw):
    with pytest.raises(fu.FusionError):
        fu.FusionSchedule(100, **kw)


@given(T=st.integers(10, 1200), stages=st.sets(st.sampled_from(fu.STAGES)), data=st.data())
@settings(max_examples=80, deadline=None)
def test_trigger_properties(T, stages, data):
    interval = data.draw(st.integers(1, 40))
    duration = data.draw(st.integers(0, interval))
    fs = fu.FusionSchedule(T, stages, interval, duration)
    segs = fu.fusion_triggers(fs)
    steps = [t for s, e in segs for t in range(e + 1, s + 1)]
    assert len(steps) == len(set(steps))  # no overlapping segments
    assert all(1 <= t <= T for t in steps)
    assert all(fs.stage_of(t) in stages for t in steps)
    for s, e in segs:
        assert 0 < s - e <= duration
    assert [s for s, _ in segs] == sorted((s for s, _ in segs), reverse=True)


def test_stage_of():
    fs = fu.FusionSchedule(100)
    assert fs.stage_of(100) == "early" and fs.stage_of(89) == "early"
    assert fs.stage_of(88) == "middle" and fs.stage_of(14) == "middle"
    assert fs.stage_of(13) == "late" and fs.stage_of(1) == "late"


def test_blend_extremes():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 50, 2))
    assert np.array_equal(fu.blend(a, b, 0.0, rng), a)
    assert np.array_equal(fu.blend(a, b, 1.0, rng), b)


def test_blend_count_is_binomial():
    rng = np.random.default_rng(1)
    N, rho = 10_000, 0.3
    a, b = np.zeros((N, 2)), np.ones((N, 2))
    k = fu.blend(a, b, rho, rng)[:, 0].sum()
    assert abs(k - rho * N) < 4 * np.sqrt(N * rho * (1 - rho))


def test_blend_picks_from_both_sources():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 64, 2))
    out = fu.blend(a, b, 0.5, rng)
    src = {tuple(p) for p in a} | {tuple(p) for p in b}
    assert all(tuple(p) in src for p in out)
    assert all(np.array_equal(out[i], a[i]) or np.array_equal(out[i], b[i]) for i in range(64))


def test_blend_shape_mismatch():
    with pytest.raises(fu.FusionError):
        fu.blend(np.zeros((4, 2)), np.zeros((5, 2)), 0.5, np.random.default_rng(0))


def test_ratio_zero_is_baseline_bitwise():
    prior, recon = nets()
    base = sp.sample_conditional(recon, SCHED, COND, 5, N=32)
    out = fu.bdm_blend_sample(prior, recon, SCHED, fu.FusionSchedule(100, ratio=0.0), COND, 5, N=32)
    assert out.tobytes() == base.tobytes()


def test_empty_stages_is_baseline_bitwise():
    prior, recon = nets()
    base = sp.sample_conditional(recon, SCHED, COND, 6, N=32)
    fs = fu.FusionSchedule(100, active_stages=set())
    assert fu.bdm_blend_sample(prior, recon, SCHED, fs, COND, 6, N=32).tobytes() == base.tobytes()
    m = dn.init_merged(prior, recon)
    for k in dn.PROJ_KEYS:
        m.proj[k][...] = 0.2
    assert fu.bdm_merge_sample(m, prior, SCHED, fs, COND, 6, N=32).tobytes() == base.tobytes()


def test_zero_init_merge_sampler_is_baseline_bitwise():
    prior, recon = nets()
    m = dn.init_merged(prior, recon)
    base = sp.sample_conditional(recon, SCHED, COND, 7, N=32)
    out = fu.bdm_merge_sample(m, prior, SCHED, fu.FusionSchedule(100), COND, 7, N=32)
    assert out.tobytes() == base.tobytes()


def test_blending_changes_the_result():
    prior, recon = nets()
    base = sp.sample_conditional(recon, SCHED, COND, 8, N=32)
    out = fu.bdm_blend_sample(prior, recon, SCHED, fu.FusionSchedule(100), COND, 8, N=32)
    assert not np.array_equal(out, base)
    again = fu.bdm_blend_sample(prior, recon, SCHED, fu.FusionSchedule(100), COND, 8, N=32)
    assert out.tobytes() == again.tobytes()


def test_ratio_one_single_segment_follows_prior():
    """With rho=1 and one segment, the fused state is the prior's own trajectory."""
    prior, recon = nets()
    fs = fu.FusionSchedule(100, active_stages={"early"}, interval=32, duration=32, ratio=1.0)
    run = sp.SamplerRun(seed=3, record=True)
    fu.bdm_blend_sample(prior, recon, SCHED, fs, COND, run, N=16)
    stream = sp.NoiseStream(3)
    y = stream.normal("init", 100, (3, 16, 2))
    for t in range(100, 88, -1):
        y = sp.ancestral_update(y, dn.predict_noise(prior, y, t), t, stream.normal("prior", t, y.shape), SCHED)
    assert np.array_equal(run.trajectory[88], y)


def test_blend_every_step_runs():
    prior, recon = nets()
    fs = fu.FusionSchedule(100, blend_every_step=True)
    out = fu.bdm_blend_sample(prior, recon, SCHED, fs, COND, 1, N=16)
    assert out.shape == (3, 16, 2) and np.all(np.isfinite(out))


def test_pair_checks():
    prior, recon = nets()
    with pytest.raises(dn.DenoiserError):
        fu.bdm_blend_sample(recon, recon, SCHED, fu.FusionSchedule(100), COND, 0)
    with pytest.raises(fu.FusionError):
        fu.bdm_blend_sample(prior, recon, SCHED, fu.FusionSchedule(50), COND, 0)
    other, _ = nets(seed=5)
    with pytest.raises(dn.DenoiserError):
        fu.bdm_merge_sample(dn.init_merged(prior, recon), other, SCHED, fu.FusionSchedule(100), COND, 0)
