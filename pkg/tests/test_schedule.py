import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdm.schedule import (NoiseSchedule, ScheduleError, build_linear_schedule, forward_diffuse,
                          iterative_forward_chain)

# running product of (1 - beta_t) for the 1e-5 .. 0.008, T=1000 schedule,
# computed with a plain python loop independent of build_linear_schedule
ALPHA_BAR_1000 = 0.018029818449238573


def loop_alpha_bar(beta0, betaT, T):
    p = 1.0
    for t in range(1, T + 1):
        b = beta0 if T == 1 else beta0 + (t - 1) / (T - 1) * (betaT - beta0)
        p *= 1.0 - b
    return p


def test_endpoints():
    s = build_linear_schedule(1e-5, 0.008, 1000)
    assert s.beta[1] == 1e-5
    assert s.beta[1000] == 0.008
    assert s.alpha_bar[0] == 1.0


def test_single_step():
    s = build_linear_schedule(0.01, 0.01, 1)
    assert s.beta[1:].tolist() == [0.01]
    assert s.alpha_bar[1] == pytest.approx(0.99, abs=1e-15)


def test_alpha_bar_matches_loop_oracle():
    s = build_linear_schedule(1e-5, 0.008, 1000)
    assert abs(loop_alpha_bar(1e-5, 0.008, 1000) - ALPHA_BAR_1000) < 1e-15
    assert abs(s.alpha_bar[1000] - ALPHA_BAR_1000) < 1e-6
    assert s.alpha_bar[1000] == pytest.approx(0.0181, abs=1e-4)


@pytest.mark.parametrize("args", [(0.0, 0.01, 10), (0.02, 0.01, 10), (0.01, 1.0, 10), (0.01, 0.02, 0)])
def test_invalid_range(args):
    with pytest.raises(ScheduleError):
        build_linear_schedule(*args)


@given(beta0=st.floats(1e-6, 0.05), span=st.floats(0.0, 0.5), T=st.integers(1, 400))
@settings(max_examples=60, deadline=None)
def test_schedule_invariants(beta0, span, T):
    betaT = min(beta0 + span, 0.9)
    s = build_linear_schedule(beta0, betaT, T)
    b = s.beta[1:]
    assert np.all(b > 0) and np.all(b < 1)
    assert np.all(np.diff(b) >= 0)
    assert np.all(np.diff(s.alpha_bar) < 0)
    running = np.cumprod(s.alpha[1:])
    assert np.allclose(s.alpha_bar[1:], running, rtol=1e-12, atol=0)
    assert np.allclose(s.sigma ** 2, s.beta)


def test_determinism_and_json():
    a = build_linear_schedule(1e-4, 0.08, 100)
    b = NoiseSchedule.from_json(a.to_json())
    assert a == b
    for name in ("beta", "alpha", "alpha_bar", "sigma"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_forward_t0_identity():
    s = build_linear_schedule(1e-5, 0.008, 1000)
    y0 = np.random.default_rng(0).standard_normal((16, 2))
    out = forward_diffuse(y0, 0, np.ones_like(y0), s)
    assert np.array_equal(out, y0)


def test_forward_zero_signal():
    s = build_linear_schedule(1e-5, 0.008, 1000)
    eps = np.random.default_rng(1).standard_normal((8, 2))
    out = forward_diffuse(np.zeros((8, 2)), 500, eps, s)
    assert np.allclose(out, np.sqrt(1 - s.alpha_bar[500]) * eps, rtol=0, atol=1e-15)


def test_forward_single_point_closed_form():
    s = build_linear_schedule(1e-5, 0.008, 1000)
    out = forward_diffuse(np.array([[1.0, 0.0]]), 1000, np.array([[1.0, 1.0]]), s)
    expected = [math.sqrt(ALPHA_BAR_1000) + math.sqrt(1 - ALPHA_BAR_1000), math.sqrt(1 - ALPHA_BAR_1000)]
    assert np.allclose(out[0], expected, atol=1e-9)
    assert np.allclose(out[0], [1.1255, 0.9909], atol=5e-4)


def test_forward_errors():
    s = build_linear_schedule(1e-4, 0.08, 100)
    with pytest.raises(ScheduleError):
        forward_diffuse(np.zeros((4, 2)), 5, np.zeros((4, 3)), s)
    with pytest.raises(ScheduleError):
        forward_diffuse(np.zeros((4, 2)), 101, np.zeros((4, 2)), s)
    with pytest.raises(ScheduleError):
        forward_diffuse(np.zeros((4, 2)), -1, np.zeros((4, 2)), s)


def test_forward_linearity():
    s = build_linear_schedule(1e-4, 0.08, 100)
    rng = np.random.default_rng(2)
    a, b, e1, e2 = (rng.standard_normal((10, 2)) for _ in range(4))
    lhs = forward_diffuse(2 * a + b, 37, 3 * e1 - e2, s)
    rhs = 2 * forward_diffuse(a, 37, 1.5 * e1, s) + forward_diffuse(b, 37, -e2, s)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_forward_batched_timesteps():
    s = build_linear_schedule(1e-4, 0.08, 100)
    rng = np.random.default_rng(3)
    y0, eps = rng.standard_normal((3, 5, 2)), rng.standard_normal((3, 5, 2))
    t = np.array([0, 10, 100])
    out = forward_diffuse(y0, t, eps, s)
    for i in range(3):
        assert np.allclose(out[i], forward_diffuse(y0[i], int(t[i]), eps[i], s), atol=1e-15)


def test_iterative_chain_t0():
    s = build_linear_schedule(1e-4, 0.08, 100)
    y0 = np.array([[0.3, -0.2]])
    assert np.array_equal(iterative_forward_chain(y0, 0, np.random.default_rng(0), s), y0)


def test_marginal_consistency_monte_carlo():
    """K chains of single-step corruptions match the closed-form marginal."""
    s = build_linear_schedule(1e-4, 0.08, 100)
    K = 10_000
    y0 = np.array([0.4, -0.25])
    rng = np.random.default_rng(4)
    chains = iterative_forward_chain(np.broadcast_to(y0, (K, 2)), s.T, rng, s)
    ab = s.alpha_bar[s.T]
    sd = math.sqrt(1 - ab)
    assert np.all(np.abs(chains.mean(axis=0) - math.sqrt(ab) * y0) < 3 * sd / math.sqrt(K))
    assert np.all(np.abs(chains.var(axis=0) / (1 - ab) - 1) < 4 * math.sqrt(2 / (K - 1)))
    closed = forward_diffuse(np.broadcast_to(y0, (K, 2)), s.T, rng.standard_normal((K, 2)), s)
    assert np.all(np.abs(closed.mean(axis=0) - chains.mean(axis=0)) < 6 * sd / math.sqrt(K))
