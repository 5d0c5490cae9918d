"""Linear beta schedules and the closed-form forward (noising) process."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances for a discrete DDPM with ``T`` steps.

    Arrays are indexed by timestep: index 0 is the clean-data convention
    (``alpha_bar[0] == 1``, ``beta[0] == 0``) and indices ``1..T`` hold the
    real steps, so ``sched.beta[t]`` reads like the maths.
    """

    T: int
    beta0: float
    betaT: float
    beta: np.ndarray = field(repr=False, compare=False)
    alpha: np.ndarray = field(repr=False, compare=False)
    alpha_bar: np.ndarray = field(repr=False, compare=False)
    sigma: np.ndarray = field(repr=False, compare=False)

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "beta0": self.beta0, "betaT": self.betaT})

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        d = json.loads(text)
        return build_linear_schedule(d["beta0"], d["betaT"], d["T"])

    def same_as(self, other: "NoiseSchedule") -> bool:
        return (self.T, self.beta0, self.betaT) == (other.T, other.beta0, other.betaT)


def build_linear_schedule(beta0: float, betaT: float, T: int) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ScheduleError(f"T must be an integer >= 1, got {T!r}")
    T = int(T)
    if not (0.0 < beta0 <= betaT < 1.0):
        raise ScheduleError(f"need 0 < beta0 <= betaT < 1, got beta0={beta0}, betaT={betaT}")
    beta = np.zeros(T + 1)
    if T == 1:
        beta[1] = beta0
    else:
        steps = np.arange(T) / (T - 1)
        beta[1:] = beta0 + steps * (betaT - beta0)
        beta[T] = betaT
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(T, float(beta0), float(betaT), beta, alpha, alpha_bar, sigma)


def _check_t(t: int, sched: NoiseSchedule, lo: int = 0) -> None:
    if not (lo <= t <= sched.T):
        raise ScheduleError(f"timestep {t} outside [{lo}, {sched.T}]")


def forward_diffuse(y0: np.ndarray, t, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Sample q(y_t | y_0) given the noise draw.

    ``t`` may be a scalar or one timestep per leading batch element.
    """
    y0 = np.asarray(y0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if y0.shape != noise.shape:
        raise ScheduleError(f"noise shape {noise.shape} does not match cloud shape {y0.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        _check_t(int(t_arr), sched)
        if int(t_arr) == 0:
            return y0.copy()
        ab = sched.alpha_bar[int(t_arr)]
        return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * noise
    if t_arr.min() < 0 or t_arr.max() > sched.T:
        raise ScheduleError(f"timesteps outside [0, {sched.T}]")
    ab = sched.alpha_bar[t_arr].reshape(t_arr.shape + (1,) * (y0.ndim - t_arr.ndim))
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * noise


def iterative_forward_chain(y0: np.ndarray, t: int, rng: np.random.Generator,
                            sched: NoiseSchedule) -> np.ndarray:
    """Run ``t`` single-step corruptions; a Monte-Carlo oracle for forward_diffuse."""
    _check_t(t, sched)
    y = np.array(y0, dtype=float)
    for s in range(1, t + 1):
        y = np.sqrt(sched.alpha[s]) * y + np.sqrt(sched.beta[s]) * rng.standard_normal(y.shape)
    return y
