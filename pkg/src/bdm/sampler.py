"""Ancestral (reverse-process) sampling: unconditional, conditional and CFG.

All samplers draw their Gaussian noise from a :class:`NoiseStream`, keyed by
``(seed, tag, timestep)``. Two samplers started from the same seed therefore
see identical noise at every timestep, whatever else they do in between.
This is what makes the exact-equivalence checks between samplers possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserError, DenoiserParams, predict_noise
from .schedule import NoiseSchedule

TAGS = {"init": 0, "main": 1, "prior": 2, "blend": 3}


class NumericalError(FloatingPointError):
    pass


class NoiseStream:
    """Counter-based noise: every draw is a pure function of (seed, tag, t)."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _rng(self, tag: str, t: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, TAGS[tag], int(t)])

    def normal(self, tag: str, t: int, shape) -> np.ndarray:
        return self._rng(tag, t).standard_normal(shape)

    def uniform(self, tag: str, t: int, shape) -> np.ndarray:
        return self._rng(tag, t).random(shape)


@dataclass
class SamplerRun:
    """Optional recorder passed to samplers.

    With ``record=True`` every injected noise array and every intermediate
    cloud is kept, keyed by timestep, so a trajectory can be replayed or
    dumped for inspection.
    """

    seed: int
    record: bool = False
    every: int = 1
    noise_log: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)

    @property
    def stream(self) -> NoiseStream:
        return NoiseStream(self.seed)

    def log(self, t: int, y: np.ndarray, z=None) -> None:
        if not self.record:
            return
        if z is not None:
            self.noise_log[t] = np.array(z)
        if t % self.every == 0:
            self.trajectory[t] = np.array(y)

    def dump(self, out: Path, index: int = 0) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for t, y in sorted(self.trajectory.items(), reverse=True):
            cloud = y[index] if y.ndim == 3 else y
            np.savetxt(out / f"t{t:04d}.xyz", cloud, fmt="%.10g")


def as_stream(rng) -> NoiseStream:
    if isinstance(rng, NoiseStream):
        return rng
    if isinstance(rng, SamplerRun):
        return rng.stream
    return NoiseStream(int(rng))


def resolve_run(rng, run):
    """A SamplerRun passed as ``rng`` doubles as the recorder."""
    if run is None and isinstance(rng, SamplerRun):
        run = rng
    return as_stream(rng), run


def ancestral_update(y_t, eps_hat, t: int, z, sched: NoiseSchedule) -> np.ndarray:
    """y_{t-1} = (y_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z."""
    coef = sched.beta[t] / np.sqrt(1.0 - sched.alpha_bar[t])
    mean = (y_t - coef * eps_hat) / np.sqrt(sched.alpha[t])
    out = mean if t == 1 else mean + sched.sigma[t] * z
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite cloud after reverse step t={t}")
    return out


def step_noise(stream: NoiseStream, tag: str, t: int, shape):
    # no noise is added on the final step
    return None if t == 1 else stream.normal(tag, t, shape)


def ancestral_step(params: DenoiserParams, y_t, t: int, cond, rng, sched: NoiseSchedule,
                   tag: str = "main") -> np.ndarray:
    """One reverse step. ``rng`` is a NoiseStream/seed, or an explicit noise array."""
    if not 1 <= t <= sched.T:
        raise NumericalError(f"timestep {t} outside [1, {sched.T}]")
    y_t = np.asarray(y_t, dtype=float)
    if isinstance(rng, np.ndarray):
        z = rng
    elif isinstance(rng, np.random.Generator):
        z = rng.standard_normal(y_t.shape)
    else:
        z = step_noise(as_stream(rng), tag, t, y_t.shape)
    eps = predict_noise(params, y_t, t, cond)
    return ancestral_update(y_t, eps, t, z, sched)


def _batch_shape(cond, N, D, batch):
    if cond is not None:
        c = cond.vector() if hasattr(cond, "vector") else np.asarray(cond)
        if c.ndim == 2:
            return (c.shape[0], N, D), c
        return ((batch, N, D) if batch else (N, D)), c
    return ((batch, N, D) if batch else (N, D)), None


def run_chain(eps_fn, sched: NoiseSchedule, shape, rng, run: SamplerRun | None = None) -> np.ndarray:
    """Generic reverse chain from y_T ~ N(0, I) driven by ``eps_fn(y, t)``."""
    stream, run = resolve_run(rng, run)
    y = stream.normal("init", sched.T, shape)
    if run is not None:
        run.log(sched.T, y)
    for t in range(sched.T, 0, -1):
        z = step_noise(stream, "main", t, shape)
        y = ancestral_update(y, eps_fn(y, t), t, z, sched)
        if run is not None:
            run.log(t - 1, y, z)
    return y


def _check_schedule(params: DenoiserParams, sched: NoiseSchedule):
    if params.T != sched.T:
        raise DenoiserError(f"network trained for T={params.T}, schedule has T={sched.T}")


def sample_unconditional(params: DenoiserParams, sched: NoiseSchedule, N: int, rng,
                         batch: int | None = None, run: SamplerRun | None = None) -> np.ndarray:
    if params.conditional:
        raise DenoiserError("sample_unconditional needs an unconditional network")
    _check_schedule(params, sched)
    shape = (batch, N, params.D) if batch else (N, params.D)
    return run_chain(lambda y, t: predict_noise(params, y, t), sched, shape, rng, run)


def sample_conditional(params: DenoiserParams, sched: NoiseSchedule, cond, rng, N: int = 128,
                       run: SamplerRun | None = None) -> np.ndarray:
    """Conditional sampling; ``cond`` is one Condition/vector or a (B, C) batch."""
    if not params.conditional:
        raise DenoiserError("sample_conditional needs a conditional network")
    _check_schedule(params, sched)
    shape, c = _batch_shape(cond, N, params.D, None)
    return run_chain(lambda y, t: predict_noise(params, y, t, c), sched, shape, rng, run)


def cfg_noise(params: DenoiserParams, y, t, cond, w: float) -> np.ndarray:
    """Guided estimate (1 + w) * eps(y, t, cond) - w * eps(y, t, null)."""
    e_c = predict_noise(params, y, t, cond)
    e_n = predict_noise(params, y, t, null=True)
    return (1.0 + w) * e_c - w * e_n


def sample_cfg(params: DenoiserParams, sched: NoiseSchedule, cond, guidance_w: float, rng,
               N: int = 128, run: SamplerRun | None = None) -> np.ndarray:
    if not params.conditional or "cond.null" not in params.weights:
        raise DenoiserError("classifier-free guidance needs a null condition embedding")
    _check_schedule(params, sched)
    shape, c = _batch_shape(cond, N, params.D, None)
    return run_chain(lambda y, t: cfg_noise(params, y, t, c, guidance_w), sched, shape, rng, run)
