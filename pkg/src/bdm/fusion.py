"""Prior fusion during reverse diffusion: blending (BDM-B) and merging (BDM-M).

Timestep convention: the reverse step "at t" maps y_t to y_{t-1}. A fusion
segment ``(start, end)`` covers the steps t = start, ..., end + 1, i.e. it
takes the cloud from state y_start to state y_end.

Stage windows in state indices, with ``e = ceil(0.872 T)`` and
``l = ceil(0.128 T)``::

    early  : y_T  -> y_e
    middle : y_e  -> y_l
    late   : y_l  -> y_0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserError, DenoiserParams, MergedParams, predict_noise, predict_noise_merged
from .sampler import SamplerRun, _batch_shape, ancestral_update, resolve_run, step_noise
from .schedule import NoiseSchedule

STAGES = ("early", "middle", "late")
EARLY_FRAC = 0.872
LATE_FRAC = 0.128
INTERVAL_FRAC = 0.032
DURATION_FRAC = 0.016


class FusionError(ValueError):
    pass


def _ceil(x: float) -> int:
    # guard against 0.872 * 1000 = 871.9999...
    return math.ceil(round(x, 9))


@dataclass(frozen=True)
class FusionSchedule:
    T: int
    active_stages: frozenset = frozenset({"early", "late"})
    interval: int | None = None
    duration: int | None = None
    ratio: float = 0.5
    blend_every_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "active_stages", frozenset(self.active_stages))
        if self.interval is None:
            object.__setattr__(self, "interval", _ceil(INTERVAL_FRAC * self.T))
        if self.duration is None:
            object.__setattr__(self, "duration", _ceil(DURATION_FRAC * self.T))
        bad = set(self.active_stages) - set(STAGES)
        if bad:
            raise FusionError(f"unknown stages {sorted(bad)}")
        if self.T < 1:
            raise FusionError("T must be >= 1")
        if self.interval < 1:
            raise FusionError(f"interval must be >= 1, got {self.interval}")
        if not 0 <= self.duration <= self.interval:
            raise FusionError(f"need 0 <= duration <= interval, got {self.duration} > {self.interval}")
        if not 0.0 <= self.ratio <= 1.0:
            raise FusionError(f"ratio must be in [0, 1], got {self.ratio}")

    @property
    def windows(self) -> dict:
        """State-index windows ``(top, bottom)`` per stage."""
        e, l = _ceil(EARLY_FRAC * self.T), _ceil(LATE_FRAC * self.T)
        return {"early": (self.T, e), "middle": (e, l), "late": (l, 0)}

    def stage_of(self, t: int) -> str:
        """Stage containing the reverse step at ``t`` (1 <= t <= T)."""
        for name, (top, bottom) in self.windows.items():
            if bottom < t <= top:
                return name
        raise FusionError(f"timestep {t} outside [1, {self.T}]")

    def to_dict(self) -> dict:
        return {
            "active_stages": sorted(self.active_stages),
            "interval": self.interval,
            "duration": self.duration,
            "ratio": self.ratio,
            "blend_every_step": self.blend_every_step,
        }


def fusion_triggers(fs: FusionSchedule) -> list:
    """Fusion segments ``(start, end)`` in decreasing time order."""
    segs = []
    if fs.duration == 0:
        return segs
    for name in STAGES:
        if name not in fs.active_stages:
            continue
        top, bottom = fs.windows[name]
        start = top
        while start > bottom:
            segs.append((start, max(start - fs.duration, bottom)))
            start -= fs.interval
    return segs


def blend(y_recon, y_prior, ratio: float, rng) -> np.ndarray:
    """Per-point Bernoulli pick: point i comes from ``y_prior`` with probability ``ratio``.

    ``rng`` is a Generator or a precomputed array of uniforms with one entry
    per point (leading shape of the cloud without the coordinate axis).
    """
    y_recon = np.asarray(y_recon)
    y_prior = np.asarray(y_prior)
    if y_recon.shape != y_prior.shape:
        raise FusionError(f"cannot blend clouds of shapes {y_recon.shape} and {y_prior.shape}")
    u = rng if isinstance(rng, np.ndarray) else rng.random(y_recon.shape[:-1])
    take_prior = u < ratio
    return np.where(take_prior[..., None], y_prior, y_recon)


def _check_pair(prior: DenoiserParams, recon: DenoiserParams, sched: NoiseSchedule):
    if prior.conditional:
        raise DenoiserError("prior model must be unconditional")
    if not recon.conditional:
        raise DenoiserError("reconstruction model must be conditional")
    if prior.T != sched.T or recon.T != sched.T:
        raise DenoiserError("prior, reconstruction model and schedule disagree on T")


def bdm_blend_sample(prior: DenoiserParams, recon: DenoiserParams, sched: NoiseSchedule,
                     fs: FusionSchedule, cond, rng, N: int = 128,
                     run: SamplerRun | None = None) -> np.ndarray:
    """Conditional chain with fork-advance-blend fusion segments.

    At each segment the current cloud is forked; one copy follows the prior's
    reverse steps and the other the reconstruction model's for the segment's
    length, then the two are blended point-wise and the reconstruction chain
    resumes from the blend. The reconstruction copy draws the same per-step
    noise as the plain conditional sampler.
    """
    _check_pair(prior, recon, sched)
    if fs.T != sched.T:
        raise FusionError(f"fusion schedule built for T={fs.T}, sampler has T={sched.T}")
    stream, run = resolve_run(rng, run)
    shape, c = _batch_shape(cond, N, recon.D, None)
    segs = dict(fusion_triggers(fs))
    y = stream.normal("init", sched.T, shape)
    if run is not None:
        run.log(sched.T, y)
    t = sched.T
    while t >= 1:
        if t not in segs:
            z = step_noise(stream, "main", t, shape)
            y = ancestral_update(y, predict_noise(recon, y, t, c), t, z, sched)
            if run is not None:
                run.log(t - 1, y, z)
            t -= 1
            continue
        end = segs[t]
        y_r = y_p = y
        for s in range(t, end, -1):
            z = step_noise(stream, "main", s, shape)
            y_r = ancestral_update(y_r, predict_noise(recon, y_r, s, c), s, z, sched)
            zp = step_noise(stream, "prior", s, shape)
            y_p = ancestral_update(y_p, predict_noise(prior, y_p, s), s, zp, sched)
            if fs.blend_every_step and s > end + 1:
                y_r = y_p = blend(y_r, y_p, fs.ratio, stream.uniform("blend", s, shape[:-1]))
        y = blend(y_r, y_p, fs.ratio, stream.uniform("blend", end + 1, shape[:-1]))
        if run is not None:
            run.log(end, y)
        t = end
    return y


def bdm_merge_sample(m: MergedParams, prior: DenoiserParams, sched: NoiseSchedule,
                     fs: FusionSchedule, cond, rng, N: int = 128,
                     run: SamplerRun | None = None) -> np.ndarray:
    """Conditional chain that swaps in the merged network inside fusion segments."""
    if prior is not m.prior and prior.digest() != m.prior.digest():
        raise DenoiserError("merged params were built against a different prior")
    _check_pair(prior, m.recon, sched)
    if fs.T != sched.T:
        raise FusionError(f"fusion schedule built for T={fs.T}, sampler has T={sched.T}")
    stream, run = resolve_run(rng, run)
    shape, c = _batch_shape(cond, N, m.recon.D, None)
    fused = set()
    for start, end in fusion_triggers(fs):
        fused.update(range(end + 1, start + 1))
    y = stream.normal("init", sched.T, shape)
    if run is not None:
        run.log(sched.T, y)
    for t in range(sched.T, 0, -1):
        if t in fused:
            eps = predict_noise_merged(m, y, t, c)
        else:
            eps = predict_noise(m.recon, y, t, c)
        z = step_noise(stream, "main", t, shape)
        y = ancestral_update(y, eps, t, z, sched)
        if run is not None:
            run.log(t - 1, y, z)
    return y
