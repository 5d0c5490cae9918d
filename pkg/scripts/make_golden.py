"""Regenerate the frozen denoiser outputs used by the regression test.

Only rerun this after a deliberate change to the network definition.
"""

from pathlib import Path

import numpy as np

from bdm import denoiser as dn
from bdm.schedule import build_linear_schedule

SEED = 1234
OUT = Path(__file__).resolve().parents[1] / "tests" / "golden" / "denoiser_golden.npz"


def main():
    sched = build_linear_schedule(1e-4, 0.08, 100)
    rng = np.random.default_rng(SEED)
    prior = dn.init_params(2, 100, rng, dtype="float64", sched=sched)
    recon = dn.init_params(2, 100, rng, cond_dim=20, dtype="float64", sched=sched)
    m = dn.init_merged(prior, recon)
    prng = np.random.default_rng(SEED + 1)
    for k in dn.PROJ_KEYS:
        m.proj[k][...] = 0.1 * prng.standard_normal(m.proj[k].shape)
    data = np.random.default_rng(SEED + 2)
    y = data.standard_normal((32, 2))
    c = data.random(20)
    t = 37
    np.savez(OUT, seed=SEED, y=y, c=c, t=t,
             prior_out=dn.predict_noise(prior, y, t),
             recon_out=dn.predict_noise(recon, y, t, c),
             merged_out=dn.predict_noise_merged(m, y, t, c))
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
