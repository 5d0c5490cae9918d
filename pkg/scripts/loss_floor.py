"""Bayes-optimal noise-prediction loss for a dataset holding one cloud.

The optimal predictor knows the cloud and uses the exact posterior over which
clean point produced each noisy point. Its loss, averaged over uniform t, is
the lowest any network can reach on that dataset.

    python3 scripts/loss_floor.py [--T 100 --beta0 1e-4 --betaT 0.08]
"""

import argparse
import math

import numpy as np

from bdm import toydata as td
from bdm.schedule import build_linear_schedule


def floor(y0, sched, rng, draws=4000):
    per_t = []
    for t in range(1, sched.T + 1):
        ab = sched.alpha_bar[t]
        eps = rng.standard_normal((draws, y0.shape[1]))
        yt = math.sqrt(ab) * y0[rng.integers(0, len(y0), draws)] + math.sqrt(1 - ab) * eps
        logw = -((yt[:, None] - math.sqrt(ab) * y0[None]) ** 2).sum(-1) / (2 * (1 - ab))
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        per_t.append(np.mean(((yt - math.sqrt(ab) * (w @ y0)) / math.sqrt(1 - ab) - eps) ** 2))
    return float(np.mean(per_t))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--beta0", type=float, default=1e-4)
    ap.add_argument("--betaT", type=float, default=0.08)
    args = ap.parse_args()
    sched = build_linear_schedule(args.beta0, args.betaT, args.T)
    for N in (8, 16, 32, 128):
        for fam in td.FAMILIES:
            rng = np.random.default_rng(3)
            y0 = td.gen_shape(td.ShapeSpec(fam), N, rng)
            print(f"N={N:4d} {fam:8s} floor {floor(y0, sched, rng):.4f}")


if __name__ == "__main__":
    main()
