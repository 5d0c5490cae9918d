"""Every CLI stage in dependency order for one config and training seed.

    python3 scripts/run_study.py --out runs/study [--config cfg.json] [--seed 0]
"""

import argparse
import sys

from bdm import cli

STAGES = ("gen-data", "train-prior", "train-recon", "train-merge", "evaluate", "ablate-timing",
          "ablate-duration", "ablate-ratio", "compare-cfg", "seed-variance", "langevin-demo")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    common = ["--out", args.out, "--seed", args.seed, "-v"]
    if args.config:
        common += ["--config", args.config]
    for stage in STAGES:
        print(f"== {stage}", flush=True)
        rc = cli.main([stage, *common])
        if rc:
            sys.exit(rc)
    cli.main(["report", "--out", args.out])


if __name__ == "__main__":
    main()
