"""Run the full desk-profile acceptance pipeline and print checks 5-10.

    python3 scripts/run_acceptance.py --out runs/acceptance

Checks 1-4 are fast and live only in tests/test_acceptance.py.
"""

import argparse
import json
import logging
from pathlib import Path

from bdm import harness as hz
from bdm.config import ExperimentConfig, load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--config", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s %(message)s")
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    ws = hz.Workspace(args.out, cfg)
    res = hz.acceptance_pipeline(ws)
    (Path(args.out) / "pipeline.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    for n, (ok, detail) in sorted(hz.judge_pipeline(res, cfg.data.pair_fraction).items()):
        print(f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")


if __name__ == "__main__":
    main()
