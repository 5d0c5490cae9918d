"""Command-line entry point: ``bdm <subcommand> [--config ...] [--out ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

COMMANDS = ("gen-data", "train-prior", "train-recon", "train-merge", "sample", "evaluate",
            "ablate-timing", "ablate-duration", "ablate-ratio", "compare-cfg", "seed-variance",
            "langevin-demo", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdm", description="Bayesian diffusion models at desk scale")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="training seed (overrides train_seed)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads")
    p.add_argument("--paper-scale-schedule", dest="full_scale", action="store_true",
                   help="use the T=1000 schedule (schedule arithmetic only)")
    p.add_argument("--method", default=None, help="override method for sample/evaluate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        # must happen before numpy loads its BLAS
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")

    import dataclasses

    from . import harness as hz
    from .config import ConfigError, ExperimentConfig, load_config

    if args.command == "report":
        text = hz.report(args.out)
        print(text if text else "(empty report)")
        return 0
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.full_scale:
            cfg = cfg.full_scale_schedule()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, train_seed=args.seed)
        if args.method is not None:
            cfg = dataclasses.replace(cfg, method=args.method).validate()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    ws = hz.Workspace(args.out, cfg)
    seed = cfg.train_seed
    try:
        result = _dispatch(args.command, ws, seed, hz)
    except hz.ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    if result is not None:
        print(json.dumps(result, indent=2, default=str))
    return 0


def _dispatch(cmd, ws, seed, hz):
    cfg = ws.cfg
    if cmd == "gen-data":
        return {"written": str(ws.gen_data())}
    if cmd == "train-prior":
        ws.prior(seed)
        return {"model": str(ws.model_path("prior", seed))}
    if cmd == "train-recon":
        ws.recon(seed)
        return {"model": str(ws.model_path("recon", seed, cfg.data.pair_fraction))}
    if cmd == "train-merge":
        ws.prior(seed, train=False)
        ws.recon(seed, train=False)
        ws.merged(seed)
        return {"model": str(ws.model_path("merge", seed, cfg.data.pair_fraction))}
    if cmd in ("sample", "evaluate"):
        if cfg.method == "langevin_demo":
            return hz.langevin_demo(ws, seed)
        _require(ws, cfg.method, seed)
        clouds = ws.sample(cfg.method, seed)
        name = f"{cfg.method}_seed{seed}"
        if cmd == "sample":
            return {"samples": str(ws.save_samples(name, clouds))}
        s = ws.score(clouds)
        ws.write_table(f"evaluate_{name}", [hz._row(cfg.method, s, method=cfg.method, seed=seed)])
        return {k: v for k, v in s.items() if k != "cd_per_instance"}
    table = {"ablate-timing": hz.ablate_timing, "ablate-duration": hz.ablate_duration,
             "ablate-ratio": hz.ablate_ratio, "compare-cfg": hz.compare_cfg}
    if cmd in table:
        _require(ws, "bdm_m" if cmd == "compare-cfg" else "bdm_b", seed)
        rows = table[cmd](ws, seed)
        return [{k: v for k, v in r.items() if k != "cd_per_instance"} for r in rows]
    if cmd == "seed-variance":
        _require(ws, "bdm_b", seed)
        return hz.seed_variance(ws, seed)
    if cmd == "langevin-demo":
        return hz.langevin_demo(ws, seed)
    raise AssertionError(cmd)


def _require(ws, method, seed):
    """Stage dependencies: fail with the missing file rather than training silently."""
    ws.recon(seed, train=False)
    if method in ("bdm_b", "bdm_m"):
        ws.prior(seed, train=False)
    if method == "bdm_m":
        ws.merged(seed, train=False)


if __name__ == "__main__":
    sys.exit(main())
