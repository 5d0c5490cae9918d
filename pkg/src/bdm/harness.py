"""Experiment orchestration: data, training, sampling, ablations and reports.

A :class:`Workspace` owns one output directory. Trained models are cached
there keyed by the training-relevant part of the config, so the stages can
be run one at a time from the CLI or all at once by the acceptance run.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import denoiser as dn
from . import fusion as fu
from . import langevin as lv
from . import metrics as mt
from . import sampler as sp
from . import toydata as td
from .config import ExperimentConfig, save_config
from .schedule import NoiseSchedule, build_linear_schedule

log = logging.getLogger("bdm")

TIMING_GRID = ((), ("early",), ("middle",), ("late",), ("early", "late"), ("early", "middle", "late"))
DURATION_GRID = (0, 1, 2, 4, 8, 16, 32)
RATIO_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SEED_VARIANCE_RUNS = 10
KIND_CODES = {"prior": 1, "recon": 2, "merge": 3}


class ArtifactError(FileNotFoundError):
    pass


def code_version() -> str:
    """Package version plus a short hash of the package sources."""
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return f"{__version__}+{h.hexdigest()[:10]}"


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def train_config(section) -> dn.TrainConfig:
    return dn.TrainConfig(steps=section.steps, batch=section.batch, lr=section.lr,
                          lr_start=section.lr_start, warmup_frac=section.warmup_frac,
                          cond_dropout=section.cond_dropout, dtype=section.dtype)


def fusion_schedule(cfg: ExperimentConfig, **over) -> fu.FusionSchedule:
    f = dataclasses.asdict(cfg.fusion)
    f.update(over)
    return fu.FusionSchedule(cfg.schedule.T, frozenset(f["active_stages"]), f["interval"],
                             f["duration"], f["ratio"], f["blend_every_step"])


def duration_schedule(cfg: ExperimentConfig, duration: int) -> fu.FusionSchedule:
    # long durations need a wider trigger interval; segments stop at stage edges
    base = fusion_schedule(cfg)
    return fusion_schedule(cfg, interval=max(base.interval, duration), duration=duration)


class Workspace:
    def __init__(self, out, cfg: ExperimentConfig):
        self.out = Path(out)
        self.cfg = cfg
        self.out.mkdir(parents=True, exist_ok=True)
        for sub in ("data", "models", "results", "samples"):
            (self.out / sub).mkdir(exist_ok=True)
        self._bundles = {}
        self._models = {}
        save_config(cfg, self.out / "config.json")

    # -- provenance ----------------------------------------------------------

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.cfg.digest(), "code_version": code_version()}

    @property
    def sched(self) -> NoiseSchedule:
        s = self.cfg.schedule
        return build_linear_schedule(s.beta0, s.betaT, s.T)

    # -- data ----------------------------------------------------------------

    def bundle(self, pair_fraction: float | None = None) -> td.DatasetBundle:
        d = self.cfg.data
        frac = d.pair_fraction if pair_fraction is None else pair_fraction
        if frac not in self._bundles:
            self._bundles[frac] = td.make_datasets(d.n_shapes, frac, d.N, d.seed, d.n_test, d.disjoint)
        return self._bundles[frac]

    def gen_data(self, pair_fraction: float | None = None) -> Path:
        b = self.bundle(pair_fraction)
        frac = self.cfg.data.pair_fraction if pair_fraction is None else pair_fraction
        out = self.out / "data" / f"frac{frac:g}"
        td.export_bundle(b, out, {**self.provenance, "pair_fraction": frac})
        return out

    # -- models --------------------------------------------------------------

    def model_path(self, kind: str, seed: int, frac: float | None = None) -> Path:
        name = kind if kind == "prior" else f"{kind}_frac{frac:g}"
        return self.out / "models" / f"{name}_seed{seed}.bdmp"

    def _train_key(self, kind: str, seed: int, frac) -> dict:
        c = self.cfg
        key = {"kind": kind, "seed": seed, "data": dataclasses.asdict(c.data),
               "schedule": dataclasses.asdict(c.schedule),
               "prior": dataclasses.asdict(c.prior)}
        key["data"].pop("pair_fraction")
        if kind != "prior":
            key["frac"] = frac
            key["recon"] = dataclasses.asdict(c.recon)
        if kind == "merge":
            key["merge"] = dataclasses.asdict(c.merge)
        return {"train_key": _digest(key), "code_version": code_version(), **self.provenance}

    def _cached(self, path: Path, key: dict) -> bool:
        if not path.exists():
            return False
        try:
            return dn.read_meta(path).get("train_key") == key["train_key"]
        except (dn.DenoiserError, ValueError):
            return False

    def _rng(self, kind: str, seed: int) -> np.random.Generator:
        return np.random.default_rng([int(seed), KIND_CODES[kind]])

    def prior(self, seed: int, train: bool = True) -> dn.DenoiserParams:
        path = self.model_path("prior", seed)
        key = self._train_key("prior", seed, None)
        if path in self._models:
            return self._models[path]
        if self._cached(path, key):
            p = dn.load_params(path)
        elif not train:
            raise ArtifactError(f"missing artifact {path}; run train-prior first")
        else:
            t0 = time.perf_counter()
            res = dn.train_prior(self.bundle().S_l, train_config(self.cfg.prior),
                                 self._rng("prior", seed), self.sched, log=log.info)
            p = res.params
            dn.save_params(path, p, {**key, "final_ema": res.ema[-1] if res.ema else None,
                                     "train_seconds": time.perf_counter() - t0})
        self._models[path] = p
        return p

    def recon(self, seed: int, frac: float | None = None, train: bool = True) -> dn.DenoiserParams:
        frac = self.cfg.data.pair_fraction if frac is None else frac
        path = self.model_path("recon", seed, frac)
        key = self._train_key("recon", seed, frac)
        if path in self._models:
            return self._models[path]
        if self._cached(path, key):
            p = dn.load_params(path)
        elif not train:
            raise ArtifactError(f"missing artifact {path}; run train-recon first")
        else:
            t0 = time.perf_counter()
            res = dn.train_reconstruction(self.bundle(frac).S_s, train_config(self.cfg.recon),
                                          self._rng("recon", seed), self.sched, log=log.info)
            p = res.params
            dn.save_params(path, p, {**key, "final_ema": res.ema[-1] if res.ema else None,
                                     "train_seconds": time.perf_counter() - t0})
        self._models[path] = p
        return p

    def merged(self, seed: int, frac: float | None = None, train: bool = True) -> dn.MergedParams:
        frac = self.cfg.data.pair_fraction if frac is None else frac
        path = self.model_path("merge", seed, frac)
        key = self._train_key("merge", seed, frac)
        if path in self._models:
            return self._models[path]
        if self._cached(path, key):
            m = dn.load_merged(path)
        elif not train:
            raise ArtifactError(f"missing artifact {path}; run train-merge first")
        else:
            prior = self.prior(seed, train=train)
            recon = self.recon(seed, frac, train=train)
            pairs = self.bundle(frac).S_s
            t0 = time.perf_counter()
            res = dn.train_merged(prior, recon, pairs, train_config(self.cfg.merge),
                                  self._rng("merge", seed), self.sched, log=log.info)
            m = res.params
            before, after = merged_holdout_loss(dn.init_merged(prior, recon), m, pairs, self.sched)
            dn.save_merged(path, m, {**key, "holdout_loss_before": before, "holdout_loss_after": after,
                                     "train_seconds": time.perf_counter() - t0})
        self._models[path] = m
        return m

    # -- sampling and scoring ------------------------------------------------

    def eval_set(self, frac: float | None = None):
        test = self.bundle(frac).test[: self.cfg.eval.n_eval]
        return np.stack([c.vector() for c, _ in test]), [y for _, y in test]

    def sample(self, method: str, seed: int, frac: float | None = None, eval_seed: int | None = None,
               fs: fu.FusionSchedule | None = None, guidance_w: float | None = None) -> np.ndarray:
        C, _ = self.eval_set(frac)
        es = self.cfg.eval.eval_seed if eval_seed is None else eval_seed
        N, sched = self.cfg.data.N, self.sched
        fs = fusion_schedule(self.cfg) if fs is None else fs
        if method == "baseline":
            return sp.sample_conditional(self.recon(seed, frac), sched, C, es, N=N)
        if method == "bdm_b":
            return fu.bdm_blend_sample(self.prior(seed), self.recon(seed, frac), sched, fs, C, es, N=N)
        if method == "bdm_m":
            m = self.merged(seed, frac)
            return fu.bdm_merge_sample(m, m.prior, sched, fs, C, es, N=N)
        if method == "cfg":
            w = self.cfg.guidance_w if guidance_w is None else guidance_w
            return sp.sample_cfg(self.recon(seed, frac), sched, C, w, es, N=N)
        raise ValueError(f"method {method!r} does not produce reconstructions")

    def score(self, clouds, frac: float | None = None) -> dict:
        _, G = self.eval_set(frac)
        reports = mt.evaluate_batch(list(clouds), G, self.cfg.eval.tau)
        summary = mt.summarize(reports)
        summary["cd_per_instance"] = [r.cd_scaled for r in reports]
        return summary

    def save_samples(self, name: str, clouds) -> Path:
        d = self.out / "samples" / name
        d.mkdir(parents=True, exist_ok=True)
        for i, y in enumerate(clouds):
            td.write_xyz(d / f"{i:05d}.xyz", y)
        (d / "provenance.json").write_text(json.dumps(self.provenance, indent=2) + "\n")
        return d

    # -- tables --------------------------------------------------------------

    def write_table(self, name: str, rows: list, extra: dict | None = None) -> Path:
        """Write ``rows`` as CSV and JSON, both stamped with provenance."""
        res = self.out / "results"
        cols = [k for k in rows[0] if k != "cd_per_instance"] if rows else []
        buf = io.StringIO()
        buf.write(f"# config_hash={self.provenance['config_hash']} code_version={self.provenance['code_version']}\n")
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items() if k in cols})
        (res / f"{name}.csv").write_text(buf.getvalue())
        doc = {"table": name, **self.provenance, "rows": rows, **(extra or {})}
        path = res / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path

    def load_table(self, name: str) -> dict | None:
        path = self.out / "results" / f"{name}.json"
        return json.loads(path.read_text()) if path.exists() else None


def merged_holdout_loss(m0: dn.MergedParams, m1: dn.MergedParams, pairs, sched, n: int = 32,
                        seed: int = 12345) -> tuple:
    """Noise-prediction loss of two merged models on a fixed slice of pairs."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pairs), size=min(n, len(pairs)), replace=False)
    y0 = np.stack([pairs[i][1] for i in idx])
    c = np.stack([pairs[i][0].vector() for i in idx])
    out = []
    for _ in range(4):
        t = rng.integers(1, sched.T + 1, size=len(idx))
        eps = rng.standard_normal(y0.shape)
        out.append((dn.merged_loss_and_grads(m0, y0, t, eps, sched, c)[0],
                    dn.merged_loss_and_grads(m1, y0, t, eps, sched, c)[0]))
    a = np.array(out)
    return float(a[:, 0].mean()), float(a[:, 1].mean())


def _row(label, summary, **fields) -> dict:
    return {"label": label, **fields, "cd_mean": summary["cd_mean"], "f1_mean": summary["f1_mean"],
            "n": summary["n"], "cd_per_instance": summary["cd_per_instance"]}


# -- experiments ---------------------------------------------------------------

def evaluate_methods(ws: Workspace, seed: int, frac: float | None = None,
                     methods=("baseline", "bdm_b"), save: bool = False) -> list:
    rows = []
    for method in methods:
        clouds = ws.sample(method, seed, frac)
        if save:
            ws.save_samples(f"{method}_frac{frac if frac is not None else ws.cfg.data.pair_fraction:g}_seed{seed}",
                            clouds)
        rows.append(_row(method, ws.score(clouds, frac), method=method, seed=seed,
                         pair_fraction=ws.cfg.data.pair_fraction if frac is None else frac))
    return rows


def ablate_timing(ws: Workspace, seed: int = 0) -> list:
    rows = []
    for stages in TIMING_GRID:
        fs = fusion_schedule(ws.cfg, active_stages=list(stages))
        s = ws.score(ws.sample("bdm_b", seed, fs=fs))
        rows.append(_row("+".join(stages) or "none", s, early="early" in stages,
                         middle="middle" in stages, late="late" in stages))
    ws.write_table("ablate_timing", rows, {"seed": seed})
    return rows


def ablate_duration(ws: Workspace, seed: int = 0) -> list:
    rows = []
    for d in DURATION_GRID:
        fs = duration_schedule(ws.cfg, d)
        s = ws.score(ws.sample("bdm_b", seed, fs=fs))
        rows.append(_row(str(d), s, duration=d, interval=fs.interval))
    ws.write_table("ablate_duration", rows, {"seed": seed})
    return rows


def ablate_ratio(ws: Workspace, seed: int = 0) -> list:
    rows = []
    for r in RATIO_GRID:
        s = ws.score(ws.sample("bdm_b", seed, fs=fusion_schedule(ws.cfg, ratio=r)))
        rows.append(_row(f"{round(100 * r)}%", s, ratio=r))
    ws.write_table("ablate_ratio", rows, {"seed": seed})
    return rows


def compare_cfg(ws: Workspace, seed: int = 0) -> list:
    rows = []
    for w in ws.cfg.eval.cfg_weights:
        s = ws.score(ws.sample("cfg", seed, guidance_w=w))
        rows.append(_row(f"cfg w={w:g}", s, method="cfg", guidance_w=w))
    for method in ("bdm_b", "bdm_m"):
        rows.append(_row(method, ws.score(ws.sample(method, seed)), method=method, guidance_w=None))
    ws.write_table("compare_cfg", rows, {"seed": seed})
    return rows


def seed_variance(ws: Workspace, seed: int = 0, n_runs: int = SEED_VARIANCE_RUNS) -> dict:
    """BDM-B and baseline over ``n_runs`` initial noises (same trained models)."""
    base_es = ws.cfg.eval.eval_seed
    rows = []
    for k in range(n_runs):
        es = base_es + 1000 * (k + 1)
        for method in ("baseline", "bdm_b"):
            s = ws.score(ws.sample(method, seed, eval_seed=es))
            rows.append(_row(method, s, method=method, eval_seed=es))
    out = {}
    for method in ("baseline", "bdm_b"):
        cd = np.array([r["cd_mean"] for r in rows if r["method"] == method])
        f1 = np.array([r["f1_mean"] for r in rows if r["method"] == method])
        out[method] = {"cd_mean": float(cd.mean()), "cd_var": float(cd.var(ddof=1)),
                       "f1_mean": float(f1.mean()), "f1_var": float(f1.var(ddof=1)), "runs": len(cd)}
    ws.write_table("seed_variance", rows, {"seed": seed, "summary": out})
    return out


def langevin_demo(ws: Workspace, seed: int = 0, cfg: lv.LangevinConfig | None = None) -> dict:
    cfg = cfg or lv.LangevinConfig()
    prior = lv.AnalyticDensity.gaussian([0.0], 1.0)
    data = lv.AnalyticDensity.gaussian([2.0], 1.0)
    samples = lv.langevin_infer(prior, data, cfg, np.random.default_rng(seed))
    mean, var = lv.gaussian_product(prior, data)
    out = {"sample_mean": float(samples.mean()), "sample_var": float(samples.var()),
           "exact_mean": float(mean[0]), "exact_var": float(var[0]), "n_samples": int(len(samples))}
    lv.write_samples_csv(ws.out / "results" / "langevin_samples.csv", samples,
                         "prior N(0,1) x data-driven N(2,1); " + json.dumps(ws.provenance))
    ws.write_table("langevin_demo", [out])
    return out


# -- report --------------------------------------------------------------------

REPORT_TABLES = ("main", "ablate_timing", "ablate_duration", "ablate_ratio", "compare_cfg",
                 "seed_variance", "langevin_demo", "acceptance")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def report(out) -> str:
    """Plain-text summary of every table found under ``out/results``."""
    out = Path(out)
    res = out / "results"
    found = {n: json.loads((res / f"{n}.json").read_text())
             for n in REPORT_TABLES if (res / f"{n}.json").exists()}
    lines = []
    if not found:
        warnings.warn(f"{out}: no results found, report is empty")
        return ""
    missing = [n for n in REPORT_TABLES if n not in found]
    if missing:
        warnings.warn(f"{out}: partial run, missing tables {missing}")
        lines.append(f"partial run: missing {', '.join(missing)}")
        lines.append("")
    for name, doc in found.items():
        lines.append(f"== {name} (config {doc.get('config_hash')}, code {doc.get('code_version')})")
        rows = doc.get("rows", [])
        if rows:
            cols = [k for k in rows[0] if k != "cd_per_instance"]
            lines.append("  ".join(cols))
            for r in rows:
                lines.append("  ".join(_fmt(r.get(c)) for c in cols))
        if "summary" in doc:
            for k, v in sorted(doc["summary"].items()):
                lines.append(f"{k}: " + ", ".join(f"{a}={_fmt(b)}" for a, b in sorted(v.items())))
        lines.append("")
    text = "\n".join(lines)
    (out / "report.txt").write_text(text)
    return text


# -- acceptance pipeline -------------------------------------------------------

ACCEPTANCE_SEEDS = (0, 1, 2)
FULL_FRACTION = 1.0


def acceptance_pipeline(ws: Workspace, seeds=ACCEPTANCE_SEEDS) -> dict:
    """Train every model and run every study needed by the acceptance checks.

    Wall-clock time covers data generation, all training and all sweeps.
    """
    t0 = time.perf_counter()
    frac = ws.cfg.data.pair_fraction
    ws.gen_data()
    main = []
    for seed in seeds:
        log.warning("seed %d: training", seed)
        ws.prior(seed)
        ws.recon(seed, frac)
        ws.recon(seed, FULL_FRACTION)
        ws.merged(seed, frac)
        log.warning("seed %d: sampling", seed)
        main += evaluate_methods(ws, seed, frac, ("baseline", "bdm_b", "bdm_m"), save=seed == seeds[0])
        main += evaluate_methods(ws, seed, FULL_FRACTION, ("baseline", "bdm_b"))
    merge_meta = {s: dn.read_meta(ws.model_path("merge", s, frac)) for s in seeds}
    ws.write_table("main", main, {"merge_holdout": {str(s): [m["holdout_loss_before"], m["holdout_loss_after"]]
                                                    for s, m in merge_meta.items()}})
    s0 = seeds[0]
    log.warning("ablations")
    tables = {
        "ablate_ratio": ablate_ratio(ws, s0),
        "ablate_duration": ablate_duration(ws, s0),
        "ablate_timing": ablate_timing(ws, s0),
        "compare_cfg": compare_cfg(ws, s0),
    }
    sv = seed_variance(ws, s0)
    lg = langevin_demo(ws, s0)
    elapsed = time.perf_counter() - t0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "cd_per_instance"} for r in rows]
    return {"main": strip(main), **{k: strip(v) for k, v in tables.items()}, "seed_variance": sv,
            "langevin": lg, "merge_holdout": {str(s): [m["holdout_loss_before"], m["holdout_loss_after"]]
                                              for s, m in merge_meta.items()},
            "seconds": elapsed, "seeds": list(seeds), **ws.provenance}


def _cd(rows, method, frac, seed):
    (r,) = [r for r in rows if r["method"] == method and r["pair_fraction"] == frac and r["seed"] == seed]
    return r["cd_mean"]


def judge_pipeline(res: dict, frac: float = 0.1, budget_s: float = 3600.0) -> dict:
    """Pass/fail plus a one-line detail for each pipeline-level check (5-10)."""
    out = {}
    main, seeds = res["main"], res["seeds"]

    base = [_cd(main, "baseline", frac, s) for s in seeds]
    bdmb = [_cd(main, "bdm_b", frac, s) for s in seeds]
    base_full = [_cd(main, "baseline", FULL_FRACTION, s) for s in seeds]
    bdmb_full = [_cd(main, "bdm_b", FULL_FRACTION, s) for s in seeds]
    rel = float(np.mean([(b - x) / b for b, x in zip(base, bdmb)]))
    rel_full = float(np.mean([(b - x) / b for b, x in zip(base_full, bdmb_full)]))
    wins = sum(x < b for b, x in zip(base, bdmb))
    out[5] = (wins == len(seeds) and rel > rel_full,
              f"BDM-B beats baseline in {wins}/{len(seeds)} seeds "
              f"(baseline {np.round(base, 3).tolist()}, BDM-B {np.round(bdmb, 3).tolist()}); "
              f"relative gain {rel:+.4f} at {frac:g} vs {rel_full:+.4f} at {FULL_FRACTION:g}")

    cd = {r["ratio"]: r["cd_mean"] for r in res["ablate_ratio"]}
    strict = all(cd[0.5] <= v for k, v in cd.items() if k != 0.5)
    others = [v for k, v in cd.items() if k != 1.0]
    fallback = (min(cd[0.25], cd[0.5]) < cd[0.0] and all(cd[1.0] >= 1.2 * v for v in others))
    out[6] = (strict or fallback, "ratio CD " + ", ".join(f"{k:g}:{v:.3f}" for k, v in sorted(cd.items()))
              + f"; 0.5 optimal={strict}, fallback={fallback}")

    dur = {r["duration"]: r["cd_mean"] for r in res["ablate_duration"]}
    ok = all(v < dur[0] for k, v in dur.items() if k >= 1)
    out[7] = (ok, "duration CD " + ", ".join(f"{k}:{v:.3f}" for k, v in sorted(dur.items())))

    bdmm = [_cd(main, "bdm_m", frac, s) for s in seeds]
    mw = sum(x < b for b, x in zip(base, bdmm))
    out[8] = (mw >= 2, f"BDM-M beats baseline in {mw}/{len(seeds)} seeds (BDM-M {np.round(bdmm, 3).tolist()})")

    sv = res["seed_variance"]
    ok = math.isfinite(sv["bdm_b"]["cd_var"]) and sv["bdm_b"]["cd_mean"] < sv["baseline"]["cd_mean"]
    out[9] = (ok, f"over {sv['bdm_b']['runs']} noises: BDM-B CD {sv['bdm_b']['cd_mean']:.3f} "
                  f"(var {sv['bdm_b']['cd_var']:.2e}) vs baseline {sv['baseline']['cd_mean']:.3f} "
                  f"(var {sv['baseline']['cd_var']:.2e})")

    out[10] = (res["seconds"] < budget_s, f"pipeline wall time {res['seconds'] / 60:.1f} min")
    return out
