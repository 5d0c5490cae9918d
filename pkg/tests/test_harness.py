import json
import warnings

import numpy as np
import pytest

from bdm import cli
from bdm import harness as hz
from bdm.config import ConfigError, ExperimentConfig, from_dict, load_config, save_config

TINY = {
    "data": {"n_shapes": 24, "pair_fraction": 0.5, "N": 16, "n_test": 6},
    "schedule": {"beta0": 1e-3, "betaT": 0.3, "T": 12},
    "prior": {"steps": 6, "batch": 4},
    "recon": {"steps": 6, "batch": 4},
    "merge": {"steps": 3, "batch": 4},
    "eval": {"n_eval": 4, "cfg_weights": [0.0, 1.0]},
}


@pytest.fixture
def tiny_cfg():
    return from_dict(TINY)


def test_defaults_are_desk_profile():
    c = ExperimentConfig().validate()
    assert (c.schedule.T, c.data.n_shapes, c.data.N) == (100, 1000, 128)
    assert c.prior.steps == c.recon.steps == 5000 and c.merge.steps == 1000
    assert not c.data.disjoint
    p = c.full_scale_schedule()
    assert (p.schedule.beta0, p.schedule.betaT, p.schedule.T) == (1e-5, 0.008, 1000)


@pytest.mark.parametrize("raw,key", [
    ({"data": {"n_shape": 3}}, "data.n_shape"),
    ({"bogus": 1}, "bogus"),
    ({"data": {"N": "128"}}, "data.N"),
    ({"data": {"pair_fraction": 0.0}}, "data.pair_fraction"),
    ({"fusion": {"active_stages": ["early", "mid"]}}, "fusion.active_stages"),
    ({"method": "magic"}, "method"),
    ({"prior": {"dtype": "float16"}}, "prior.dtype"),
    ({"schedule": []}, "schedule"),
])
def test_schema_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError) as e:
        from_dict(raw)
    assert e.value.key.rstrip(".") == key


def test_config_roundtrip_and_hash(tmp_path, tiny_cfg):
    save_config(tiny_cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == tiny_cfg and back.digest() == tiny_cfg.digest()
    assert from_dict({**TINY, "train_seed": 1}).digest() != tiny_cfg.digest()


def test_int_accepted_for_float():
    assert from_dict({"fusion": {"ratio": 1}}).fusion.ratio == 1.0


def test_pipeline_and_caching(tmp_path, tiny_cfg):
    ws = hz.Workspace(tmp_path, tiny_cfg)
    p = ws.prior(0)
    assert ws.model_path("prior", 0).exists()
    ws2 = hz.Workspace(tmp_path, tiny_cfg)
    assert ws2.prior(0).digest() == p.digest()  # loaded from cache
    rows = hz.evaluate_methods(ws, 0, methods=("baseline", "bdm_b", "bdm_m"))
    assert [r["method"] for r in rows] == ["baseline", "bdm_b", "bdm_m"]
    assert all(np.isfinite(r["cd_mean"]) for r in rows)
    meta = hz.dn.read_meta(ws.model_path("merge", 0, 0.5))
    assert meta["config_hash"] == tiny_cfg.digest()
    assert "holdout_loss_before" in meta


def test_missing_artifact(tmp_path, tiny_cfg):
    ws = hz.Workspace(tmp_path, tiny_cfg)
    with pytest.raises(hz.ArtifactError, match="prior"):
        ws.prior(0, train=False)


def test_ablation_grids(tmp_path, tiny_cfg):
    ws = hz.Workspace(tmp_path, tiny_cfg)
    assert [r["label"] for r in hz.ablate_ratio(ws)] == ["0%", "25%", "50%", "75%", "100%"]
    assert [r["duration"] for r in hz.ablate_duration(ws)] == [0, 1, 2, 4, 8, 16, 32]
    timing = hz.ablate_timing(ws)
    assert len(timing) == 6 and timing[0]["label"] == "none"
    sv = hz.seed_variance(ws, n_runs=3)
    assert sv["bdm_b"]["runs"] == 3 and np.isfinite(sv["bdm_b"]["cd_var"])
    csv_text = (tmp_path / "results" / "ablate_ratio.csv").read_text()
    assert csv_text.startswith(f"# config_hash={tiny_cfg.digest()}")
    doc = json.loads((tmp_path / "results" / "ablate_ratio.json").read_text())
    assert doc["code_version"] == hz.code_version()


def test_ratio_zero_row_equals_baseline(tmp_path, tiny_cfg):
    ws = hz.Workspace(tmp_path, tiny_cfg)
    rows = hz.ablate_ratio(ws)
    base = hz.evaluate_methods(ws, 0, methods=("baseline",))[0]
    dur = hz.ablate_duration(ws)
    assert rows[0]["cd_per_instance"] == base["cd_per_instance"]
    assert dur[0]["cd_per_instance"] == base["cd_per_instance"]


def test_ablation_rerun_identical(tmp_path, tiny_cfg):
    a = hz.ablate_ratio(hz.Workspace(tmp_path / "a", tiny_cfg))
    b = hz.ablate_ratio(hz.Workspace(tmp_path / "b", tiny_cfg))
    assert a == b


def test_report_empty_directory_warns(tmp_path):
    (tmp_path / "results").mkdir()
    with pytest.warns(UserWarning, match="no results"):
        assert hz.report(tmp_path) == ""


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_report_identical_runs(tmp_path, tiny_cfg):
    bodies = []
    for name in ("a", "b"):
        ws = hz.Workspace(tmp_path / name, tiny_cfg)
        hz.ablate_ratio(ws)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bodies.append(hz.report(tmp_path / name))
    assert bodies[0] == bodies[1] and "ablate_ratio" in bodies[0]
    with pytest.warns(UserWarning, match="partial"):
        hz.report(tmp_path / "a")


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(TINY))
    out = str(tmp_path / "run")
    base = ["--config", str(cfg_path), "--out", out]
    assert cli.main(["train-merge", *base]) == 3  # parents not trained yet
    assert cli.main(["gen-data", *base]) == 0
    assert (tmp_path / "run" / "data" / "frac0.5" / "manifest.json").exists()
    for cmd in ("train-prior", "train-recon", "train-merge", "sample", "evaluate", "ablate-ratio"):
        assert cli.main([cmd, *base]) == 0, cmd
    assert len(list((tmp_path / "run" / "samples" / "bdm_b_seed0").glob("*.xyz"))) == 4
    capsys.readouterr()
    assert cli.main(["report", "--out", out]) == 0
    assert "ablate_ratio" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"n_shapez": 1}}))
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "data.n_shapez" in capsys.readouterr().err


def test_langevin_demo(tmp_path):
    from bdm import langevin as lv
    ws = hz.Workspace(tmp_path, ExperimentConfig())
    out = hz.langevin_demo(ws, cfg=lv.LangevinConfig(steps=3000, n_chains=500, thin=100))
    assert out["exact_mean"] == 1.0 and out["exact_var"] == 0.5
    assert abs(out["sample_mean"] - 1.0) < 0.1
    assert (tmp_path / "results" / "langevin_samples.csv").exists()
