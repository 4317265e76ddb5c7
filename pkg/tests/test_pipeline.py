import json
import shutil

import pytest
import yaml

from pathgpa.cli import main
from pathgpa.config import config_from_dict
from pathgpa.pipeline import MissingArtifactError, Pipeline, StageError

TINY = {
    "seed": 1,
    "data": {"n_subjects": 16, "n_genes": 120, "n_pathways": 8},
    "regress": {"epochs": 5, "runs": 1, "hidden": 8},
    "tgcn": {"epochs": 5, "runs": 1, "hidden": 8},
    "gpa": {"n_stages": 3},
    "sde": {"epochs": 5, "hidden": 4, "n_samples": 8, "horizon": 3, "reduce_dim": 2},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    manifest = Pipeline(config_from_dict(TINY), out).run()
    return out, manifest


def test_full_run_lists_artifacts(tiny_run):
    out, manifest = tiny_run
    assert manifest["status"] == "ok"
    assert len(manifest["artifacts"]) >= 7
    for f in manifest["artifacts"]:
        assert (out / f).exists()
    for name in ("regress/sensitivity.tsv", "gpa/trajectory.json", "tgcn/transitions.tsv", "sde/stability.tsv",
                 "sde/bifurcation.tsv", "gpa/embedding.svg", "report/summary.txt"):
        assert name in manifest["artifacts"]


def test_outputs_embed_config_and_thresholds(tiny_run):
    out, _ = tiny_run
    body = json.loads((out / "sde" / "sde.json").read_text())
    assert body["config"]["sde"]["C"] == 1.0
    assert body["bifurcation"]["thresholds"]["delta"] == body["config"]["sde"]["delta"]
    traj = json.loads((out / "gpa" / "trajectory.json").read_text())
    graphs = json.loads((out / "graphs" / "graphs.json").read_text())
    sev = graphs["severity"]
    idx = traj["trajectory"]["indices"]
    assert idx[0] == sev.index(min(sev)) and idx[-1] == sev.index(max(sev))


def test_rerun_is_cached(tiny_run):
    out, _ = tiny_run
    before = {p: p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    manifest = Pipeline(config_from_dict(TINY), out).run()
    assert {e["status"] for e in manifest["stages"]} == {"cached"}
    after = {p: p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert before == after


def test_changed_section_recomputes_downstream_only(tiny_run, tmp_path):
    out, _ = tiny_run
    work = tmp_path / "w"
    shutil.copytree(out, work)
    cfg = dict(TINY, tgcn=dict(TINY["tgcn"], epochs=6))
    status = {e["stage"]: e["status"] for e in Pipeline(config_from_dict(cfg), work).run()["stages"]}
    assert status["gpa"] == "cached" and status["regress"] == "cached"
    assert status["tgcn"] == "ran" and status["report"] == "ran"


def test_missing_upstream_is_named(tmp_path):
    with pytest.raises(MissingArtifactError, match="gpa"):
        Pipeline(config_from_dict(TINY), tmp_path).run(["tgcn"])


def test_stage_failure_names_stage_and_keeps_prior_artifacts(tiny_run, tmp_path):
    out, _ = tiny_run
    work = tmp_path / "w"
    shutil.copytree(out, work)
    cfg = dict(TINY, sde=dict(TINY["sde"], reduce_dim=2, window=40))
    with pytest.raises(StageError, match="'sde'"):
        Pipeline(config_from_dict(cfg), work, force=False).run(["sde"])
    manifest = json.loads((work / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "sde"
    assert (work / "gpa" / "trajectory.json").exists()


def _write_cfg(tmp_path, data=TINY):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["nonsense"]) == 1
    assert main([]) == 1
    bad = _write_cfg(tmp_path, {"gpa": {"colour": 1}})
    assert main(["run", "--config", bad, "--out", str(tmp_path / "x")]) == 1
    dep = _write_cfg(tmp_path, {"stages": {"gpa": False}})
    assert main(["run", "--config", dep, "--out", str(tmp_path / "x")]) == 1
    assert main(["regress", "--config", _write_cfg(tmp_path), "--out", str(tmp_path / "empty")]) == 2
    assert "graphs" in capsys.readouterr().err


def test_cli_synth_is_deterministic(tmp_path):
    cfg = _write_cfg(tmp_path)
    for name in ("a", "b"):
        assert main(["synth", "--config", cfg, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("expression.tsv", "catalog.tsv", "severity.tsv", "ground_truth.json"):
        assert (tmp_path / "a" / "synth" / f).read_bytes() == (tmp_path / "b" / "synth" / f).read_bytes()


def test_cli_stagewise_matches_run(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = str(tmp_path / "s")
    for cmd in ("synth", "build-graphs", "gpa", "report"):
        assert main([cmd, "--config", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "pseudotime trajectory" in text
    traj = json.loads((tmp_path / "s" / "gpa" / "trajectory.json").read_text())
    assert traj["trajectory"]["endpoints"] == "severity"


def test_cli_external_archive_and_overrides(tiny_run, tmp_path):
    out, _ = tiny_run
    cfg = _write_cfg(tmp_path)
    args = ["build-graphs", "--config", cfg, "--archive", str(out / "synth"), "--out", str(tmp_path / "e"),
            "--set", "graphs.log1p=true"]
    assert main(args) == 0
    graphs = json.loads((tmp_path / "e" / "graphs" / "graphs.json").read_text())
    assert graphs["settings"]["log1p"] is True
    assert main(["gpa", "--config", cfg, "--archive", str(out / "synth"), "--out", str(tmp_path / "e"),
                 "--reducer", "umap-minimal"]) == 0


def test_cli_config_dump(capsys):
    assert main(["config", "--seed", "3"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["seed"] == 3
