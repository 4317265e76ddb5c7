import warnings

import numpy as np
import pytest

from pathgpa.graphs import build_dataset, load_archive
from pathgpa.synthetic import (GroundTruth, LinearDrift, SynthesisConfig, default_switch_drifts, generate_dataset,
                               generate_ou_paths, generate_regime_switch, full_scale_config)


def test_archive_is_byte_identical_for_same_seed(tmp_path):
    cfg = SynthesisConfig(n_subjects=10, n_genes=100, n_pathways=6, size_range=(4, 10), seed=7)
    generate_dataset(cfg, tmp_path / "a")
    generate_dataset(cfg, tmp_path / "b")
    for name in ("expression.tsv", "catalog.tsv", "severity.tsv", "ground_truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_archive_loads_cleanly(tmp_path, caplog):
    generate_dataset(SynthesisConfig(seed=1), tmp_path)
    table, catalog, severity = load_archive(tmp_path)
    ds = build_dataset(table, catalog, severity)
    assert len(ds) == 24 and len(catalog) == 20
    assert not [r for r in caplog.records if r.levelname == "WARNING"]
    truth = GroundTruth.load(tmp_path / "ground_truth.json")
    assert truth.planted == [1, 4]


def test_noiseless_severity_is_monotone_in_planted_mean():
    cfg = SynthesisConfig(planted=(2,), severity_noise=0.0, seed=4)
    table, catalog, severity, _ = generate_dataset(cfg)
    rows = [table.row_of(g) for g in catalog.pathways[2].members]
    agg = table.values[rows].mean(axis=0)
    y = np.array([severity[s] for s in table.subject_ids])
    order = np.argsort(agg)
    assert np.all(np.diff(y[order]) > 0)


def test_latent_time_drives_severity():
    _, _, severity, truth = generate_dataset(SynthesisConfig(seed=2))
    tau = np.array([truth.latent_time[s] for s in severity])
    y = np.array(list(severity.values()))
    assert np.corrcoef(tau, y)[0, 1] > 0.9


def test_full_scale_config_graph_size():
    cfg = full_scale_config(0)
    assert cfg.n_subjects == 23 and cfg.n_pathways == 343


@pytest.mark.parametrize("bad", [
    dict(planted=(25,)), dict(size_range=(1, 5)), dict(n_genes=40), dict(scenario="nope"),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        SynthesisConfig(**bad).validate()


def test_ou_noiseless_decay():
    p = generate_ou_paths(0.5, 0.0, 2, 5, seed=0, x0=1.0)
    np.testing.assert_allclose(p[:, 0, 0], np.exp(-0.5 * np.arange(5)))


def test_ou_stationary_variance():
    p = generate_ou_paths(0.5, 0.2, 200, 200, seed=0)
    assert abs(p[50:].var() - 0.04) < 0.004


def test_ou_deterministic():
    assert np.array_equal(generate_ou_paths(0.5, 0.2, 3, 10, 9), generate_ou_paths(0.5, 0.2, 3, 10, 9))


def test_regime_switch_departs_beyond_unit_distance():
    pre, post = default_switch_drifts(1)
    paths, t_star = generate_regime_switch(4, pre, post, 0.2, 100, 23, seed=0)
    assert t_star == 4
    assert np.mean(np.abs(paths[-1] - paths[4])) > 1.0


def test_regime_switch_last_step_warns():
    pre, post = default_switch_drifts(1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        generate_regime_switch(22, pre, post, 0.2, 5, 23, seed=0)
    assert any("last step" in str(x.message) for x in w)


def test_null_switch_stays_near_start():
    d = LinearDrift(0.5, 0.0)
    paths, _ = generate_regime_switch(4, d, d, 0.2, 200, 23, seed=0)
    assert np.mean(np.abs(paths[-1] - paths[4])) < 1.0
