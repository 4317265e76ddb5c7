"""Stage orchestration with persisted, cacheable artifacts.

Each stage writes into ``<out>/<stage>/`` and records a ``stage.json`` holding
a cache key (config section, seed, tool version and upstream keys) and the
files it produced.  A stage whose key and files are unchanged is skipped.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import PipelineConfig
from .gpa import GpaConfig, Trajectory, run_gpa
from .graphs import CATALOG_FILE, EXPRESSION_FILE, SEVERITY_FILE, build_dataset, load_archive
from .regression import RegressorConfig, sensitivity_scores, train_regressor
from .sde import (SdeConfig, Thresholds, detect_bifurcation, detect_graph_bifurcation, extract_node_trajectories,
                  fit_graph_sde, fit_sde, stability_report)
from .synthetic import SynthesisConfig, generate_dataset
from .tgcn import TemporalSequence, TgcnConfig, train_tgcn, transition_sensitivity

log = logging.getLogger(__name__)

STAGES = ("synth", "graphs", "regress", "gpa", "tgcn", "sde", "sde_graph", "report")
UPSTREAM = {
    "synth": (),
    "graphs": ("synth",),
    "regress": ("graphs",),
    "gpa": ("graphs",),
    "tgcn": ("gpa",),
    "sde": ("gpa",),
    "sde_graph": ("gpa",),
    "report": (),
}
SECTIONS = {
    "synth": ("data",),
    "graphs": ("graphs",),
    "regress": ("regress", "graphs"),
    "gpa": ("gpa",),
    "tgcn": ("tgcn", "graphs"),
    "sde": ("sde",),
    "sde_graph": ("sde",),
    "report": ("report",),
}
MANIFEST = "manifest.json"
RECORD = "stage.json"


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class MissingArtifactError(StageError):
    pass


def _dump_json(obj, path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _r(x) -> str:
    return repr(float(x))


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


class Pipeline:
    def __init__(self, config: PipelineConfig, out, force: bool = False):
        self.cfg = config
        self.out = Path(out)
        self.force = force
        self._dataset = None
        self.entries = []

    # --- bookkeeping -----------------------------------------------------

    def stage_dir(self, stage) -> Path:
        return self.out / stage

    def record(self, stage):
        p = self.stage_dir(stage) / RECORD
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def _upstream_keys(self, stage):
        keys = {}
        for up in self._upstream(stage):
            rec = self.record(up)
            if rec is None:
                raise MissingArtifactError(stage, f"missing upstream artifact '{up}/{RECORD}'; run '{up}' first")
            keys[up] = rec["key"]
        return keys

    def _upstream(self, stage):
        if stage == "graphs" and self.cfg.data.archive is not None:
            return ()
        if stage == "report":
            return tuple(s for s in ("regress", "gpa", "tgcn", "sde", "sde_graph") if self.record(s) is not None)
        return UPSTREAM[stage]

    def stage_key(self, stage) -> str:
        payload = {
            "version": __version__,
            "config": self.cfg.section_hash(*SECTIONS[stage]),
            "upstream": self._upstream_keys(stage),
        }
        if stage == "graphs":
            payload["archive"] = self._archive_digest()
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def archive_dir(self) -> Path:
        if self.cfg.data.archive is not None:
            return Path(self.cfg.data.archive)
        return self.stage_dir("synth")

    def _archive_digest(self) -> str:
        h = hashlib.sha256()
        d = self.archive_dir()
        for name in (EXPRESSION_FILE, CATALOG_FILE, SEVERITY_FILE):
            p = d / name
            if not p.exists():
                raise MissingArtifactError("graphs", f"dataset archive {d} is missing {name}")
            h.update(p.read_bytes())
        return h.hexdigest()[:16]

    def _cached(self, stage, key):
        rec = self.record(stage)
        if self.force or rec is None or rec.get("key") != key:
            return None
        if all((self.out / f).exists() for f in rec["outputs"]):
            return rec
        return None

    # --- execution -------------------------------------------------------

    def enabled(self):
        s = self.cfg.stages
        order = ["synth"] if self.cfg.data.archive is None else []
        order.append("graphs")
        for name in ("regress", "gpa", "tgcn", "sde", "sde_graph"):
            if getattr(s, name):
                order.append(name)
        order.append("report")
        return order

    def run(self, stages=None) -> dict:
        """Run ``stages`` (default: all enabled ones) and write the manifest."""
        self.out.mkdir(parents=True, exist_ok=True)
        todo = list(stages) if stages is not None else self.enabled()
        failure = None
        for stage in todo:
            try:
                self.run_stage(stage)
            except StageError as err:
                failure = err
                break
        manifest = self.manifest(failure)
        _dump_json(manifest, self.out / MANIFEST)
        if failure is not None:
            raise failure
        return manifest

    def run_stage(self, stage):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        key = self.stage_key(stage)
        rec = self._cached(stage, key)
        if rec is not None:
            log.info("stage %s cached", stage)
            self.entries.append({"stage": stage, "status": "cached", "key": key, "inputs": rec["inputs"],
                                 "outputs": rec["outputs"], "seconds": 0.0, "warnings": rec["warnings"]})
            return rec
        d = self.stage_dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        stale = d / RECORD
        if stale.exists():
            stale.unlink()
        collector = _WarningCollector()
        root = logging.getLogger("pathgpa")
        root.addHandler(collector)
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                inputs, outputs = getattr(self, "_run_" + stage)(d)
        except StageError:
            raise
        except Exception as err:  # any module error halts the run with the stage named
            log.debug("stage %s failed", stage, exc_info=True)
            raise StageError(stage, f"{type(err).__name__}: {err}") from err
        finally:
            root.removeHandler(collector)
        seconds = time.perf_counter() - t0
        msgs = collector.messages + [str(w.message) for w in caught]
        rel = [str(Path(p).relative_to(self.out)) for p in outputs]
        rec = {"stage": stage, "key": key, "inputs": inputs, "outputs": rel, "warnings": msgs,
               "version": __version__}
        _dump_json(rec, d / RECORD)
        self.entries.append({"stage": stage, "status": "ran", "key": key, "inputs": inputs, "outputs": rel,
                             "seconds": round(seconds, 3), "warnings": msgs})
        return rec

    def manifest(self, failure=None) -> dict:
        cfg = self.cfg.as_dict()
        files = sorted({f for e in self.entries for f in e["outputs"]})
        return {
            "tool": "pathgpa",
            "version": __version__,
            "config_hash": hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16],
            "config": cfg,
            "status": "failed" if failure else "ok",
            "failed_stage": failure.stage if failure else None,
            "error": str(failure) if failure else None,
            "stages": self.entries,
            "artifacts": files,
            "warnings": [w for e in self.entries for w in e["warnings"]],
        }

    # --- shared state ----------------------------------------------------

    def dataset(self):
        if self._dataset is None:
            if self.record("graphs") is None:
                raise MissingArtifactError("graphs", "graphs have not been built; run 'build-graphs' first")
            table, catalog, severity = load_archive(self.archive_dir())
            g = self.cfg.graphs
            self._dataset = build_dataset(table, catalog, severity, g.log1p, g.standardize)
        return self._dataset

    def trajectory(self) -> Trajectory:
        p = self.stage_dir("gpa") / "trajectory.json"
        if not p.exists():
            raise MissingArtifactError("gpa", "missing upstream artifact 'gpa/trajectory.json'; run 'gpa' first")
        return Trajectory.from_dict(json.loads(p.read_text(encoding="utf-8"))["trajectory"])

    def _provenance(self, stage, extra=None):
        d = {"stage": stage, "seed": self.cfg.seed, "version": __version__, "config": self.cfg.as_dict()}
        d.update(extra or {})
        return d

    # --- stages ----------------------------------------------------------

    def _run_synth(self, d):
        c = self.cfg.data
        scfg = SynthesisConfig(n_subjects=c.n_subjects, n_genes=c.n_genes, n_pathways=c.n_pathways,
                               planted=tuple(c.planted), scenario=c.scenario, seed=self.cfg.seed)
        generate_dataset(scfg, d)
        files = [d / n for n in (EXPRESSION_FILE, CATALOG_FILE, SEVERITY_FILE, "ground_truth.json")]
        return [], files

    def _run_graphs(self, d):
        self._dataset = None
        table, catalog, severity = load_archive(self.archive_dir())
        g = self.cfg.graphs
        ds = build_dataset(table, catalog, severity, g.log1p, g.standardize)
        self._dataset = ds
        lines = ["subject\tsource\ttarget\tweight"]
        iu, ju = np.nonzero(np.triu(ds.mask, 1))
        for gr in ds.graphs:
            for i, j in zip(iu, ju):
                lines.append(f"{gr.subject_id}\t{ds.pathway_ids[i]}\t{ds.pathway_ids[j]}\t{_r(gr.weights[i, j])}")
        edges = d / "edges.tsv"
        edges.write_text("\n".join(lines) + "\n", encoding="utf-8")
        nodes = d / "nodes.tsv"
        rows = ["subject\tpathway_id\tmean_expression"]
        for gr in ds.graphs:
            means = gr.features.sum(axis=1) / np.maximum((gr.features != 0).sum(axis=1), 1)
            rows.extend(f"{gr.subject_id}\t{p}\t{_r(v)}" for p, v in zip(ds.pathway_ids, means))
        nodes.write_text("\n".join(rows) + "\n", encoding="utf-8")
        summary = d / "graphs.json"
        _dump_json(self._provenance("graphs", {
            "n_graphs": len(ds), "n_nodes": len(ds.pathway_ids), "feature_dim": len(ds.genes),
            "subjects": ds.subject_ids, "severity": [float(v) for v in ds.severity],
            "pathway_ids": ds.pathway_ids, "pathway_names": ds.pathway_names, "settings": ds.settings,
            "n_edges": int(iu.size),
        }), summary)
        inputs = [str(self.archive_dir() / n) if self.cfg.data.archive else f"synth/{n}"
                  for n in (EXPRESSION_FILE, CATALOG_FILE, SEVERITY_FILE)]
        return inputs, [edges, nodes, summary]

    def _run_regress(self, d):
        ds = self.dataset()
        r = self.cfg.regress
        rcfg = RegressorConfig(hidden=r.hidden, dropout=r.dropout, lr=r.lr, weight_decay=r.weight_decay,
                               epochs=r.epochs, runs=r.runs, train_frac=r.train_frac, test_frac=r.test_frac,
                               adjacency_exponent=self.cfg.graphs.adjacency_exponent, seed=self.cfg.seed)
        model, record = train_regressor(ds, rcfg)
        ranking = sensitivity_scores(model, ds, {"seed": self.cfg.seed, "runs": r.runs,
                                                 "selected_run": record.selected_run})
        tsv = d / "sensitivity.tsv"
        tsv.write_text(ranking.to_tsv(), encoding="utf-8")
        js = d / "regression.json"
        _dump_json(self._provenance("regress", {"ranking": ranking.as_dict(), "training": record.as_dict()}), js)
        outputs = [tsv, js]
        if self.cfg.report.plots:
            names = [ds.pathway_names[i] for i in ranking.order]
            outputs.append(plotting.ranking_bars(names, ranking.scores[ranking.order], d / "sensitivity.svg",
                                                 "pathway sensitivity"))
        return ["graphs/graphs.json"], outputs

    def _run_gpa(self, d):
        ds = self.dataset()
        g = self.cfg.gpa
        res = run_gpa(ds, GpaConfig(g.reducer, g.n_neighbors, g.min_dist, g.umap_epochs, g.knn_k, g.n_stages,
                                    self.cfg.seed))
        emb = d / "embedding.tsv"
        lines = ["subject\tz1\tz2\tseverity\tstage"]
        for s, z, k in zip(ds.subject_ids, res.embedding.augmented, res.stages.labels):
            lines.append(f"{s}\t{_r(z[0])}\t{_r(z[1])}\t{_r(z[2])}\tstage{int(k)}")
        emb.write_text("\n".join(lines) + "\n", encoding="utf-8")
        traj = res.trajectory
        tsv = d / "trajectory.tsv"
        lines = ["pseudotime\tsubject\tgraph_index\tstage\tseverity\tstep_length"]
        for t, i in enumerate(traj.indices):
            step = _r(traj.step_lengths[t - 1]) if t > 0 else ""
            lines.append(f"{t}\t{ds.subject_ids[i]}\t{i}\t{traj.stages[t]}\t{_r(ds.severity[i])}\t{step}")
        tsv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tree = d / "tree.tsv"
        tree.write_text("source\ttarget\tlength\n" + "".join(
            f"{ds.subject_ids[i]}\t{ds.subject_ids[j]}\t{_r(w)}\n" for i, j, w in res.tree.edges), encoding="utf-8")
        js = d / "trajectory.json"
        _dump_json(self._provenance("gpa", {
            "trajectory": traj.as_dict(), "stages": res.stages.as_dict(), "length": traj.length,
            "embedding": {"method": res.embedding.method, "settings": res.embedding.settings},
        }), js)
        outputs = [emb, tsv, tree, js]
        if self.cfg.report.plots:
            outputs.append(plotting.embedding_scatter(res.embedding.reduced, res.stages.labels, traj.indices,
                                                      ds.severity, d / "embedding.svg"))
        return ["graphs/graphs.json"], outputs

    def _run_tgcn(self, d):
        ds = self.dataset()
        traj = self.trajectory()
        t = self.cfg.tgcn
        seq = TemporalSequence.from_trajectory(ds, traj.indices, self.cfg.graphs.adjacency_exponent)
        tcfg = TgcnConfig(t.hidden, t.lr, t.weight_decay, t.epochs, t.runs, t.train_frac,
                          self.cfg.graphs.adjacency_exponent, self.cfg.seed)
        model, record = train_tgcn(seq, tcfg)
        pairs = [tuple(p) for p in traj.transition_pairs]
        if not pairs:
            log.warning("trajectory stays in one stage; no transition pairs to analyse")
        sens = transition_sensitivity(model, seq, pairs, ds.pathway_ids, ds.pathway_names)
        k_top = self.cfg.report.top_k
        lines = ["pair\tfrom_subject\tto_subject\tfrom_stage\tto_stage\tinput\trank\tpathway_id\tname\tscore"]
        described = []
        for k, (t0, t1) in enumerate(pairs):
            info = {"pair": k, "steps": [t0, t1], "subjects": [traj.subject_ids[t0], traj.subject_ids[t1]],
                    "stages": [traj.stages[t0], traj.stages[t1]]}
            described.append(info)
            for which in ("lag", "current"):
                scores = sens.lag[k] if which == "lag" else sens.current[k]
                for r, i in enumerate(sens.ranking(k, which)):
                    lines.append(f"{k}\t{info['subjects'][0]}\t{info['subjects'][1]}\t{info['stages'][0]}\t"
                                 f"{info['stages'][1]}\t{which}\t{r + 1}\t{ds.pathway_ids[i]}\t"
                                 f"{ds.pathway_names[i]}\t{_r(scores[i])}")
        tsv = d / "transitions.tsv"
        tsv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        js = d / "transitions.json"
        _dump_json(self._provenance("tgcn", {"pairs": described, "sensitivity": sens.as_dict(k_top),
                                             "training": record.as_dict()}), js)
        outputs = [tsv, js]
        if self.cfg.report.plots:
            outputs.append(plotting.loss_curves(record.train_mse, d / "loss.svg", "train MSE"))
        return ["graphs/graphs.json", "gpa/trajectory.json"], outputs

    def _sde_parts(self):
        s = self.cfg.sde
        sde_cfg = SdeConfig(hidden=s.hidden, depth=s.depth, lr=s.lr, epochs=s.epochs,
                            diffusion_floor=s.diffusion_floor, node_embedding=s.node_embedding,
                            coupling=s.coupling, seed=self.cfg.seed)
        th = Thresholds(C=s.C, delta=s.delta, eps_grad=s.eps_grad, window=s.window, n_samples=s.n_samples,
                        horizon=s.horizon, monotone_tol=s.monotone_tol, substep=s.substep,
                        diffusion_floor=s.diffusion_floor, seed=self.cfg.seed)
        ds = self.dataset()
        traj_idx = self.trajectory().indices
        dim = min(s.reduce_dim, ds.features.shape[-1]) if s.reduce_dim else None
        return ds, extract_node_trajectories(ds, traj_idx, dim), sde_cfg, th

    def _write_sde(self, d, stage, model, fit_log, traj, report, bif, extra=None):
        s = self.cfg.sde
        stab_tsv = d / "stability.tsv"
        stab_tsv.write_text(report.to_tsv(), encoding="utf-8")
        bif_tsv = d / "bifurcation.tsv"
        bif_tsv.write_text(bif.to_tsv(), encoding="utf-8")
        js = d / "sde.json"
        body = {"model": model.describe(), "fit": fit_log.as_dict(), "stability": report.as_dict(),
                "bifurcation": bif.as_dict(), "thresholds": {"C": s.C, "delta": s.delta},
                "reduce_dim": traj.dim}
        body.update(extra or {})
        _dump_json(self._provenance(stage, body), js)
        outputs = [stab_tsv, bif_tsv, js]
        if self.cfg.report.plots:
            traces = np.array([n.trace for n in report.nodes]).T
            outputs.append(plotting.diffusion_traces(traces, report.node_ids, d / "diffusion.svg"))
        return outputs

    def _run_sde(self, d):
        s = self.cfg.sde
        _, traj, sde_cfg, th = self._sde_parts()
        model, fit_log = fit_sde(traj, sde_cfg)
        report = stability_report(model, traj, n_samples=s.n_samples, seed=self.cfg.seed,
                                  eps_stable=s.eps_stable, growth=s.growth_factor)
        bif = detect_bifurcation(model, traj, th)
        return ["graphs/graphs.json", "gpa/trajectory.json"], self._write_sde(d, "sde", model, fit_log, traj,
                                                                                report, bif)

    def _run_sde_graph(self, d):
        s = self.cfg.sde
        ds, traj, sde_cfg, th = self._sde_parts()
        a = ds.weights[self.trajectory().indices].mean(axis=0)
        model, fit_log = fit_graph_sde(traj, a, sde_cfg)
        report = stability_report(model, traj, a, lam=s.gps_lambda, placement=s.dirichlet_placement,
                                  n_samples=s.n_samples, seed=self.cfg.seed, eps_stable=s.eps_stable,
                                  growth=s.growth_factor)
        bif = detect_graph_bifurcation(model, traj, a, th)
        extra = {"adjacency": "mean edge weight over trajectory graphs"}
        return ["graphs/graphs.json", "gpa/trajectory.json"], self._write_sde(d, "sde_graph", model, fit_log,
                                                                                traj, report, bif, extra)

    def _run_report(self, d):
        from .reporting import build_summary

        summary = build_summary(self.out, self.cfg)
        txt = d / "summary.txt"
        txt.write_text(summary.text, encoding="utf-8")
        tsv = d / "summary.tsv"
        tsv.write_text(summary.tsv, encoding="utf-8")
        js = d / "summary.json"
        _dump_json(self._provenance("report", {"rows": summary.rows}), js)
        return summary.inputs, [txt, tsv, js]


def run_pipeline(config: PipelineConfig, out, force: bool = False, stages=None) -> dict:
    return Pipeline(config, out, force).run(stages)
