"""Consolidated summary: one row per analysis task, top-k pathways per row."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Summary:
    rows: list[dict] = field(default_factory=list)
    inputs: list[str] = field(default_factory=list)
    text: str = ""
    tsv: str = ""


def _load(out: Path, rel: str):
    p = out / rel
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


def _top(order, scores, ids, names, k):
    return [{"rank": r + 1, "pathway_id": ids[i], "name": names[i], "score": float(scores[i])}
            for r, i in enumerate(order[:k])]


def _ascending(scores):
    return sorted(range(len(scores)), key=lambda i: (scores[i], i))


def _descending(scores):
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def _stability_rows(label, body, ids, names, k):
    nodes = body["stability"]["nodes"]
    ps = [n["ps"] for n in nodes]
    rows = [
        {"task": f"{label}: most stable (lowest PS)", "top": _top(_ascending(ps), ps, ids, names, k)},
        {"task": f"{label}: least stable (highest PS)", "top": _top(_descending(ps), ps, ids, names, k)},
    ]
    if nodes and nodes[0]["gps"] is not None:
        gps = [n["gps"] for n in nodes]
        rows.append({"task": f"{label}: least stable (highest GPS)", "top": _top(_descending(gps), gps, ids, names, k)})
    bif = body["bifurcation"]
    flagged = [(n["t_star"], i) for i, n in enumerate(bif["nodes"]) if n["t_star"] is not None]
    flagged.sort()
    top = [{"rank": r + 1, "pathway_id": ids[i], "name": names[i], "score": float(t)}
           for r, (t, i) in enumerate(flagged[:k])]
    t_star = bif["t_star"]
    note = "none detected" if t_star is None else f"t* = {t_star} via {', '.join(bif['conditions'])}"
    rows.append({"task": f"{label}: point of no return ({note})", "top": top, "t_star": t_star,
                 "conditions": bif["conditions"], "thresholds": bif["thresholds"]})
    return rows


def build_summary(out, cfg) -> Summary:
    out = Path(out)
    k = cfg.report.top_k
    summary = Summary()
    graphs = _load(out, "graphs/graphs.json")
    if graphs is None:
        raise FileNotFoundError("graphs/graphs.json not found; nothing to report")
    ids, names = graphs["pathway_ids"], graphs["pathway_names"]
    summary.inputs.append("graphs/graphs.json")

    reg = _load(out, "regress/regression.json")
    if reg is not None:
        summary.inputs.append("regress/regression.json")
        r = reg["ranking"]
        summary.rows.append({"task": "disease-sensitive pathways",
                             "top": _top(r["order"], r["scores"], ids, names, k)})

    gpa = _load(out, "gpa/trajectory.json")
    if gpa is not None:
        summary.inputs.append("gpa/trajectory.json")
        tr = gpa["trajectory"]
        summary.rows.append({"task": f"pseudotime trajectory ({len(tr['indices'])} graphs, "
                                     f"{len(tr['transition_pairs'])} stage transitions)", "top": [],
                             "trajectory": tr["subject_ids"]})

    tg = _load(out, "tgcn/transitions.json")
    if tg is not None:
        summary.inputs.append("tgcn/transitions.json")
        for info, entry in zip(tg["pairs"], tg["sensitivity"]["pairs"]):
            s0, s1 = info["stages"]
            top = [{"rank": e["rank"], "pathway_id": e["pathway_id"], "name": names[e["index"]],
                    "score": e["score"]} for e in entry["lag"]["top"]]
            summary.rows.append({"task": f"stage change {s0}->{s1} ({info['subjects'][0]} -> "
                                         f"{info['subjects'][1]})", "top": top})

    for stage, label in (("sde", "SDE"), ("sde_graph", "graph SDE")):
        body = _load(out, f"{stage}/sde.json")
        if body is not None:
            summary.inputs.append(f"{stage}/sde.json")
            summary.rows.extend(_stability_rows(label, body, ids, names, k))

    summary.text = render_text(summary.rows, k)
    summary.tsv = render_tsv(summary.rows)
    return summary


def render_text(rows, k) -> str:
    width = max([len(r["task"]) for r in rows] + [4])
    lines = [f"{'Task'.ljust(width)} | Top-{k} pathways", "-" * (width + 3 + 40)]
    for r in rows:
        cells = [f"{e['rank']}. {e['pathway_id']} {e['name']} ({e['score']:.4g})" for e in r["top"]]
        if not cells:
            cells = ["-"]
        lines.append(f"{r['task'].ljust(width)} | {cells[0]}")
        lines.extend(f"{''.ljust(width)} | {c}" for c in cells[1:])
    return "\n".join(lines) + "\n"


def render_tsv(rows) -> str:
    lines = ["task\trank\tpathway_id\tname\tscore"]
    for r in rows:
        for e in r["top"]:
            lines.append(f"{r['task']}\t{e['rank']}\t{e['pathway_id']}\t{e['name']}\t{float(e['score'])!r}")
    return "\n".join(lines) + "\n"
