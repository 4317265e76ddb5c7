"""Pathway graphs from an expression table and a pathway catalog.

Each subject becomes one graph whose nodes are pathways.  Node ``i`` carries
the subject's expression of pathway ``i``'s member genes, placed at their
positions in the gene universe (the union of all catalog members) and zero
elsewhere.  Two pathways are connected when their member sets overlap; the
connectivity is shared by every subject while edge weights come from a unit
Gaussian kernel on the node feature rows.

File formats (tab separated, UTF-8):

* expression: header ``gene_id<TAB>subject...``, then one row per gene.
* catalog: ``pathway_id<TAB>name<TAB>gene<TAB>gene...`` per pathway.
* severity: ``subject_id<TAB>value`` per line.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EXPRESSION_FILE = "expression.tsv"
CATALOG_FILE = "catalog.tsv"
SEVERITY_FILE = "severity.tsv"


class FormatError(ValueError):
    """Malformed input file; the message names the offending location."""


@dataclass
class ExpressionTable:
    gene_ids: list[str]
    subject_ids: list[str]
    values: np.ndarray  # genes x subjects

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.gene_ids), len(self.subject_ids)):
            raise FormatError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.gene_ids)} genes x {len(self.subject_ids)} subjects"
            )
        seen = set()
        for g in self.gene_ids:
            if g in seen:
                raise FormatError(f"duplicate gene id {g!r}")
            seen.add(g)
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise FormatError("duplicate subject id in expression table")
        if not np.all(np.isfinite(self.values)):
            raise FormatError("expression table has missing or non-finite cells")
        if np.any(self.values < 0):
            r, c = np.argwhere(self.values < 0)[0]
            raise FormatError(
                f"negative expression for gene {self.gene_ids[r]!r}, subject {self.subject_ids[c]!r}"
            )
        self._row = {g: k for k, g in enumerate(self.gene_ids)}

    def row_of(self, gene: str) -> int | None:
        return self._row.get(gene)

    def column(self, subject: str) -> np.ndarray:
        return self.values[:, self.subject_ids.index(subject)]


@dataclass(frozen=True)
class Pathway:
    pathway_id: str
    name: str
    members: tuple[str, ...]


@dataclass
class PathwayCatalog:
    pathways: list[Pathway]

    def __post_init__(self):
        if not self.pathways:
            raise FormatError("catalog is empty")
        ids = set()
        for p in self.pathways:
            if p.pathway_id in ids:
                raise FormatError(f"duplicate pathway id {p.pathway_id!r}")
            ids.add(p.pathway_id)
            if len(set(p.members)) < 2:
                raise FormatError(f"pathway {p.pathway_id!r} has fewer than 2 member genes")

    def __len__(self):
        return len(self.pathways)

    @property
    def ids(self) -> list[str]:
        return [p.pathway_id for p in self.pathways]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.pathways]

    def universe(self) -> list[str]:
        """Union of member genes, in order of first appearance."""
        seen: dict[str, None] = {}
        for p in self.pathways:
            for g in p.members:
                seen.setdefault(g, None)
        return list(seen)


@dataclass
class PathwayGraph:
    subject_id: str
    features: np.ndarray  # N x d
    weights: np.ndarray  # N x N
    mask: np.ndarray  # N x N bool, shared across subjects
    severity: float

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


@dataclass
class GraphDataset:
    graphs: list[PathwayGraph]
    pathway_ids: list[str]
    pathway_names: list[str]
    genes: list[str]
    settings: dict = field(default_factory=dict)
    missing_genes: int = 0

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("dataset has no graphs")
        ref = self.graphs[0]
        for g in self.graphs[1:]:
            if g.features.shape != ref.features.shape:
                raise ValueError(f"graph {g.subject_id!r} has feature shape {g.features.shape}")
            if not np.array_equal(g.mask, ref.mask):
                raise ValueError(f"graph {g.subject_id!r} does not share the adjacency mask")

    def __len__(self):
        return len(self.graphs)

    @property
    def mask(self) -> np.ndarray:
        return self.graphs[0].mask

    @property
    def subject_ids(self) -> list[str]:
        return [g.subject_id for g in self.graphs]

    @property
    def severity(self) -> np.ndarray:
        return np.array([g.severity for g in self.graphs])

    @property
    def features(self) -> np.ndarray:
        return np.stack([g.features for g in self.graphs])

    @property
    def weights(self) -> np.ndarray:
        return np.stack([g.weights for g in self.graphs])

    def subset(self, index) -> "GraphDataset":
        return GraphDataset(
            [self.graphs[i] for i in index], self.pathway_ids, self.pathway_names,
            self.genes, dict(self.settings), self.missing_genes,
        )


# --- file IO -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def load_expression(path) -> ExpressionTable:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty expression file")
    header = lines[0].split("\t")
    subjects = header[1:]
    genes: list[str] = []
    rows = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        gene = cells[0]
        if gene in seen:
            raise FormatError(f"{path}:{lineno}: duplicate gene id {gene!r} (first at line {seen[gene]})")
        seen[gene] = lineno
        if len(cells) - 1 != len(subjects):
            raise FormatError(
                f"{path}:{lineno}: expected {len(subjects)} values for gene {gene!r}, got {len(cells) - 1}"
            )
        row = []
        for col, cell in enumerate(cells[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: non-numeric value {cell!r} for gene {gene!r}, subject {subjects[col]!r}"
                ) from None
            if not np.isfinite(v):
                raise FormatError(f"{path}:{lineno}: non-finite value for gene {gene!r}, subject {subjects[col]!r}")
            if v < 0:
                raise FormatError(f"{path}:{lineno}: negative value {v} for gene {gene!r}, subject {subjects[col]!r}")
            row.append(v)
        genes.append(gene)
        rows.append(row)
    values = np.array(rows, dtype=float).reshape(len(genes), len(subjects))
    return ExpressionTable(genes, subjects, values)


def write_expression(table: ExpressionTable, path) -> None:
    out = ["\t".join(["gene_id", *table.subject_ids])]
    for g, row in zip(table.gene_ids, table.values):
        out.append("\t".join([g, *(_fmt(v) for v in row)]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_catalog(path) -> PathwayCatalog:
    path = Path(path)
    pathways = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) < 4:
            raise FormatError(f"{path}:{lineno}: need pathway_id, name and at least 2 genes")
        pathways.append(Pathway(cells[0], cells[1], tuple(cells[2:])))
    return PathwayCatalog(pathways)


def write_catalog(catalog: PathwayCatalog, path) -> None:
    lines = ["\t".join([p.pathway_id, p.name, *p.members]) for p in catalog.pathways]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_severity(path) -> dict[str, float]:
    path = Path(path)
    out: dict[str, float] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'subject_id<TAB>severity'")
        try:
            out[cells[0]] = float(cells[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric severity {cells[1]!r}") from None
    return out


def write_severity(severity: dict[str, float], path) -> None:
    lines = [f"{s}\t{_fmt(v)}" for s, v in severity.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_archive(directory):
    d = Path(directory)
    for name in (EXPRESSION_FILE, CATALOG_FILE, SEVERITY_FILE):
        if not (d / name).exists():
            raise FileNotFoundError(f"dataset archive {d} is missing {name}")
    return load_expression(d / EXPRESSION_FILE), load_catalog(d / CATALOG_FILE), load_severity(d / SEVERITY_FILE)


def write_archive(directory, table, catalog, severity) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_expression(table, d / EXPRESSION_FILE)
    write_catalog(catalog, d / CATALOG_FILE)
    write_severity(severity, d / SEVERITY_FILE)


# --- construction ------------------------------------------------------------


def _member_positions(table, catalog, universe):
    """Per pathway: (universe columns, table rows) for genes present in the table."""
    col = {g: k for k, g in enumerate(universe)}
    out = []
    missing = 0
    for p in catalog.pathways:
        cols, rows = [], []
        for g in dict.fromkeys(p.members):
            r = table.row_of(g)
            if r is None:
                missing += 1
                continue
            cols.append(col[g])
            rows.append(r)
        out.append((np.array(cols, dtype=int), np.array(rows, dtype=int)))
    return out, missing


def build_node_features(table: ExpressionTable, catalog: PathwayCatalog, subject, universe=None,
                        values=None):
    """Feature matrix (N x d) for one subject and the count of imputed genes.

    ``values`` overrides the subject's expression column (used for transformed
    copies of the table).
    """
    universe = catalog.universe() if universe is None else universe
    column = table.column(subject) if values is None else np.asarray(values, dtype=float)
    positions, missing = _member_positions(table, catalog, universe)
    x = np.zeros((len(catalog), len(universe)))
    for i, (cols, rows) in enumerate(positions):
        x[i, cols] = column[rows]
    if missing:
        log.warning("%d catalog gene memberships absent from expression table; imputed as zero", missing)
    return x, missing


def build_adjacency_mask(catalog: PathwayCatalog) -> np.ndarray:
    """Boolean mask with an edge wherever two pathways share a gene."""
    n = len(catalog)
    index: dict[str, list[int]] = {}
    for i, p in enumerate(catalog.pathways):
        for g in set(p.members):
            index.setdefault(g, []).append(i)
    mask = np.zeros((n, n), dtype=bool)
    for owners in index.values():
        if len(owners) > 1:
            o = np.array(owners)
            mask[np.ix_(o, o)] = True
    np.fill_diagonal(mask, False)
    return mask


def compute_edge_weights(x, mask, chunk: int = 2048) -> np.ndarray:
    """W[i,j] = exp(-||x_i - x_j||^2) on masked pairs, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n = x.shape[0]
    w = np.zeros((n, n))
    iu, ju = np.nonzero(np.triu(mask, 1))
    for start in range(0, iu.size, chunk):
        i, j = iu[start:start + chunk], ju[start:start + chunk]
        diff = x[i] - x[j]
        w[i, j] = np.exp(-np.einsum("ij,ij->i", diff, diff))
    return w + w.T


def normalize_adjacency(w, exponent: float = -0.5) -> np.ndarray:
    """D^e (W + I) D^e with D the degree matrix of W + I.

    ``exponent=-0.5`` is the usual symmetric GCN normalization; ``+0.5``
    gives the positive-exponent variant.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim < 2 or w.shape[-1] != w.shape[-2]:
        raise ValueError(f"adjacency must be square, got {w.shape}")
    if np.any(w < 0):
        raise ValueError("adjacency must be nonnegative")
    a = w + np.eye(w.shape[-1])
    deg = a.sum(axis=-1)
    s = deg**exponent
    return s[..., :, None] * a * s[..., None, :]


def laplacian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.diag(w.sum(axis=1)) - w


def _kernel_inputs(table: ExpressionTable, log1p: bool, standardize: bool) -> np.ndarray:
    vals = np.log1p(table.values) if log1p else table.values.copy()
    if standardize:
        mu = vals.mean(axis=1, keepdims=True)
        sd = vals.std(axis=1, keepdims=True)
        vals = (vals - mu) / np.where(sd > 0, sd, 1.0)
    return vals


def build_dataset(table: ExpressionTable, catalog: PathwayCatalog, severity: dict[str, float],
                  log1p: bool = False, standardize: bool = False) -> GraphDataset:
    """One graph per subject that has a severity label.

    ``log1p`` and ``standardize`` only change the rows fed to the edge-weight
    kernel; node features stay on the table's scale.
    """
    universe = catalog.universe()
    mask = build_adjacency_mask(catalog)
    kernel_vals = _kernel_inputs(table, log1p, standardize)
    positions, missing = _member_positions(table, catalog, universe)
    if missing:
        log.warning("%d catalog gene memberships absent from expression table; imputed as zero", missing)
    graphs = []
    unknown = [s for s in severity if s not in table.subject_ids]
    if unknown:
        raise FormatError(f"severity given for unknown subjects: {unknown[:5]}")
    for k, subject in enumerate(table.subject_ids):
        if subject not in severity:
            log.warning("subject %s has no severity label; skipped", subject)
            continue
        x = np.zeros((len(catalog), len(universe)))
        xk = np.zeros_like(x) if (log1p or standardize) else x
        for i, (cols, rows) in enumerate(positions):
            x[i, cols] = table.values[rows, k]
            if xk is not x:
                xk[i, cols] = kernel_vals[rows, k]
        w = compute_edge_weights(xk, mask)
        graphs.append(PathwayGraph(subject, x, w, mask, float(severity[subject])))
    settings = {"log1p": log1p, "standardize": standardize, "missing_genes": missing}
    return GraphDataset(graphs, catalog.ids, catalog.names, universe, settings, missing)
