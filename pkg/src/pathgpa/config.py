"""Pipeline configuration: nested dataclasses loaded from YAML or JSON.

Unknown keys are rejected at every level.  Defaults follow the published
hyperparameters wherever they exist.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    archive: str | None = None
    n_subjects: int = 24
    n_genes: int = 500
    n_pathways: int = 50
    planted: list[int] = field(default_factory=lambda: [1, 4])
    scenario: str = "ou"


@dataclass
class GraphSection:
    log1p: bool = False
    standardize: bool = False
    adjacency_exponent: float = -0.5


@dataclass
class StageToggles:
    regress: bool = True
    gpa: bool = True
    tgcn: bool = True
    sde: bool = True
    sde_graph: bool = True


@dataclass
class RegressSection:
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    runs: int = 10
    train_frac: float = 0.7
    test_frac: float = 0.2


@dataclass
class GpaSection:
    reducer: str = "pca"
    n_neighbors: int = 15
    min_dist: float = 0.1
    umap_epochs: int = 200
    knn_k: int = 10
    n_stages: int | str = 4


@dataclass
class TgcnSection:
    hidden: int = 96
    lr: float = 0.01
    weight_decay: float = 1e-3
    epochs: int = 200
    runs: int = 10
    train_frac: float = 0.7


@dataclass
class SdeSection:
    reduce_dim: int = 8
    hidden: int = 16
    depth: int = 2
    lr: float = 1e-2
    epochs: int = 500
    diffusion_floor: float = 1e-4
    node_embedding: int = 0
    coupling: str = "identity"
    C: float = 1.0
    delta: float = 0.1
    eps_grad: float = 0.05
    window: int = 3
    n_samples: int = 256
    horizon: int = 10
    monotone_tol: float = 0.05
    substep: float = 0.1
    eps_stable: float = 1e-3
    growth_factor: float = 10.0
    gps_lambda: float = 1.0
    dirichlet_placement: str = "time-average"


@dataclass
class ReportSection:
    top_k: int = 5
    plots: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    graphs: GraphSection = field(default_factory=GraphSection)
    stages: StageToggles = field(default_factory=StageToggles)
    regress: RegressSection = field(default_factory=RegressSection)
    gpa: GpaSection = field(default_factory=GpaSection)
    tgcn: TgcnSection = field(default_factory=TgcnSection)
    sde: SdeSection = field(default_factory=SdeSection)
    report: ReportSection = field(default_factory=ReportSection)

    def validate(self):
        s = self.stages
        if s.tgcn and not s.gpa:
            raise ConfigError("stage 'tgcn' needs stage 'gpa', which is disabled")
        if (s.sde or s.sde_graph) and not s.gpa:
            raise ConfigError("stage 'sde' needs stage 'gpa', which is disabled")
        if self.gpa.reducer not in ("pca", "umap-minimal"):
            raise ConfigError(f"gpa.reducer must be 'pca' or 'umap-minimal', got {self.gpa.reducer!r}")
        if not (self.gpa.n_stages == "auto" or (isinstance(self.gpa.n_stages, int) and self.gpa.n_stages >= 1)):
            raise ConfigError("gpa.n_stages must be a positive integer or 'auto'")
        if self.sde.coupling not in ("identity", "gradient", "learned"):
            raise ConfigError(f"unknown sde.coupling {self.sde.coupling!r}")
        if self.sde.dirichlet_placement not in ("time-average", "final"):
            raise ConfigError(f"unknown sde.dirichlet_placement {self.sde.dirichlet_placement!r}")
        for name, frac in (("regress.train_frac", self.regress.train_frac), ("tgcn.train_frac", self.tgcn.train_frac)):
            if not 0 < frac < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        return self

    def as_dict(self) -> dict:
        return asdict(self)

    def section_hash(self, *names) -> str:
        d = self.as_dict()
        payload = {n: d[n] for n in names}
        payload["seed"] = self.seed
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data, path="config"):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = _coerce(value, default, f"{path}.{name}")
    return cls(**kwargs)


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, list) and isinstance(value, list):
        return value
    if default is None or isinstance(value, type(default)):
        return value
    if path.endswith("n_stages") and value == "auto":
        return value
    raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")


def config_from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data or {}).validate()


def load_config(path) -> PipelineConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"{path}: cannot parse config: {err}") from None
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides) -> PipelineConfig:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    d = cfg.as_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: unknown section {p!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(d)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False)
