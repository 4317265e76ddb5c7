"""Command-line entry point: ``pathgpa <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import ConfigError, PipelineConfig, apply_overrides, config_from_dict, dump_config, load_config
from .pipeline import MissingArtifactError, Pipeline, StageError

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2

SUBCOMMANDS = {
    "synth": ["synth"],
    "build-graphs": ["graphs"],
    "regress": ["regress"],
    "gpa": ["gpa"],
    "tgcn": ["tgcn"],
    "sde": ["sde", "sde_graph"],
    "report": ["report"],
    "run": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", default="pathgpa-out", help="output directory (default: %(default)s)")
    p.add_argument("--force", action="store_true", help="recompute stages even if cached")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--archive", help="dataset archive directory (sets data.archive)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="pathgpa", description="Pathway-graph disease progression pipeline.")
    parser.add_argument("--version", action="version", version=f"pathgpa {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "synth": "generate a synthetic dataset archive",
        "build-graphs": "build per-subject pathway graphs",
        "regress": "train the graph regressor and rank pathways",
        "gpa": "embed, stage and order graphs along pseudotime",
        "tgcn": "temporal GCN stage-transition sensitivity",
        "sde": "neural SDE stability and bifurcation (plain and graph-coupled)",
        "report": "write the consolidated summary",
        "run": "run every enabled stage",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name in ("gpa", "run"):
            p.add_argument("--reducer", choices=["pca", "umap-minimal"])
            p.add_argument("--n-stages", help="stage count or 'auto'")
        if name in ("regress", "tgcn", "run"):
            p.add_argument("--runs", type=int, help="training runs for regress and tgcn")
        if name in ("sde", "run"):
            p.add_argument("--sde-epochs", type=int)
    dump = sub.add_parser("config", help="print the effective config")
    _common(dump)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.archive:
        overrides.append(f"data.archive={args.archive}")
    if getattr(args, "reducer", None):
        overrides.append(f"gpa.reducer={args.reducer}")
    if getattr(args, "n_stages", None):
        overrides.append(f"gpa.n_stages={args.n_stages}")
    if getattr(args, "runs", None) is not None:
        cmd = args.command
        if cmd in ("regress", "run"):
            overrides.append(f"regress.runs={args.runs}")
        if cmd in ("tgcn", "run"):
            overrides.append(f"tgcn.runs={args.runs}")
    if getattr(args, "sde_epochs", None) is not None:
        overrides.append(f"sde.epochs={args.sde_epochs}")
    return apply_overrides(cfg, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = resolve_config(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"pathgpa: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError) as err:
        print(f"pathgpa: config error: {err}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "config":
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    stages = SUBCOMMANDS[args.command]
    if args.command == "synth" and cfg.data.archive is not None:
        print("pathgpa: error: 'synth' writes its own archive; drop data.archive", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "sde":
        stages = [s for s in stages if getattr(cfg.stages, s)] or ["sde"]
    pipe = Pipeline(cfg, args.out, force=args.force)
    try:
        manifest = pipe.run(stages)
    except MissingArtifactError as err:
        print(f"pathgpa: {err}", file=sys.stderr)
        return EXIT_STAGE
    except StageError as err:
        print(f"pathgpa: {err}", file=sys.stderr)
        return EXIT_STAGE
    for entry in manifest["stages"]:
        print(f"{entry['stage']}\t{entry['status']}\t{len(entry['outputs'])} files")
    if args.command in ("report", "run"):
        summary = pipe.stage_dir("report") / "summary.txt"
        if summary.exists():
            sys.stdout.write(summary.read_text(encoding="utf-8"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
