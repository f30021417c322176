"""Command-line entry point: ``empadetox <command> [options]``.

Experiment commands read a YAML/JSON config (``--config``); ``--seed`` and
``--workers`` override it. A remote scorer's credential comes only from the
environment variable named in the config.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .curation import SelectionSpec
from .lm import ModelFormatError
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    cells_for,
    cmd_compare,
    cmd_curate,
    cmd_evaluate,
    cmd_generate,
    cmd_pipeline,
    cmd_report,
    cmd_score,
    cmd_train_experts,
    cmd_train_lm,
    make_scorer,
)
from .remote import ConfigurationError, RemoteScoringError
from .toydata import write_toy_data

log = logging.getLogger("empadetox")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="experiment config (YAML or JSON)")
    parser.add_argument("--seed", type=int, default=default, help="global seed, overrides the config")
    parser.add_argument("--workers", type=int, default=default, help="parallel grid cells, overrides the config")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser():
    parser = argparse.ArgumentParser(prog="empadetox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_, parents=[common])

    p = add("train-lm", "train one n-gram model on a line corpus")
    p.add_argument("corpus", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--add-k", type=float, default=0.1)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--vocab-from", type=Path, help="reuse the vocabulary of an existing model")

    p = add("curate", "select a fine-tuning subset from empathy score records")
    p.add_argument("scores", type=Path)
    p.add_argument("--strategy", required=True, help="min_no:EX|IP|ER, max_strong:EX|IP|ER, combined_thirds, random")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("-o", "--out-dir", type=Path, required=True)
    p.add_argument("--name", help="output file stem (default: derived from the strategy and size)")

    add("train-experts", "train base, anti-expert, reference and one expert per grid cell")
    add("cells", "list the grid cells defined by the config")

    p = add("generate", "generate continuations for grid cells")
    _cell_args(p)

    p = add("score", "attach attribute scores to generations")
    _cell_args(p, required=False)
    p.add_argument("--generations", type=Path, help="generations file (instead of config cells)")
    p.add_argument("-o", "--out", type=Path, help="output path with --generations")
    p.add_argument("--scorer", choices=["lexicon", "remote"])
    p.add_argument("--lexicon", type=Path)

    p = add("evaluate", "compute the evaluation report and length analysis")
    _cell_args(p, required=False)
    p.add_argument("--scored", type=Path, help="scored generations file (instead of config cells)")
    p.add_argument("--reference", type=Path, help="reference model for perplexity")
    p.add_argument("-o", "--out", type=Path, help="output path prefix with --scored")
    p.add_argument("--lexicon", type=Path)
    p.add_argument("--label")
    p.add_argument("--size", type=int)
    p.add_argument("--max-length", type=int)

    p = add("compare", "paired permutation tests between two reports")
    p.add_argument("report_a", type=Path)
    p.add_argument("report_b", type=Path)
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("-o", "--out", type=Path)

    p = add("report", "aggregate reports into a table plus figure data and figures")
    p.add_argument("reports", type=Path, nargs="*", help="report .json files (default: all in the config's output)")
    p.add_argument("-o", "--out-dir", type=Path)
    p.add_argument("--no-figures", action="store_true")

    p = add("pipeline", "run every step for every grid cell")
    p.add_argument("--no-figures", action="store_true")

    p = add("make-toy-data", "write template corpora, prompts, synthetic score records and a config")
    p.add_argument("-o", "--out-dir", type=Path, required=True)
    p.add_argument("--n-clean", type=int, default=5000)
    p.add_argument("--n-toxic", type=int, default=1500)
    p.add_argument("--n-base", type=int, default=4000)
    p.add_argument("--n-prompts", type=int, default=250)
    return parser


def _cell_args(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--cell", action="append", help="grid cell name (repeatable)")
    g.add_argument("--all", action="store_true", help="every grid cell")


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None) is None:
        raise ConfigError(f"{args.command} needs --config")
    return ExperimentConfig.load(args.config, seed=args.seed, workers=args.workers)


def _selected_cells(args, cfg):
    names = [c.name for c in cells_for(cfg)]
    if args.all:
        return names
    unknown = [c for c in args.cell if c not in names]
    if unknown:
        raise ConfigError(f"unknown cells {unknown}; available: {', '.join(names)}")
    return args.cell


def run(args) -> int:
    cmd = args.command
    if cmd == "train-lm":
        cmd_train_lm(args.corpus, args.out, args.order, args.add_k, args.min_count, args.vocab_from)
    elif cmd == "curate":
        spec = SelectionSpec.parse(args.strategy, args.size, args.seed or 0)
        for k, v in cmd_curate(args.scores, spec, args.out_dir, args.name).items():
            print(f"{k}: {v}")
    elif cmd == "make-toy-data":
        paths = write_toy_data(args.out_dir, seed=args.seed or 0, n_clean=args.n_clean, n_toxic=args.n_toxic,
                               n_base=args.n_base, n_prompts=args.n_prompts)
        print(f"wrote toy experiment to {args.out_dir}; run: empadetox pipeline --config {paths['config']}")
    elif cmd == "compare":
        result = cmd_compare(args.report_a, args.report_b, args.out, args.iterations, args.seed or 0)
        for metric, m in result["metrics"].items():
            print(f"{metric}: A={m['a']:.4f} B={m['b']:.4f} n={m['n']} p={m['p_value']:.3g}")
    elif cmd == "score" and args.generations:
        if args.out is None:
            raise ConfigError("score --generations needs --out")
        cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else None
        scorer = make_scorer(cfg, kind=args.scorer, lexicon_path=args.lexicon)
        cmd_score(args.generations, args.out, scorer, workers=args.workers or 1)
    elif cmd == "evaluate" and args.scored:
        if args.out is None or args.reference is None:
            raise ConfigError("evaluate --scored needs --reference and --out")
        paths = cmd_evaluate(args.scored, args.reference, args.out, args.lexicon, args.label, args.size, args.max_length)
        print(json.dumps({k: str(v) for k, v in paths.items()}))
    elif cmd == "report" and args.reports:
        if args.out_dir is None:
            raise ConfigError("report needs --out-dir when report files are given")
        cmd_report(args.reports, args.out_dir, render=not args.no_figures)
    else:
        return _run_configured(args, _config(args))
    return 0


def _run_configured(args, cfg) -> int:
    cmd = args.command
    if cmd == "train-experts":
        cmd_train_experts(cfg)
    elif cmd == "cells":
        for c in cells_for(cfg):
            print(f"{c.name}\t{c.type}\t{'' if c.size is None else c.size}\t{c.kind}")
    elif cmd == "generate":
        for name in _selected_cells(args, cfg):
            print(cmd_generate(cfg, name))
    elif cmd == "score":
        if not (args.all or args.cell):
            raise ConfigError("score needs --cell/--all or --generations")
        scorer = make_scorer(cfg, kind=args.scorer, lexicon_path=args.lexicon)
        for name in _selected_cells(args, cfg):
            cmd_score(cfg.out("generations", f"{name}.jsonl"), cfg.out("scored", f"{name}.jsonl"), scorer, cfg.workers)
    elif cmd == "evaluate":
        if not (args.all or args.cell):
            raise ConfigError("evaluate needs --cell/--all or --scored")
        reference = args.reference or cfg.reference_model or cfg.model_path("reference")
        for name in _selected_cells(args, cfg):
            cmd_evaluate(cfg.out("scored", f"{name}.jsonl"), reference, cfg.out("reports", name),
                         args.lexicon or cfg.lexicon, max_length=cfg.ensemble.max_new_tokens)
    elif cmd == "report":
        reports = sorted(cfg.out("reports").glob("*.json"))
        cmd_report(reports, args.out_dir or cfg.out("summary"), render=not args.no_figures,
                   max_length=cfg.ensemble.max_new_tokens)
        print((args.out_dir or cfg.out("summary")) / "report.txt")
    elif cmd == "pipeline":
        paths = cmd_pipeline(cfg, render=not args.no_figures)
        sys.stdout.write(Path(paths["table"]).read_text(encoding="utf-8"))
        for name, res in sorted(paths.get("comparisons", {}).items()):
            p = res["metrics"]["toxicity_probability"]["p_value"]
            q = res["metrics"]["avg_max_toxicity"]["p_value"]
            print(f"{name} vs base: p(tox. prob.)={p:.3g}  p(max tox.)={q:.3g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, ConfigurationError, ModelFormatError, RemoteScoringError, ValueError, FileNotFoundError) as e:
        print(f"empadetox {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
