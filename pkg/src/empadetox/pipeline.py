"""Experiment grid: curate subsets, train experts, generate, score, evaluate, report.

Output layout under ``output_dir``::

    models/        base, anti, reference and one expert per grid cell
    subsets/       selected record ids (.jsonl) and their text corpus (.txt)
    generations/   one .jsonl per cell, a record per continuation
    scored/        the same records with attribute scores attached
    reports/       per-cell report .json and length analysis .tsv
    summary/       aggregate table (.txt/.tsv/.json), figure data (.tsv) and .png figures

Each command validates its inputs before writing anything, and writes through
temp files renamed into place.
"""

import copy
import json
import logging
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .curation import (
    SelectionSpec,
    class_distribution,
    export_subset_corpus,
    format_class_distribution,
    load_score_records,
    select,
    subset_filename,
)
from .ensemble import Continuation, EnsembleConfig, ExpertEnsemble, GenerationSet, generate_set
from .fileio import (
    digest_file,
    provenance,
    read_jsonl,
    read_lines,
    write_json,
    write_jsonl,
    write_text,
)
from .lm import build_vocabulary, load_model, save_model, train_ngram
from .metrics import (
    ATTRIBUTES,
    EvaluationReport,
    LengthAnalysis,
    PairedMetricSamples,
    evaluate_run,
    format_table,
    format_tsv,
    permutation_test,
    sort_reports,
)
from .plotting import plot_toxicity_vs_length, plot_toxicity_vs_size, render_safely
from .remote import RemoteScorer, RemoteScorerConfig, ScoreCache
from .toxicity import AttributeScores, LexiconScorer, load_lexicon, score_batch

log = logging.getLogger(__name__)

TYPE_NAMES = {"random": "Random", "combined_thirds": "Thirds"}


class ConfigError(ValueError):
    pass


@dataclass
class Cell:
    """One row of the experiment matrix."""

    name: str
    type: str
    size: int | None
    kind: str  # "subset", "full" (expert on every record) or "base" (alpha = 0)
    spec: SelectionSpec | None = None

    def to_dict(self):
        d = {"name": self.name, "type": self.type, "size": self.size, "kind": self.kind}
        if self.spec is not None:
            d["spec"] = self.spec.to_dict()
        return d


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    output_dir: Path
    seed: int
    workers: int
    corpora: dict
    score_records: Path | None
    prompts: Path | None
    lexicon: Path | None
    reference_model: Path | None
    lm: dict
    ensemble: EnsembleConfig
    strategies: list
    sizes: list
    include_base: bool
    include_full: bool
    scorer: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, seed=None, workers=None, output_dir=None) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML/JSON: {e}") from None
        return cls.from_dict(raw, path.parent, seed=seed, workers=workers, output_dir=output_dir)

    @classmethod
    def from_dict(cls, raw, base_dir=".", seed=None, workers=None, output_dir=None) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = seed
        if workers is not None:
            raw["workers"] = workers
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        base_dir = Path(base_dir)
        known = {"seed", "workers", "output_dir", "corpora", "score_records", "prompts", "lexicon",
                 "reference_model", "lm", "ensemble", "grid", "scorer"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        grid = raw.get("grid") or {}
        ens = dict(raw.get("ensemble") or {})
        seed_val = int(raw.get("seed", 0))
        ens["seed"] = seed_val
        try:
            ensemble = EnsembleConfig(**ens)
        except TypeError as e:
            raise ConfigError(f"ensemble: {e}") from None
        except ValueError as e:
            raise ConfigError(f"ensemble: {e}") from None
        lm = {"order": 3, "add_k": 0.1, "min_count": 1}
        lm.update(raw.get("lm") or {})
        cfg = cls(
            raw=raw,
            base_dir=base_dir,
            output_dir=resolve(raw.get("output_dir", "out")),
            seed=seed_val,
            workers=int(raw.get("workers", 1)),
            corpora={k: resolve(v) for k, v in (raw.get("corpora") or {}).items() if v is not None},
            score_records=resolve(raw.get("score_records")),
            prompts=resolve(raw.get("prompts")),
            lexicon=resolve(raw.get("lexicon")),
            reference_model=resolve(raw.get("reference_model")),
            lm=lm,
            ensemble=ensemble,
            strategies=list(grid.get("strategies", ["min_no:EX", "min_no:IP", "min_no:ER", "random"])),
            sizes=list(grid.get("sizes", [])),
            include_base=bool(grid.get("include_base", True)),
            include_full=bool(grid.get("include_full", True)),
            scorer=dict(raw.get("scorer") or {"kind": "lexicon"}),
        )
        cfg.validate()
        return cfg

    def validate(self):
        problems = []
        for name, p in list(self.corpora.items()) + [
            ("score_records", self.score_records),
            ("prompts", self.prompts),
            ("lexicon", self.lexicon),
            ("reference_model", self.reference_model),
        ]:
            if p is not None and not p.exists():
                problems.append(f"{name}: path does not exist: {p}")
        for req in ("base", "toxic"):
            if req not in self.corpora:
                problems.append(f"corpora.{req} is required")
        if not self.sizes:
            problems.append("grid.sizes must be non-empty")
        for s in self.sizes:
            if not (isinstance(s, (int, float)) and s > 0) or isinstance(s, bool):
                problems.append(f"grid.sizes: bad size {s!r} (integer count, or fraction < 1 of the record count)")
        for s in self.strategies:
            try:
                SelectionSpec.parse(s, 3)
            except ValueError as e:
                problems.append(f"grid.strategies: {s!r}: {e}")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        kind = self.scorer.get("kind", "lexicon")
        if kind not in ("lexicon", "remote"):
            problems.append(f"scorer.kind must be lexicon or remote, got {kind!r}")
        if kind == "remote":
            try:
                RemoteScorerConfig.from_dict(self.scorer.get("remote") or {})
            except (TypeError, ValueError) as e:
                problems.append(f"scorer.remote: {e}")
        if problems:
            raise ConfigError("invalid experiment config:\n  " + "\n  ".join(problems))

    def digest_source(self) -> dict:
        """The config as it affects results: where outputs go and how many workers run do not."""
        return {k: v for k, v in self.raw.items() if k not in ("output_dir", "workers")}

    # output paths
    def out(self, *parts) -> Path:
        return self.output_dir.joinpath(*parts)

    def model_path(self, name):
        return self.out("models", f"{name}.json")

    def resolve_sizes(self, n_records: int) -> list[int]:
        sizes = []
        for s in self.sizes:
            k = int(round(s * n_records)) if isinstance(s, float) and s < 1 else int(s)
            sizes.append(max(1, k))
        return sizes


def grid_cells(cfg: ExperimentConfig, n_records: int) -> list[Cell]:
    cells = []
    if cfg.include_base:
        cells.append(Cell("base", "Base", None, "base"))
    if cfg.include_full:
        cells.append(Cell("full", "Full", n_records, "full"))
    for strat in cfg.strategies:
        for k in cfg.resolve_sizes(n_records):
            if strat.startswith("combined_thirds") and k < 3:
                k = 3
            spec = SelectionSpec.parse(strat, k, cfg.seed)
            type_name = TYPE_NAMES.get(spec.strategy, spec.label)
            cells.append(Cell(subset_filename(spec), type_name, k, "subset", spec))
    names = [c.name for c in cells]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ConfigError(f"grid produces duplicate cells: {sorted(dupes)}")
    return cells


def _records(cfg):
    if cfg.score_records is None:
        raise ConfigError("score_records is required for curation")
    return load_score_records(cfg.score_records)


def cells_for(cfg: ExperimentConfig) -> list[Cell]:
    return grid_cells(cfg, len(_records(cfg)))


# ---------------------------------------------------------------- train-lm


def cmd_train_lm(corpus, out, order=3, add_k=0.1, min_count=1, vocab_from=None) -> Path:
    """Train one model. ``vocab_from`` reuses another model's vocabulary so they can be ensembled."""
    lines = read_lines(corpus)
    vocab = load_model(vocab_from).vocab if vocab_from else build_vocabulary(lines, min_count)
    model = train_ngram(lines, vocab, order, add_k)
    save_model(model, out)
    log.info("trained order-%d model on %d lines (|V|=%d) -> %s", order, len(lines), len(vocab), out)
    return Path(out)


# ---------------------------------------------------------------- curate


def cmd_curate(score_records, spec: SelectionSpec, out_dir, name=None) -> dict:
    """Select a subset and write its ids, its text corpus, and a class-distribution table."""
    records = load_score_records(score_records)
    subset = select(records, spec)
    out_dir = Path(out_dir)
    name = name or subset_filename(spec)
    meta = provenance(config=spec.to_dict(), inputs={"score_records": score_records},
                      duplicates_dropped=records.duplicates_dropped)
    paths = {
        "subset": out_dir / f"{name}.jsonl",
        "corpus": out_dir / f"{name}.txt",
        "distribution": out_dir / "class_distribution.txt",
        "distribution_json": out_dir / "class_distribution.json",
    }
    write_jsonl(paths["subset"], [{"rank": i, "id": rid} for i, rid in enumerate(subset.ids)], meta={**meta, **subset.provenance})
    write_text(paths["corpus"], "".join(line + "\n" for line in export_subset_corpus(records, subset)))
    _write_distribution(records, out_dir, score_records)
    return paths


def _write_distribution(records, out_dir, source):
    table = class_distribution(records)
    write_text(Path(out_dir) / "class_distribution.txt", format_class_distribution(table))
    write_json(Path(out_dir) / "class_distribution.json", {
        "_meta": provenance(inputs={"score_records": source}),
        "counts": {t.value: counts for t, counts in table.items()},
        "records": len(records),
    })


# ---------------------------------------------------------------- train-experts


def cmd_train_experts(cfg: ExperimentConfig) -> dict:
    """Shared vocabulary; base, anti-expert and reference models; one expert per grid cell."""
    records = _records(cfg)
    cells = grid_cells(cfg, len(records))
    corpora = {k: read_lines(p) for k, p in sorted(cfg.corpora.items())}
    record_texts = [r.text for r in records]
    vocab_lines = [line for k in sorted(corpora) for line in corpora[k]] + record_texts
    vocab = build_vocabulary(vocab_lines, cfg.lm["min_count"])
    order, add_k = int(cfg.lm["order"]), float(cfg.lm["add_k"])
    paths = {}

    def train(name, lines):
        save_model(train_ngram(lines, vocab, order, add_k), cfg.model_path(name))
        paths[name] = cfg.model_path(name)

    train("base", corpora["base"])
    train("anti", corpora["toxic"])
    if cfg.reference_model is None:
        train("reference", corpora.get("clean", record_texts))
    _write_distribution(records, cfg.out("subsets"), cfg.score_records)
    for cell in cells:
        if cell.kind == "base":
            continue
        if cell.kind == "full":
            lines = record_texts
        else:
            subset = select(records, cell.spec)
            lines = export_subset_corpus(records, subset)
            meta = {**provenance(config=cfg.digest_source(), inputs={"score_records": cfg.score_records}), **subset.provenance}
            write_jsonl(cfg.out("subsets", f"{cell.name}.jsonl"),
                        [{"rank": i, "id": rid} for i, rid in enumerate(subset.ids)], meta=meta)
            write_text(cfg.out("subsets", f"{cell.name}.txt"), "".join(t + "\n" for t in lines))
        train(f"expert-{cell.name}", lines)
    log.info("trained %d models (|V|=%d) in %s", len(paths), len(vocab), cfg.out("models"))
    return paths


# ---------------------------------------------------------------- generate


def read_prompts(path) -> list[tuple[str, str]]:
    """``[(prompt_id, text)]`` from a .jsonl file of ``{"id", "text"}`` or one prompt per line."""
    path = Path(path)
    if path.suffix == ".jsonl":
        _, rows = read_jsonl(path)
        prompts = []
        for lineno, obj in rows:
            if "id" not in obj or "text" not in obj:
                raise ValueError(f"{path}:{lineno}: prompt records need 'id' and 'text'")
            prompts.append((str(obj["id"]), obj["text"]))
    else:
        prompts = [(str(i), line) for i, line in enumerate(read_lines(path))]
    ids = [p[0] for p in prompts]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate prompt ids")
    if not prompts:
        raise ValueError(f"{path}: no prompts")
    return prompts


def _cell_models(cfg, cell):
    base = load_model(cfg.model_path("base"))
    anti = load_model(cfg.model_path("anti"))
    # the alpha = 0 baseline samples from the base model alone; expert = anti cancels exactly
    expert = anti if cell.kind == "base" else load_model(cfg.model_path(f"expert-{cell.name}"))
    return ExpertEnsemble(base, expert, anti)


def cell_ensemble_config(cfg, cell) -> EnsembleConfig:
    d = cfg.ensemble.to_dict()
    if cell.kind == "base":
        d["alpha"] = 0.0
    return EnsembleConfig(**d)


def continuation_record(gs: GenerationSet, prompt_index: int, i: int, c: Continuation) -> dict:
    return {
        "prompt_id": gs.prompt_id,
        "prompt_index": prompt_index,
        "prompt": gs.prompt,
        "index": i,
        "text": c.text,
        "tokens": list(c.tokens),
        "token_ids": list(c.token_ids),
        "length": c.length,
        "terminated_by": c.terminated_by,
    }


def generate_records(ensemble, prompts, ens_cfg):
    for p_idx, (pid, text) in enumerate(prompts):
        gs = generate_set(ensemble, text, ens_cfg, p_idx, pid)
        for i, c in enumerate(gs.continuations):
            yield continuation_record(gs, p_idx, i, c)


def cmd_generate(cfg: ExperimentConfig, cell_name: str) -> Path:
    if cfg.prompts is None:
        raise ConfigError("prompts is required for generation")
    cell = _find_cell(cfg, cell_name)
    prompts = read_prompts(cfg.prompts)
    ensemble = _cell_models(cfg, cell)
    ens_cfg = cell_ensemble_config(cfg, cell)
    out = cfg.out("generations", f"{cell.name}.jsonl")
    meta = provenance(config=cfg.digest_source(), inputs={"prompts": cfg.prompts}, cell=cell.to_dict(), ensemble=ens_cfg.to_dict(),
                      models={k: digest_file(cfg.model_path(k)) for k in ("base", "anti")})
    write_jsonl(out, generate_records(ensemble, prompts, ens_cfg), meta=meta)
    log.info("generated %d x %d continuations for cell %s", len(prompts), ens_cfg.num_continuations, cell.name)
    return out


def _find_cell(cfg, name):
    cells = {c.name: c for c in cells_for(cfg)}
    if name not in cells:
        raise ConfigError(f"unknown grid cell {name!r}; available: {', '.join(cells)}")
    return cells[name]


# ---------------------------------------------------------------- score


def make_scorer(cfg: ExperimentConfig | None = None, kind=None, lexicon_path=None, remote=None, cache_path=None):
    """Lexicon scorer by default; the remote scorer needs its credential in the environment."""
    scorer_cfg = dict(cfg.scorer) if cfg is not None else {}
    kind = kind or scorer_cfg.get("kind", "lexicon")
    if kind == "lexicon":
        path = lexicon_path or (cfg.lexicon if cfg is not None else None)
        return LexiconScorer(load_lexicon(path))
    remote_cfg = RemoteScorerConfig.from_dict(remote or scorer_cfg.get("remote") or {})
    if cache_path is None:
        cache_path = scorer_cfg.get("cache") or (cfg.out("score_cache.jsonl") if cfg is not None else None)
    if cache_path is not None:
        Path(cache_path).parent.mkdir(parents=True, exist_ok=True)
    return RemoteScorer(remote_cfg, ScoreCache(cache_path))


def cmd_score(generations, out, scorer, workers=1) -> Path:
    meta, rows = read_jsonl(generations)
    records = [obj for _, obj in rows]
    for lineno, obj in rows:
        if "text" not in obj or "prompt_id" not in obj:
            raise ValueError(f"{generations}:{lineno}: generation records need 'prompt_id' and 'text'")
    scores, errors = score_batch([r["text"] for r in records], scorer, workers)
    out_records = []
    for i, (rec, s) in enumerate(zip(records, scores)):
        rec = dict(rec)
        if s is None:
            rec["scores"] = None
            rec["score_error"] = f"{type(errors[i]).__name__}: {errors[i]}"
        else:
            rec["scores"] = s.to_dict()
        out_records.append(rec)
    new_meta = provenance(inputs={"generations": generations}, scorer=getattr(scorer, "scorer_id", type(scorer).__name__),
                          generation_meta=meta)
    write_jsonl(out, out_records, meta=new_meta)
    if errors:
        log.warning("%d of %d continuations could not be scored", len(errors), len(records))
    return Path(out)


# ---------------------------------------------------------------- evaluate


def load_generation_sets(path) -> tuple[dict | None, list[GenerationSet]]:
    meta, rows = read_jsonl(path)
    sets = OrderedDict()
    for lineno, obj in rows:
        try:
            pid = str(obj["prompt_id"])
            ids = tuple(obj.get("token_ids") or ())
            tokens = tuple(obj["tokens"])
            c = Continuation(ids, obj["text"], tokens, obj.get("terminated_by", "max_length"))
            s = obj.get("scores")
            s = AttributeScores.from_dict(s) if s is not None else None
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}:{lineno}: bad generation record: {e}") from None
        gs = sets.setdefault(pid, GenerationSet(pid, obj.get("prompt", ""), [], []))
        gs.continuations.append(c)
        gs.scores.append(s)
    return meta, list(sets.values())


def cmd_evaluate(scored, reference_path, out_prefix, lexicon_path=None, label=None, size=None, max_length=None) -> dict:
    meta, sets = load_generation_sets(scored)
    reference = load_model(reference_path)
    lexicon = load_lexicon(lexicon_path)
    gen_meta = (meta or {}).get("generation_meta") or {}
    cell = gen_meta.get("cell") or {}
    ens = gen_meta.get("ensemble") or {}
    if max_length is None:
        max_length = ens.get("max_new_tokens")
    label = label or cell.get("type") or Path(scored).stem
    if size is None:
        size = cell.get("size")
    report, lengths = evaluate_run(sets, reference, lexicon, label=label, size=size, max_length=max_length,
                                   config={"cell": cell, "ensemble": ens})
    out_prefix = Path(out_prefix)
    paths = {"report": out_prefix.with_suffix(".json"), "lengths": out_prefix.with_suffix(".length.tsv")}
    write_json(paths["report"], {
        "_meta": provenance(inputs={"scored": scored, "reference": reference_path}),
        "report": report.to_dict(),
        "length_analysis": lengths.to_dict(),
    })
    write_text(paths["lengths"], length_tsv(lengths))
    return paths


def length_tsv(la: LengthAnalysis) -> str:
    lines = ["length\tcount\tmean_toxicity\tprofanity_proportion"]
    for L, n, m, p in la.rows():
        lines.append(f"{L}\t{n}\t{_fmt(m)}\t{_fmt(p)}")
    return "\n".join(lines) + "\n"


def _fmt(x):
    return "" if x is None else repr(float(x))


def read_report(path):
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    try:
        return EvaluationReport.from_dict(data["report"]), LengthAnalysis.from_dict(data["length_analysis"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: not an evaluation report ({e})") from None


# ---------------------------------------------------------------- compare


def cmd_compare(report_a, report_b, out=None, iterations=10000, seed=0) -> dict:
    """Paired permutation p-values for average max toxicity and toxicity probability."""
    ra, _ = read_report(report_a)
    rb, _ = read_report(report_b)
    result = {"a": ra.label + (f" {ra.size}" if ra.size else ""), "b": rb.label + (f" {rb.size}" if rb.size else ""),
              "iterations": iterations, "seed": seed, "metrics": {}}
    for metric, key in (("avg_max_toxicity", "max_toxicity"), ("toxicity_probability", "toxic")):
        samples = PairedMetricSamples.align(
            {k: v[key] for k, v in ra.per_prompt.items()}, {k: v[key] for k, v in rb.per_prompt.items()}
        )
        result["metrics"][metric] = {
            "a": sum(samples.a) / len(samples.a),
            "b": sum(samples.b) / len(samples.b),
            "n": len(samples.a),
            "p_value": permutation_test(samples, iterations, seed),
        }
    if out is not None:
        write_json(out, {"_meta": provenance(inputs={"a": report_a, "b": report_b}), **result})
    return result


# ---------------------------------------------------------------- report


def cmd_report(report_paths, out_dir, render=True, max_length=None) -> dict:
    """Aggregate table sorted by toxicity probability, figure data, and optional figures."""
    loaded = [(Path(p), *read_report(p)) for p in report_paths]
    if not loaded:
        raise ValueError("no reports given")
    reports = sort_reports([r for _, r, _ in loaded])
    out_dir = Path(out_dir)
    rows = [r.row() for r in reports]
    paths = {
        "table": out_dir / "report.txt",
        "tsv": out_dir / "report.tsv",
        "json": out_dir / "report.json",
        "fig_size_data": out_dir / "fig_toxicity_vs_size.tsv",
        "fig_length_data": out_dir / "fig_toxicity_vs_length.tsv",
        "fig_size": out_dir / "fig_toxicity_vs_size.png",
        "fig_length": out_dir / "fig_toxicity_vs_length.png",
    }
    write_text(paths["table"], format_table(rows))
    write_text(paths["tsv"], format_tsv(rows))
    inputs = {f"report{i}": p for i, (p, _, _) in enumerate(loaded)}
    write_json(paths["json"], {
        "_meta": provenance(inputs=inputs),
        "rows": [{k: v for k, v in r.to_dict().items() if k != "per_prompt"} for r in reports],
    })

    size_rows, baselines = [], {}
    for r in reports:
        if r.config.get("cell", {}).get("kind", "subset") == "subset" and r.size is not None:
            for a in ATTRIBUTES:
                size_rows.append((r.label, r.size, a, r.per_attribute[a]["probability"], r.per_attribute[a]["avg_max"]))
        else:
            baselines[r.label] = {a: r.per_attribute[a]["probability"] for a in ATTRIBUTES}
    size_rows.sort(key=lambda t: (t[0], t[1], ATTRIBUTES.index(t[2])))
    write_text(paths["fig_size_data"], "type\tsize\tattribute\ttoxicity_probability\tavg_max_toxicity\n" + "".join(
        f"{t}\t{s}\t{a}\t{p!r}\t{m!r}\n" for t, s, a, p, m in size_rows))

    series = {}
    lines = ["run\tlength\tcount\tmean_toxicity\tprofanity_proportion"]
    for p, r, la in sorted(loaded, key=lambda t: (t[1].label, t[1].size or 0)):
        name = r.label + (f" {r.size}" if r.size else "")
        series[name] = [(L, m) for L, _, m, _ in la.rows() if m is not None]
        for L, n, m, pp in la.rows():
            lines.append(f"{name}\t{L}\t{n}\t{_fmt(m)}\t{_fmt(pp)}")
    write_text(paths["fig_length_data"], "\n".join(lines) + "\n")

    if render:
        if size_rows:
            render_safely(plot_toxicity_vs_size, [t[:4] for t in size_rows], baselines, ATTRIBUTES, paths["fig_size"])
        render_safely(plot_toxicity_vs_length, series, paths["fig_length"], max_length)
    return paths


# ---------------------------------------------------------------- full pipeline


def run_cell(cfg: ExperimentConfig, cell_name: str, scorer=None) -> Path:
    """Generate, score and evaluate one cell; returns the report path."""
    cell = _find_cell(cfg, cell_name)
    gen = cmd_generate(cfg, cell.name)
    scorer = scorer or make_scorer(cfg)
    scored = cmd_score(gen, cfg.out("scored", f"{cell.name}.jsonl"), scorer)
    reference = cfg.reference_model or cfg.model_path("reference")
    paths = cmd_evaluate(scored, reference, cfg.out("reports", cell.name), cfg.lexicon,
                         max_length=cfg.ensemble.max_new_tokens)
    return paths["report"]


def _run_cell_worker(raw, base_dir, cell_name):
    cfg = ExperimentConfig.from_dict(raw, base_dir)
    return str(run_cell(cfg, cell_name))


def cmd_pipeline(cfg: ExperimentConfig, render=True) -> dict:
    cmd_train_experts(cfg)
    cells = cells_for(cfg)
    if cfg.workers > 1 and cfg.scorer.get("kind", "lexicon") == "lexicon":
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_cell_worker, cfg.raw, str(cfg.base_dir), c.name) for c in cells]
            reports = [Path(f.result()) for f in futures]
    else:
        scorer = make_scorer(cfg)
        reports = [run_cell(cfg, c.name, scorer) for c in cells]
    paths = cmd_report(reports, cfg.out("summary"), render=render, max_length=cfg.ensemble.max_new_tokens)
    if cfg.include_base:
        base_report = cfg.out("reports", "base.json")
        comparisons = {}
        for rp in reports:
            if rp != base_report:
                comparisons[rp.stem] = cmd_compare(rp, base_report, cfg.out("compare", f"{rp.stem}__base.json"),
                                                   seed=cfg.seed)
        paths["comparisons"] = comparisons
    return paths
