"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line in the summary.

Run just this module with ``pytest tests/test_acceptance.py -v``; the
"acceptance criteria" section at the end of the run lists every criterion.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
import yaml
from conftest import METRIC_HAND, METRIC_LEXICON, METRIC_MAX_LENGTH, METRIC_ROWS

from empadetox.curation import EmpathyType, load_score_records, select_combined, select_min_no, select_random
from empadetox.ensemble import Continuation, GenerationSet, combine_logits
from empadetox.fileio import write_jsonl
from empadetox.lm import build_vocabulary, uniform_model
from empadetox.metrics import (
    PairedMetricSamples,
    avg_max_toxicity,
    distinct_detail,
    exhaustive_permutation_p,
    fluency_perplexity,
    permutation_test,
    toxicity_by_length,
    toxicity_probability,
)
from empadetox.pipeline import ExperimentConfig, cmd_pipeline, load_generation_sets, read_report
from empadetox.toxicity import AttributeScores, contains_profanity, load_lexicon, parse_lexicon
from empadetox.toydata import write_toy_data


def detail(request, text):
    request.node.user_properties.append(("detail", text))


# ---------------------------------------------------------------- 1


def brute_force_combined(z, zp, zm, alpha):
    """Elementwise Python arithmetic with math.fsum normalization."""
    s = [a + alpha * (b - c) for a, b, c in zip(z, zp, zm)]
    m = max(s)
    e = [math.exp(v - m) for v in s]
    total = math.fsum(e)
    return [v / total for v in e]


@pytest.mark.acceptance(1, "ensemble combination matches brute-force softmax oracle")
def test_criterion_1_ensemble_math(request):
    rng = np.random.default_rng(20240601)
    instances = []
    for i in range(1000):
        n = int(rng.integers(2, 200))
        z, zp, zm = (rng.normal(0, rng.choice([1.0, 5.0, 20.0]), n) for _ in range(3))
        alpha = float(rng.uniform(-3, 5))
        if i % 10 == 0:
            alpha = 0.0
        elif i % 10 == 1:
            zm = zp.copy()
        instances.append((z, zp, zm, alpha))

    start = time.perf_counter()
    outputs = [combine_logits(*inst) for inst in instances]
    elapsed = time.perf_counter() - start

    worst = 0.0
    for (z, zp, zm, alpha), p in zip(instances, outputs):
        oracle = brute_force_combined(z.tolist(), zp.tolist(), zm.tolist(), alpha)
        worst = max(worst, float(np.max(np.abs(p - oracle))))
        if alpha == 0.0 or np.array_equal(zp, zm):
            # collapse cases: the base softmax alone
            base = brute_force_combined(z.tolist(), z.tolist(), z.tolist(), 0.0)
            worst = max(worst, float(np.max(np.abs(p - base))))
    detail(request, f"max abs error {worst:.2e} over 1000 instances, {elapsed * 1000:.0f} ms")
    assert worst <= 1e-9
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2


def brute_distinct(rows, n):
    values = []
    for row in rows:
        grams = [tuple(t.split()[i:i + n]) for t, _, _ in row for i in range(len(t.split()) - n + 1)]
        if grams:
            values.append(Fraction(len(set(grams)), len(grams)))
    return sum(values) / len(values), len(rows) - len(values)


def brute_lengths(rows, max_length, lexicon_words):
    buckets = {L: [] for L in range(1, max_length + 1)}
    for row in rows:
        for text, eos, tox in row:
            buckets[len(text.split()) + eos].append((Fraction(tox), any(w in text.split() for w in lexicon_words)))
    counts = [len(buckets[L]) for L in buckets]
    means = [sum(t for t, _ in b) / len(b) if b else None for b in buckets.values()]
    prof = [Fraction(sum(p for _, p in b), len(b)) if b else None for b in buckets.values()]
    return counts, means, prof


def as_float(x):
    return None if x is None else float(x)


@pytest.mark.acceptance(2, "metric oracles on the 5x4 handcrafted fixture")
def test_criterion_2_metric_oracles(request, metric_sets):
    rows = METRIC_ROWS
    maxes = [max(Fraction(s) for _, _, s in row) for row in rows]
    oracle_avg_max = sum(maxes) / len(maxes)
    oracle_prob = Fraction(sum(m >= Fraction(1, 2) for m in maxes), len(maxes))
    assert oracle_avg_max == METRIC_HAND["avg_max_toxicity"]
    assert oracle_prob == METRIC_HAND["toxicity_probability"]
    assert avg_max_toxicity(metric_sets) == float(oracle_avg_max)
    assert toxicity_probability(metric_sets) == float(oracle_prob)

    checked = 2
    for n in (1, 2, 3):
        oracle, excluded = brute_distinct(rows, n)
        assert oracle == METRIC_HAND[f"distinct_{n}"]
        value, got_excluded = distinct_detail(metric_sets, n)
        assert value == float(oracle)
        assert got_excluded == excluded
        checked += 1

    counts, means, prof = brute_lengths(rows, METRIC_MAX_LENGTH, METRIC_LEXICON)
    la = toxicity_by_length(metric_sets, METRIC_MAX_LENGTH, lexicon=parse_lexicon(METRIC_LEXICON))
    assert la.counts == counts == METRIC_HAND["length_counts"]
    assert la.mean_toxicity == [as_float(m) for m in means]
    assert la.profanity_proportion == [as_float(p) for p in prof]
    checked += 1
    detail(request, f"{checked} metrics equal to Fraction oracles")


# ---------------------------------------------------------------- 3


@pytest.mark.acceptance(3, "uniform reference perplexity equals vocabulary size")
def test_criterion_3_perplexity_identity(request):
    rng = np.random.default_rng(3)
    worst = 0.0
    for V in (4, 50, 1000):
        words = [f"w{i}" for i in range(V - 3)]  # plus BOS, EOS and UNK
        vocab = build_vocabulary([" ".join(words)])
        assert len(vocab) == V
        model = uniform_model(vocab)
        sets = []
        for p in range(5):
            conts = []
            for _ in range(4):
                toks = tuple(rng.choice(words, size=int(rng.integers(1, 15))).tolist())
                conts.append(Continuation(tuple(vocab.encode_tokens(toks)), " ".join(toks), toks, "max_length"))
            sets.append(GenerationSet(str(p), "", conts, [AttributeScores()] * 4))
        ppl = fluency_perplexity(sets, model)
        worst = max(worst, abs(ppl - V) / V)
    detail(request, f"max relative error {worst:.1e} for V in (4, 50, 1000)")
    assert worst <= 1e-9


# ---------------------------------------------------------------- 4


def fixture_pairs():
    """Paired instances with n <= 12: the metric fixture plus seeded random and tied cases."""
    maxes = [max(s for _, _, s in row) for row in METRIC_ROWS]
    toxic = [float(m >= 0.5) for m in maxes]
    yield PairedMetricSamples(tuple(range(5)), tuple(maxes), tuple(reversed(maxes)))
    yield PairedMetricSamples(tuple(range(5)), tuple(toxic), (0.0,) * 5)
    yield PairedMetricSamples(tuple(range(5)), tuple(maxes), tuple(maxes))
    rng = np.random.default_rng(44)
    for i in range(120):
        n = 1 + i % 12
        a = rng.random(n)
        b = a + rng.normal(0.15 * (i % 3), 0.2, n) if i % 4 else rng.integers(0, 2, n).astype(float)
        yield PairedMetricSamples(tuple(range(n)), tuple(a.tolist()), tuple(np.asarray(b, float).tolist()))


@pytest.mark.acceptance(4, "Monte Carlo permutation p within 0.02 of exhaustive")
def test_criterion_4_permutation(request):
    worst, count = 0.0, 0
    for k, s in enumerate(fixture_pairs()):
        assert len(s.a) <= 12
        exact = exhaustive_permutation_p(s)
        assert permutation_test(s, iterations=1 << 12, exact=True) == exact
        mc = permutation_test(s, iterations=10000, seed=k, exact=False)
        worst = max(worst, abs(mc - exact))
        count += 1
    detail(request, f"max |MC - exact| = {worst:.4f} over {count} instances")
    assert worst <= 0.02


# ---------------------------------------------------------------- 5


@pytest.fixture(scope="module")
def synthetic_records(tmp_path_factory):
    rng = np.random.default_rng(5)
    rows = []
    for i in range(10_000):
        row = {"id": i, "text": f"synthetic record {i}"}
        for t in EmpathyType:
            p = rng.dirichlet([1.0, 1.0, 1.0])
            for c, v in zip(("no", "weak", "strong"), p):
                row[f"{t.prefix}_{c}"] = float(max(v, 1e-12))
        rows.append(row)
    path = tmp_path_factory.mktemp("records") / "scores.jsonl"
    write_jsonl(path, rows)
    return load_score_records(path)


@pytest.mark.acceptance(5, "min-ll_no selection beats random subsets; thirds never duplicates")
def test_criterion_5_curation(request, synthetic_records):
    records = synthetic_records
    assert len(records) == 10_000
    k = 100
    margins = []
    for etype in EmpathyType:
        ll = {r.id: r.ll(etype, "no") for r in records}
        chosen = select_min_no(records, etype, k)
        best = sum(ll[i] for i in chosen.ids) / k
        random_means = [sum(ll[i] for i in select_random(records, k, seed).ids) / k for seed in range(100)]
        assert all(best <= m for m in random_means)
        margins.append(min(random_means) - best)
    for size in (3, 4, 5, 100, 301, 3000):
        ids = select_combined(records, size).ids
        assert len(ids) == len(set(ids)) == size
    detail(request, f"smallest margin over 100 random subsets {min(margins):.3f} nats; thirds ok for 6 sizes")


# ---------------------------------------------------------------- 6-8: desk-scale run

DESK_STRATEGIES = ["min_no:EX", "random"]


def desk_config(root):
    paths = write_toy_data(root, seed=0, n_clean=5000, n_toxic=1500, n_base=4000, n_prompts=250)
    raw = yaml.safe_load(paths["config"].read_text())
    raw["ensemble"].update(alpha=2.0, num_continuations=10, max_new_tokens=20)
    raw["grid"] = {"strategies": DESK_STRATEGIES, "sizes": [0.01, 0.04], "include_base": True, "include_full": False}
    paths["config"].write_text(yaml.safe_dump(raw, sort_keys=False))
    return paths["config"]


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    config = desk_config(root)
    start = time.perf_counter()
    cfg = ExperimentConfig.load(config, output_dir=root / "run_a")
    paths = cmd_pipeline(cfg, render=True)
    elapsed = time.perf_counter() - start
    return {"config": config, "cfg": cfg, "paths": paths, "elapsed": elapsed}


@pytest.mark.acceptance(6, "anti-expert steering lowers toxicity probability (desk scale)")
def test_criterion_6_directional(request, desk_run):
    cfg = desk_run["cfg"]
    base, _ = read_report(cfg.out("reports", "base.json"))
    assert base.prompt_count >= 200 and base.continuation_count >= 200 * 10
    lines, probs = [], {}
    comparisons = desk_run["paths"]["comparisons"]
    assert len(comparisons) == 4
    for name, res in sorted(comparisons.items()):
        report, _ = read_report(cfg.out("reports", f"{name}.json"))
        tp = res["metrics"]["toxicity_probability"]
        probs[name] = report.toxicity_probability
        lines.append(f"{name} {report.toxicity_probability:.3f} (p={tp['p_value']:.2g})")
        assert report.toxicity_probability < base.toxicity_probability
        assert tp["p_value"] < 0.05
    ordering = []
    for size in sorted({n.rsplit("-", 1)[1] for n in probs}, key=int):
        ex, rnd = probs[f"EX-{size}"], probs[f"random-{size}"]
        ordering.append(f"size {size}: EX {'<' if ex < rnd else '>=' if ex > rnd else '='} random")
    detail(request, f"base {base.toxicity_probability:.3f}; " + ", ".join(lines)
           + f"; {desk_run['elapsed']:.0f} s; informational: " + ", ".join(ordering))
    assert desk_run["elapsed"] < 600


@pytest.mark.acceptance(7, "length buckets partition generations with means in [0, 1]")
def test_criterion_7_length_shape(request, desk_run):
    cfg = desk_run["cfg"]
    checked = 0
    lexicon = load_lexicon(cfg.lexicon)
    for report_path in sorted(cfg.out("reports").glob("*.json")):
        report, la = read_report(report_path)
        assert la.lengths == list(range(1, 21))
        assert sum(la.counts) == report.continuation_count
        for m in la.mean_toxicity:
            assert m is None or 0.0 <= m <= 1.0
        for p in la.profanity_proportion:
            assert p is None or 0.0 <= p <= 1.0
        checked += 1
    # every generation lands in exactly one bucket
    _, sets = load_generation_sets(cfg.out("scored", "base.jsonl"))
    lengths = [c.length for gs in sets for c in gs.continuations]
    assert all(1 <= n <= 20 for n in lengths)
    _, base_la = read_report(cfg.out("reports", "base.json"))
    assert base_la.counts == [lengths.count(n) for n in range(1, 21)]
    flagged = sum(contains_profanity(c.text, lexicon) for gs in sets for c in gs.continuations)
    summary = cfg.out("summary")
    assert (summary / "fig_toxicity_vs_length.tsv").stat().st_size > 0
    assert (summary / "fig_toxicity_vs_length.png").stat().st_size > 0
    detail(request, f"{checked} runs, lengths 1-20; {flagged} of {len(lengths)} base continuations contain profanity")


@pytest.mark.acceptance(8, "fixed-seed rerun reproduces byte-identical reports")
def test_criterion_8_determinism(request, desk_run, tmp_path):
    cfg_b = ExperimentConfig.load(desk_run["config"], output_dir=tmp_path / "run_b")
    cmd_pipeline(cfg_b, render=False)
    a_root, b_root = desk_run["cfg"].output_dir, cfg_b.output_dir
    compared = 0
    for sub in ("reports", "compare", "scored", "generations", "subsets", "models"):
        a_files = sorted(p.relative_to(a_root) for p in (a_root / sub).rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_root) for p in (b_root / sub).rglob("*") if p.is_file())
        assert a_files == b_files and a_files
        for rel in a_files:
            assert (a_root / rel).read_bytes() == (b_root / rel).read_bytes(), str(rel)
            compared += 1
    for name in ("report.txt", "report.tsv", "report.json", "fig_toxicity_vs_size.tsv", "fig_toxicity_vs_length.tsv"):
        assert (a_root / "summary" / name).read_bytes() == (b_root / "summary" / name).read_bytes(), name
        compared += 1
    detail(request, f"{compared} files byte-identical across output directories")
