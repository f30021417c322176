"""Empathy score records and fine-tuning subset selection.

Score files hold one JSON object per line::

    {"id": 17, "text": "...", "er_no": -0.1, "er_weak": -2.9, "er_strong": -3.4,
     "ip_no": ..., "ip_weak": ..., "ip_strong": ..., "ex_no": ..., "ex_weak": ..., "ex_strong": ...}

Values are class log-likelihoods. Files holding probabilities instead are
detected (any value > 0) and converted on load.
"""

import enum
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .fileio import digest_file, digest_obj, read_jsonl
from .text import tokenize

log = logging.getLogger(__name__)

CLASSES = ("no", "weak", "strong")
NORM_TOL = 1e-6


class EmpathyType(str, enum.Enum):
    ER = "ER"  # emotional reactions
    IP = "IP"  # interpretations
    EX = "EX"  # explorations

    @property
    def prefix(self):
        return self.value.lower()


# Remainder order for combined selection, and the order in which types claim records.
COMBINED_ORDER = (EmpathyType.EX, EmpathyType.IP, EmpathyType.ER)
FIELDS = ("id", "text") + tuple(f"{t.prefix}_{c}" for t in EmpathyType for c in CLASSES)


class ScoreFileError(ValueError):
    pass


class SelectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmpathyScoreRecord:
    id: int | str
    text: str
    # (ll_no, ll_weak, ll_strong) per type
    scores: dict

    def ll(self, etype, cls="no") -> float:
        return self.scores[EmpathyType(etype)][CLASSES.index(cls)]

    def to_dict(self):
        d = {"id": self.id, "text": self.text}
        for t in EmpathyType:
            for c, v in zip(CLASSES, self.scores[t]):
                d[f"{t.prefix}_{c}"] = v
        return d


def id_key(record_id):
    """Sort key for record ids: integers numerically, then strings lexicographically."""
    return (isinstance(record_id, str), record_id)


class ScoreRecordSet(list):
    """A list of records remembering the digest of the file it came from."""

    def __init__(self, records=(), digest=None, source=None, duplicates_dropped=0):
        super().__init__(records)
        self.digest = digest
        self.source = source
        self.duplicates_dropped = duplicates_dropped


def records_digest(records) -> str:
    d = getattr(records, "digest", None)
    return d if d else digest_obj([r.to_dict() for r in records])


def _parse_record(obj, scale):
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing fields {missing}")
    rid = obj["id"]
    if isinstance(rid, bool) or not isinstance(rid, (int, str)):
        raise ValueError(f"id must be an integer or string, got {rid!r}")
    if not isinstance(obj["text"], str):
        raise ValueError("text must be a string")
    raw = {t: tuple(float(obj[f"{t.prefix}_{c}"]) for c in CLASSES) for t in EmpathyType}
    values = [v for trip in raw.values() for v in trip]
    if any(not math.isfinite(v) for v in values):
        raise ValueError("non-finite score")
    is_prob = scale == "prob" or (scale == "auto" and any(v > 0 for v in values))
    scores = {}
    for t, trip in raw.items():
        if is_prob:
            if any(v < 0 or v > 1 for v in trip):
                raise ValueError(f"{t.value}: probabilities outside [0, 1]")
            trip = tuple(math.log(max(v, 1e-300)) for v in trip)
        elif any(v > 0 for v in trip):
            raise ValueError(f"{t.value}: log-likelihoods must be <= 0")
        total = sum(math.exp(v) for v in trip)
        if abs(total - 1) >= NORM_TOL:
            raise ValueError(f"{t.value}: class probabilities sum to {total:.9f}, not 1")
        scores[t] = trip
    return EmpathyScoreRecord(rid, obj["text"], scores)


def load_score_records(path, scale: str = "auto", dedupe: bool = True) -> ScoreRecordSet:
    """Load and validate a score file; every bad row is reported with its line number.

    Records with text identical to an earlier record (in id order) are dropped
    when ``dedupe`` is set.
    """
    if scale not in ("auto", "log", "prob"):
        raise ValueError(f"scale must be auto, log or prob, got {scale!r}")
    try:
        _, rows = read_jsonl(path)
    except ValueError as e:
        raise ScoreFileError(str(e)) from None
    records, errors, seen_ids = [], [], {}
    for lineno, obj in rows:
        try:
            rec = _parse_record(obj, scale)
        except (ValueError, TypeError) as e:
            errors.append(f"line {lineno} (id={obj.get('id')!r}): {e}")
            continue
        if rec.id in seen_ids:
            errors.append(f"line {lineno}: duplicate id {rec.id!r} (first on line {seen_ids[rec.id]})")
            continue
        seen_ids[rec.id] = lineno
        records.append(rec)
    if errors:
        shown = "\n  ".join(errors[:50])
        more = f"\n  ... and {len(errors) - 50} more" if len(errors) > 50 else ""
        raise ScoreFileError(f"{path}: {len(errors)} invalid record(s):\n  {shown}{more}")
    dropped = 0
    if dedupe:
        kept, texts = [], set()
        for rec in sorted(records, key=lambda r: id_key(r.id)):
            if rec.text in texts:
                dropped += 1
                continue
            texts.add(rec.text)
            kept.append(rec)
        keep_ids = {r.id for r in kept}
        records = [r for r in records if r.id in keep_ids]
        if dropped:
            log.info("%s: dropped %d record(s) with duplicate text", path, dropped)
    return ScoreRecordSet(records, digest_file(path), str(path), dropped)


@dataclass(frozen=True)
class SelectionSpec:
    """``strategy`` is one of ``min_no``, ``max_strong``, ``combined_thirds``, ``random``."""

    strategy: str
    size: int
    etype: EmpathyType | None = None
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"subset size must be >= 1, got {self.size}")
        if self.strategy in ("min_no", "max_strong"):
            if self.etype is None:
                raise ValueError(f"{self.strategy} needs an empathy type")
            object.__setattr__(self, "etype", EmpathyType(self.etype))
        elif self.strategy in ("combined_thirds", "random"):
            if self.etype is not None:
                raise ValueError(f"{self.strategy} takes no empathy type")
        else:
            raise ValueError(f"unknown selection strategy {self.strategy!r}")
        if self.strategy == "combined_thirds" and self.size < 3:
            raise ValueError("combined_thirds needs size >= 3")

    def to_dict(self):
        d = {"strategy": self.strategy, "size": self.size}
        if self.etype is not None:
            d["etype"] = self.etype.value
        if self.strategy == "random":
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["strategy"], int(d["size"]), d.get("etype"), int(d.get("seed", 0)))

    @classmethod
    def parse(cls, text: str, size: int, seed: int = 0) -> "SelectionSpec":
        """Parse ``min_no:EX``, ``max_strong:IP``, ``combined_thirds`` or ``random``."""
        name, _, etype = text.partition(":")
        return cls(name, size, etype or None, seed if name == "random" else 0)

    @property
    def label(self) -> str:
        if self.strategy == "min_no":
            return self.etype.value
        if self.strategy == "max_strong":
            return f"strong-{self.etype.value}"
        return {"combined_thirds": "thirds", "random": "random"}[self.strategy]


@dataclass(frozen=True)
class CuratedSubset:
    spec: SelectionSpec
    ids: tuple
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "ids": list(self.ids), "provenance": self.provenance}


def _subset(records, spec, ids):
    assert len(set(ids)) == len(ids)
    prov = {"input_digest": records_digest(records), "spec": spec.to_dict(), "tool_version": __version__}
    return CuratedSubset(spec, tuple(ids), prov)


def _check_k(records, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(records):
        warnings.warn(f"requested {k} records but only {len(records)} available; returning all", SelectionWarning, stacklevel=3)


def _ranked(records, etype, cls, descending=False):
    col = CLASSES.index(cls)
    sign = -1.0 if descending else 1.0
    return sorted(records, key=lambda r: (sign * r.scores[etype][col], id_key(r.id)))


def select_min_no(records, etype, k: int) -> CuratedSubset:
    """The ``k`` records least likely to show *no* communication of ``etype``."""
    etype = EmpathyType(etype)
    _check_k(records, k)
    ranked = _ranked(records, etype, "no")
    return _subset(records, SelectionSpec("min_no", k, etype), [r.id for r in ranked[:k]])


def select_max_strong(records, etype, k: int) -> CuratedSubset:
    etype = EmpathyType(etype)
    _check_k(records, k)
    ranked = _ranked(records, etype, "strong", descending=True)
    return _subset(records, SelectionSpec("max_strong", k, etype), [r.id for r in ranked[:k]])


def combined_quotas(k: int) -> dict:
    base, rem = divmod(k, 3)
    return {t: base + (i < rem) for i, t in enumerate(COMBINED_ORDER)}


def select_combined(records, k: int) -> CuratedSubset:
    """A third of ``k`` per empathy type by lowest ``ll_no``.

    Types pick in the order EX, IP, ER, and the remainder goes to them in that
    order. A record already claimed by an earlier type is skipped and the next
    ranked record is taken instead.
    """
    if k < 3:
        raise ValueError(f"combined selection needs k >= 3, got {k}")
    _check_k(records, k)
    chosen, taken = [], set()
    for etype, quota in combined_quotas(k).items():
        got = 0
        for r in _ranked(records, etype, "no"):
            if got == quota:
                break
            if r.id in taken:
                continue
            taken.add(r.id)
            chosen.append(r.id)
            got += 1
    return _subset(records, SelectionSpec("combined_thirds", k), chosen)


def select_random(records, k: int, seed: int) -> CuratedSubset:
    """Uniform sample without replacement; a pure function of the record set and seed."""
    _check_k(records, k)
    ordered = sorted(records, key=lambda r: id_key(r.id))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ordered), size=min(k, len(ordered)), replace=False)
    return _subset(records, SelectionSpec("random", k, seed=seed), [ordered[i].id for i in idx])


def select(records, spec: SelectionSpec) -> CuratedSubset:
    if spec.strategy == "min_no":
        return select_min_no(records, spec.etype, spec.size)
    if spec.strategy == "max_strong":
        return select_max_strong(records, spec.etype, spec.size)
    if spec.strategy == "combined_thirds":
        return select_combined(records, spec.size)
    return select_random(records, spec.size, spec.seed)


def class_distribution(records) -> dict:
    """Counts of the most likely class per empathy type; ties go to no, then weak, then strong."""
    table = {t: dict.fromkeys(CLASSES, 0) for t in EmpathyType}
    for r in records:
        for t in EmpathyType:
            table[t][CLASSES[int(np.argmax(r.scores[t]))]] += 1
    return table


def format_class_distribution(table) -> str:
    types = list(EmpathyType)
    rows = [["Strength"] + [t.value for t in types]]
    for c in reversed(CLASSES):
        rows.append([c] + [f"{table[t][c]:,}" for t in types])
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def export_subset_corpus(records, subset: CuratedSubset) -> list[str]:
    by_id = {r.id: r for r in records}
    return [by_id[i].text for i in subset.ids]


def load_empathy_lexicons(path=None) -> dict:
    """Keyword lists per empathy type, ``{"ER": [...], "IP": [...], "EX": [...]}``."""
    if path is None:
        text = resources.files("empadetox").joinpath("data/empathy_lexicons.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    raw = json.loads(text)
    return {EmpathyType(k): [tuple(tokenize(p)) for p in v if tokenize(p)] for k, v in raw.items()}


def _count_phrases(tokens, phrases):
    n = 0
    for ph in phrases:
        L = len(ph)
        n += sum(1 for i in range(len(tokens) - L + 1) if tuple(tokens[i : i + L]) == ph)
    return n


def synthesize_score_records(corpus, lexicons=None, seed: int = 0) -> list[dict]:
    """Heuristic stand-in for an empathy classifier, for pipeline testing only.

    Keyword density ``x = min(1, 4 * matches / tokens)`` per type sets class
    log-odds ``no: 3 - 6x``, ``weak: 0``, ``strong: -3 + 6x``, plus seeded
    Gaussian jitter (sd 0.3), normalized with log-sum-exp. Records get integer
    ids in corpus order.
    """
    if lexicons is None:
        lexicons = load_empathy_lexicons()
    rng = np.random.default_rng(seed)
    out = []
    for i, line in enumerate(corpus):
        toks = tokenize(line)
        rec = {"id": i, "text": line}
        for t in EmpathyType:
            x = min(1.0, 4.0 * _count_phrases(toks, lexicons.get(t, ())) / len(toks)) if toks else 0.0
            logits = np.array([3.0 - 6.0 * x, 0.0, -3.0 + 6.0 * x]) + rng.normal(0.0, 0.3, 3)
            lse = logits.max() + math.log(np.exp(logits - logits.max()).sum())
            for c, v in zip(CLASSES, logits - lse):
                rec[f"{t.prefix}_{c}"] = float(v)
        out.append(rec)
    return out


_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def subset_filename(spec: SelectionSpec) -> str:
    return _SAFE.sub("-", f"{spec.label}-{spec.size}")
