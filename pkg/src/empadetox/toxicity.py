"""Perspective-style attribute scores and a local lexicon scorer.

Lexicon files list one phrase per line with an optional tab-separated weight
and comma-separated attribute list::

    damn
    kill you\t0.9\ttoxicity,threat,severe_toxicity

A bare phrase gets weight 0.8 and contributes to ``toxicity`` and ``profanity``.
Lines starting with ``#`` are comments.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from importlib import resources

from .text import tokenize

log = logging.getLogger(__name__)

ATTRIBUTES = (
    "toxicity",
    "severe_toxicity",
    "identity_attack",
    "insult",
    "profanity",
    "threat",
    "sexually_explicit",
    "flirtation",
)
DEFAULT_WEIGHT = 0.8
DEFAULT_ATTRIBUTES = ("toxicity", "profanity")
DENSITY_SCALE = 4.0


@dataclass(frozen=True)
class AttributeScores:
    toxicity: float = 0.0
    severe_toxicity: float = 0.0
    identity_attack: float = 0.0
    insult: float = 0.0
    profanity: float = 0.0
    threat: float = 0.0
    sexually_explicit: float = 0.0
    flirtation: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} score must be in [0, 1], got {v!r}")
            object.__setattr__(self, f.name, float(v))

    def __getitem__(self, attribute):
        if attribute not in ATTRIBUTES:
            raise KeyError(attribute)
        return getattr(self, attribute)

    def to_dict(self) -> dict:
        return {a: getattr(self, a) for a in ATTRIBUTES}

    @classmethod
    def from_dict(cls, d) -> "AttributeScores":
        missing = [a for a in ATTRIBUTES if a not in d]
        if missing:
            raise ValueError(f"missing attributes {missing}")
        return cls(**{a: d[a] for a in ATTRIBUTES})


@dataclass(frozen=True)
class LexiconEntry:
    phrase: tuple[str, ...]
    weight: float
    attributes: frozenset


class Lexicon:
    """Phrases keyed by their token tuple. Duplicate phrases merge to max weight and union of attributes."""

    def __init__(self, entries=()):
        merged = {}
        for e in entries:
            if not e.phrase:
                raise ValueError("empty lexicon phrase")
            if not 0 < e.weight <= 1:
                raise ValueError(f"weight for {' '.join(e.phrase)!r} must be in (0, 1], got {e.weight}")
            bad = set(e.attributes) - set(ATTRIBUTES)
            if bad:
                raise ValueError(f"unknown attributes {sorted(bad)} for {' '.join(e.phrase)!r}")
            prev = merged.get(e.phrase)
            if prev is not None:
                e = LexiconEntry(e.phrase, max(prev.weight, e.weight), prev.attributes | e.attributes)
            merged[e.phrase] = e
        self.entries = {p: merged[p] for p in sorted(merged)}
        self.max_len = max((len(p) for p in self.entries), default=0)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, phrase):
        return tuple(tokenize(phrase)) in self.entries


def parse_lexicon(lines) -> Lexicon:
    entries = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        phrase = tuple(tokenize(parts[0]))
        if not phrase:
            raise ValueError(f"lexicon line {lineno}: no tokens in phrase {parts[0]!r}")
        try:
            weight = float(parts[1]) if len(parts) > 1 and parts[1].strip() else DEFAULT_WEIGHT
        except ValueError:
            raise ValueError(f"lexicon line {lineno}: bad weight {parts[1]!r}") from None
        attrs = DEFAULT_ATTRIBUTES
        if len(parts) > 2 and parts[2].strip():
            attrs = tuple(a.strip() for a in parts[2].split(",") if a.strip())
        entries.append(LexiconEntry(phrase, weight, frozenset(attrs)))
    try:
        return Lexicon(entries)
    except ValueError as e:
        raise ValueError(f"invalid lexicon: {e}") from None


def load_lexicon(path=None) -> Lexicon:
    """Read a lexicon file; ``None`` loads the bundled default list."""
    if path is None:
        text = resources.files("empadetox").joinpath("data/default_lexicon.txt").read_text(encoding="utf-8")
        return parse_lexicon(text.splitlines())
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f)


def find_matches(tokens, lexicon: Lexicon):
    """``(start, entry)`` for every phrase occurrence on token boundaries."""
    found = []
    n = len(tokens)
    for i in range(n):
        for L in range(1, min(lexicon.max_len, n - i) + 1):
            e = lexicon.entries.get(tuple(tokens[i : i + L]))
            if e is not None:
                found.append((i, e))
    return found


def score_lexicon(text: str, lexicon: Lexicon) -> AttributeScores:
    """Score ``1 - prod(1 - weight * density)`` over matched phrases, per attribute.

    ``density = min(1, 4 * covered / tokens)`` where ``covered`` counts tokens
    inside at least one match. Matching is case-insensitive on token
    boundaries.
    """
    tokens = tokenize(text)
    matches = find_matches(tokens, lexicon)
    if not matches:
        return AttributeScores()
    covered = set()
    for start, e in matches:
        covered.update(range(start, start + len(e.phrase)))
    density = min(1.0, DENSITY_SCALE * len(covered) / len(tokens))
    complement = dict.fromkeys(ATTRIBUTES, 1.0)
    # sorted so the float product is independent of lexicon file order
    for e in sorted({e.phrase: e for _, e in matches}.values(), key=lambda e: e.phrase):
        for a in sorted(e.attributes):
            complement[a] *= 1.0 - e.weight * density
    return AttributeScores(**{a: min(1.0, max(0.0, 1.0 - c)) for a, c in complement.items()})


def contains_profanity(text: str, lexicon: Lexicon) -> bool:
    return bool(find_matches(tokenize(text), lexicon))


class LexiconScorer:
    """Callable scorer wrapping :func:`score_lexicon`."""

    scorer_id = "lexicon"

    def __init__(self, lexicon: Lexicon | None = None):
        self.lexicon = lexicon if lexicon is not None else load_lexicon()

    def __call__(self, text: str) -> AttributeScores:
        return score_lexicon(text, self.lexicon)


def score_batch(texts, scorer, workers: int = 1):
    """Score texts in order. Returns ``(scores, errors)``.

    ``scores[i]`` is ``None`` when item ``i`` failed; ``errors`` maps the index
    to the exception. One failure never aborts the batch.
    """
    texts = list(texts)
    results = [None] * len(texts)
    errors = {}

    def one(i):
        try:
            results[i] = scorer(texts[i])
        except Exception as e:  # noqa: BLE001 - reported per item
            log.warning("scoring item %d failed: %s", i, e)
            errors[i] = e

    if workers <= 1:
        for i in range(len(texts)):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(len(texts))))
    return results, dict(sorted(errors.items()))
