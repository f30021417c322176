"""Vocabulary and interpolated add-k n-gram language models.

These are desk-scale stand-ins for the base, expert and anti-expert LMs. Every
model over a given :class:`Vocabulary` exposes a strictly positive next-token
distribution, so the logit arithmetic in :mod:`empadetox.ensemble` never meets
``-inf``.

Smoothing: for a history ``h`` the order-``j`` estimate is
``(c(h_j, w) + k) / (c(h_j) + k|V|)`` where ``h_j`` is the last ``j`` tokens.
Orders are mixed with fixed weights, but only up to the longest suffix of
``h`` observed in training; unseen suffixes are dropped and the remaining
weights renormalized. An unseen context therefore yields exactly the
distribution of its longest seen suffix.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fileio import atomic_open
from .text import detokenize, tokenize

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (BOS, EOS, UNK)

LOG_FLOOR = math.log(1e-300)
MODEL_FORMAT = "empadetox.ngram"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """A model file is missing, truncated, or not a model of a supported version."""


class Vocabulary:
    """Dense 0-based token ids. ``<s>``, ``</s>`` and ``<unk>`` are ids 0, 1, 2."""

    bos_id = 0
    eos_id = 1
    unk_id = 2

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:3] != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            index[tok] = i
        self.tokens = tokens
        self.index = index

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def __repr__(self):
        return f"Vocabulary({len(self)} tokens)"

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def encode(self, text: str) -> "TokenSequence":
        return TokenSequence(tuple(self.id(t) for t in tokenize(text)), text)

    def encode_tokens(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        return detokenize(self.content_tokens(ids) if skip_special else [self.tokens[i] for i in ids])

    def content_tokens(self, ids: Iterable[int]) -> list[str]:
        """Token strings with BOS/EOS removed. UNK is kept as ``<unk>``."""
        return [self.tokens[i] for i in ids if i not in (self.bos_id, self.eos_id)]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    source_text: str | None = None

    def __len__(self):
        return len(self.ids)


def _ids(seq) -> tuple[int, ...]:
    if isinstance(seq, TokenSequence):
        return seq.ids
    return tuple(int(i) for i in seq)


def build_vocabulary(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_count`` times.

    Ordered by descending frequency, ties broken lexicographically, after the
    three reserved tokens.
    """
    counts = Counter()
    for line in corpus:
        counts.update(tokenize(line))
    if not counts:
        raise ValueError("empty corpus")
    for special in SPECIALS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIALS + tuple(kept))


class NGramModel:
    """Immutable trained n-gram model. Build with :func:`train_ngram` or :func:`load_model`.

    ``tables[j]`` maps a length-``j`` context tuple to ``(token_ids, counts, total)``.
    """

    def __init__(self, vocab: Vocabulary, order: int, add_k: float, tables, weights=None):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if not add_k > 0:
            raise ValueError(f"add_k must be > 0, got {add_k}")
        if weights is None:
            weights = [1.0 / order] * order
        weights = [float(w) for w in weights]
        if len(weights) != order or any(w < 0 or not math.isfinite(w) for w in weights) or sum(weights) <= 0:
            raise ValueError(f"need {order} non-negative interpolation weights with positive sum, got {weights}")
        if len(tables) != order or () not in tables[0]:
            raise ValueError("count tables must cover every order and include the empty context")
        self.vocab = vocab
        self.order = order
        self.add_k = float(add_k)
        self.weights = tuple(weights)
        self.tables = tables
        self._dist = lru_cache(maxsize=1 << 16)(self._compute_distribution)

    @property
    def context_size(self) -> int:
        return self.order - 1

    def _order_estimate(self, j: int, ctx: tuple) -> np.ndarray:
        V = len(self.vocab)
        ids, counts, total = self.tables[j][ctx]
        est = np.full(V, self.add_k)
        est[ids] += counts
        est /= total + self.add_k * V
        return est

    def longest_seen_suffix(self, history: Sequence[int]) -> tuple:
        history = tuple(history)
        longest = ()
        for j in range(1, min(len(history), self.context_size) + 1):
            ctx = history[-j:]
            if ctx not in self.tables[j]:
                break
            longest = ctx
        return longest

    def _compute_distribution(self, history: tuple) -> np.ndarray:
        seen = self.longest_seen_suffix(history)
        m = len(seen)
        weight_sum = math.fsum(self.weights[: m + 1])
        if weight_sum == 0:
            probs = self._order_estimate(m, seen)
        else:
            probs = np.zeros(len(self.vocab))
            for j in range(m + 1):
                if self.weights[j]:
                    probs += (self.weights[j] / weight_sum) * self._order_estimate(j, seen[len(seen) - j :])
        probs.setflags(write=False)
        return probs

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        """Next-token probabilities given the raw (already padded) history. Read-only array."""
        history = _ids(history)
        if self.context_size:
            history = history[-self.context_size :]
        else:
            history = ()
        return self._dist(history)

    def padded(self, context) -> tuple[int, ...]:
        return (self.vocab.bos_id,) * self.context_size + _ids(context)

    def __repr__(self):
        return f"NGramModel(order={self.order}, add_k={self.add_k}, vocab={len(self.vocab)})"


def train_ngram(corpus: Iterable[str], vocab: Vocabulary, order: int = 3, add_k: float = 0.1, weights=None) -> NGramModel:
    """Count n-grams over a line corpus (one sample per line) with BOS padding and a final EOS."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not add_k > 0:
        raise ValueError(f"add_k must be > 0, got {add_k}")
    raw = [dict() for _ in range(order)]
    raw[0][()] = Counter()
    known = 0
    for line in corpus:
        toks = tokenize(line)
        if not toks:
            continue
        ids = vocab.encode_tokens(toks)
        known += sum(i != vocab.unk_id for i in ids)
        padded = (vocab.bos_id,) * (order - 1) + ids + (vocab.eos_id,)
        for i in range(order - 1, len(padded)):
            target = padded[i]
            for j in range(order):
                raw[j].setdefault(padded[i - j : i], Counter())[target] += 1
    if known == 0:
        raise ValueError("corpus contains no in-vocabulary token")
    return NGramModel(vocab, order, add_k, _freeze_tables(raw), weights)


def _freeze_tables(raw):
    tables = []
    for level in raw:
        frozen = {}
        for ctx in sorted(level):
            items = sorted(level[ctx].items())
            ids = np.array([t for t, _ in items], dtype=np.int64)
            counts = np.array([c for _, c in items], dtype=np.float64)
            frozen[ctx] = (ids, counts, int(sum(c for _, c in items)))
        tables.append(frozen)
    return tables


def uniform_model(vocab: Vocabulary, add_k: float = 1.0) -> NGramModel:
    """Untrained unigram model: every token, specials included, has probability 1/|V|."""
    return NGramModel(vocab, 1, add_k, _freeze_tables([{(): Counter()}]))


def next_token_logits(model: NGramModel, context=()) -> np.ndarray:
    """Natural-log next-token probabilities; the context is left-padded with BOS.

    Only the final ``order - 1`` tokens of the padded context are used.
    """
    probs = model.distribution(model.padded(context))
    return np.log(np.maximum(probs, 1e-300))


def sequence_log_likelihood(model: NGramModel, seq, add_eos: bool = True) -> float:
    """Sum of per-token conditional log-probabilities (nats), BOS-padded, with a terminal EOS."""
    ids = _ids(seq)
    if not ids:
        raise ValueError("empty sequence")
    padded = model.padded(()) + ids + ((model.vocab.eos_id,) if add_eos else ())
    start = model.context_size
    total = 0.0
    for i in range(start, len(padded)):
        p = model.distribution(padded[:i])[padded[i]]
        total += max(math.log(p) if p > 0 else LOG_FLOOR, LOG_FLOOR)
    return total


def perplexity(model: NGramModel, sequences) -> float:
    """``exp(-total log-likelihood / total predicted tokens)``; each sequence counts its EOS.

    Empty sequences are skipped.
    """
    if isinstance(sequences, TokenSequence):
        sequences = [sequences]
    total_ll = 0.0
    total_tokens = 0
    for seq in sequences:
        ids = _ids(seq)
        if not ids:
            continue
        total_ll += sequence_log_likelihood(model, ids)
        total_tokens += len(ids) + 1
    if total_tokens == 0:
        raise ValueError("perplexity needs at least one non-empty sequence")
    return math.exp(-total_ll / total_tokens)


def model_to_dict(model: NGramModel) -> dict:
    counts = []
    for level in model.tables:
        counts.append([[list(ctx), [[int(t), int(c)] for t, c in zip(ids, cnt)]] for ctx, (ids, cnt, _) in level.items()])
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "order": model.order,
        "add_k": model.add_k,
        "weights": list(model.weights),
        "vocab": list(model.vocab.tokens),
        "counts": counts,
    }


def model_from_dict(data: dict) -> NGramModel:
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not an n-gram model file (missing or wrong 'format' field)")
    if data.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {data.get('version')!r}, expected {MODEL_VERSION}")
    try:
        vocab = Vocabulary(data["vocab"])
        order = int(data["order"])
        V = len(vocab)
        raw = []
        for level in data["counts"]:
            table = {}
            for ctx, items in level:
                ctx = tuple(int(i) for i in ctx)
                if any(not 0 <= i < V for i in ctx) or any(not 0 <= int(t) < V for t, _ in items):
                    raise ModelFormatError("token id out of vocabulary range")
                table[ctx] = Counter({int(t): int(c) for t, c in items})
            raw.append(table)
        return NGramModel(vocab, order, float(data["add_k"]), _freeze_tables(raw), data["weights"])
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"corrupt model file: {type(e).__name__}: {e}") from e


def save_model(model: NGramModel, path) -> None:
    """Write the model as canonical JSON (sorted, no whitespace variance)."""
    with atomic_open(path) as f:
        json.dump(model_to_dict(model), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_model(path) -> NGramModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ModelFormatError(f"model file not found: {path}") from None
    except UnicodeDecodeError as e:
        raise ModelFormatError(f"{path}: not UTF-8 text ({e.reason})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: invalid JSON at line {e.lineno} col {e.colno}: {e.msg}") from None
    try:
        return model_from_dict(data)
    except ModelFormatError as e:
        raise ModelFormatError(f"{path}: {e}") from None
