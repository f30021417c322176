"""Expert/anti-expert logit ensembles and the sampling loop.

At each step the base, expert and anti-expert logits are combined as
``softmax(z + alpha * (z_plus - z_minus))``, divided by the temperature,
truncated to the nucleus, and sampled.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .lm import NGramModel, next_token_logits
from .text import tokenize


@dataclass(frozen=True)
class EnsembleConfig:
    alpha: float = 2.0
    nucleus_p: float = 0.9
    max_new_tokens: int = 20
    temperature: float = 1.0
    seed: int = 0
    num_continuations: int = 25

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")
        if not 0 < self.nucleus_p <= 1:
            raise ValueError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.num_continuations < 1:
            raise ValueError(f"num_continuations must be >= 1, got {self.num_continuations}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Continuation:
    token_ids: tuple[int, ...]
    text: str
    tokens: tuple[str, ...]
    terminated_by: str  # "eos" or "max_length"

    @property
    def length(self) -> int:
        """Generated tokens, counting a terminating EOS."""
        return len(self.token_ids)


@dataclass
class GenerationSet:
    """A prompt with its continuations and (once scored) one score object per continuation."""

    prompt_id: str
    prompt: str
    continuations: list[Continuation]
    scores: list = field(default_factory=list)


@dataclass(frozen=True)
class ExpertEnsemble:
    base: NGramModel
    expert: NGramModel
    anti: NGramModel

    def __post_init__(self):
        check_shared_vocabulary(self.base, self.expert, self.anti)

    @property
    def vocab(self):
        return self.base.vocab


def check_shared_vocabulary(*models):
    first = models[0].vocab
    for m in models[1:]:
        if m.vocab != first:
            raise ValueError("vocabulary mismatch: all ensemble models must share one vocabulary")


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _combined_scores(z, z_plus, z_minus, alpha):
    z, z_plus, z_minus = (np.asarray(v, dtype=np.float64) for v in (z, z_plus, z_minus))
    if not (z.shape == z_plus.shape == z_minus.shape) or z.ndim != 1:
        raise ValueError(f"logit length mismatch: {z.shape}, {z_plus.shape}, {z_minus.shape}")
    return z + alpha * (z_plus - z_minus)


def combine_logits(z, z_plus, z_minus, alpha: float) -> np.ndarray:
    """Probabilities ``softmax(z + alpha * (z_plus - z_minus))``."""
    return _softmax(_combined_scores(z, z_plus, z_minus, alpha))


def nucleus_filter(probs, p: float) -> np.ndarray:
    """Keep the smallest top-probability prefix with mass >= ``p``, renormalized."""
    probs = np.asarray(probs, dtype=np.float64)
    if p >= 1.0:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    keep = min(int(np.searchsorted(cum, p * cum[-1] - 1e-12, side="left")) + 1, len(probs))
    out = np.zeros_like(probs)
    kept = order[:keep]
    out[kept] = probs[kept] / probs[kept].sum()
    return out


def sample_token(probs, rng: np.random.Generator) -> int:
    probs = np.asarray(probs, dtype=np.float64)
    cum = np.cumsum(probs)
    total = cum[-1]
    if not total > 0:
        raise ValueError("cannot sample from an all-zero probability vector")
    u = rng.random() * total
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= len(probs):
        idx = int(np.flatnonzero(probs)[-1])
    return idx


def step_probs(ensemble: ExpertEnsemble, context, alpha: float, temperature: float = 1.0) -> np.ndarray:
    """Ensemble next-token distribution (before nucleus truncation) for a context of ids."""
    scores = _combined_scores(
        next_token_logits(ensemble.base, context),
        next_token_logits(ensemble.expert, context),
        next_token_logits(ensemble.anti, context),
        alpha,
    )
    return _softmax(scores / temperature)


def derive_rng(seed: int, prompt_index: int = 0, continuation_index: int = 0) -> np.random.Generator:
    """Independent stream per (seed, prompt, continuation), via SeedSequence hashing."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, prompt_index, continuation_index])))


def generate(base, expert, anti, prompt: str, config: EnsembleConfig, rng=None) -> Continuation:
    ens = ExpertEnsemble(base, expert, anti)
    if rng is None:
        rng = derive_rng(config.seed)
    vocab = ens.vocab
    context = list(vocab.encode_tokens(tokenize(prompt)))
    out = []
    terminated_by = "max_length"
    for _ in range(config.max_new_tokens):
        probs = nucleus_filter(step_probs(ens, context, config.alpha, config.temperature), config.nucleus_p)
        tok = sample_token(probs, rng)
        out.append(tok)
        if tok == vocab.eos_id:
            terminated_by = "eos"
            break
        context.append(tok)
    tokens = tuple(vocab.content_tokens(out))
    return Continuation(tuple(out), vocab.decode(out), tokens, terminated_by)


def generate_set(ensemble: ExpertEnsemble, prompt: str, config: EnsembleConfig, prompt_index: int = 0, prompt_id=None) -> GenerationSet:
    conts = [
        generate(ensemble.base, ensemble.expert, ensemble.anti, prompt, config, derive_rng(config.seed, prompt_index, i))
        for i in range(config.num_continuations)
    ]
    return GenerationSet(str(prompt_index if prompt_id is None else prompt_id), prompt, conts)
