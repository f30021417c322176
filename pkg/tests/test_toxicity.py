import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from empadetox.toxicity import (
    ATTRIBUTES,
    AttributeScores,
    LexiconScorer,
    contains_profanity,
    load_lexicon,
    parse_lexicon,
    score_batch,
    score_lexicon,
)

LEXICON_LINES = [
    "# test lexicon",
    "shit",
    "idiot\t0.7\ttoxicity,insult",
    "kill you\t0.9\ttoxicity,threat,severe_toxicity",
    "damn\t0.5",
]


@pytest.fixture(scope="module")
def lexicon():
    return parse_lexicon(LEXICON_LINES)


def test_no_match_scores_zero(lexicon):
    assert score_lexicon("what a lovely day", lexicon) == AttributeScores()
    assert score_lexicon("", lexicon) == AttributeScores()


def test_single_default_phrase_scores_its_weight(lexicon):
    s = score_lexicon("shit", lexicon)
    assert s.profanity == pytest.approx(0.8, abs=1e-12)
    assert s.toxicity == pytest.approx(0.8, abs=1e-12)
    assert s.insult == 0.0


def test_density_and_product_hand_computation(lexicon):
    # 8 tokens, "idiot" and "kill you" cover 3 -> density min(1, 4*3/8) = 1
    s = score_lexicon("you idiot , i will kill you now", lexicon)
    assert s.toxicity == pytest.approx(1 - (1 - 0.7) * (1 - 0.9))
    assert s.insult == pytest.approx(0.7)
    assert s.threat == pytest.approx(0.9)
    # 10 tokens, one match -> density 0.4
    s = score_lexicon("damn , the train was late again this week .", lexicon)
    assert s.profanity == pytest.approx(0.5 * 0.4)


def test_repeated_phrase_counts_once_in_product(lexicon):
    s = score_lexicon("shit shit", lexicon)
    assert s.profanity == pytest.approx(0.8)


def test_case_insensitive_token_boundaries(lexicon):
    assert score_lexicon("SHIT!", lexicon).profanity > 0
    assert contains_profanity("Holy SHIT", lexicon)
    assert not contains_profanity("shitake mushrooms", lexicon)
    assert not contains_profanity("", lexicon)
    assert contains_profanity("kill you", lexicon)
    assert not contains_profanity("skill you", lexicon)


sentences = st.lists(st.sampled_from(["shit", "idiot", "kill", "you", "nice", "day", ".", "damn", "the"]), max_size=15)


@given(sentences, st.sampled_from(["shit", "idiot", "kill you", "damn"]))
def test_appending_a_match_never_decreases(lexicon, tokens, phrase):
    # covered/tokens can only grow: (c + L) / (n + L) >= c / n whenever c <= n
    before = score_lexicon(" ".join(tokens), lexicon)
    after = score_lexicon(" ".join(tokens + phrase.split()), lexicon)
    for a in ATTRIBUTES:
        assert after[a] >= before[a] - 1e-12
        assert 0.0 <= after[a] <= 1.0


@given(st.randoms(use_true_random=False), sentences)
def test_lexicon_order_does_not_matter(lexicon, rnd, tokens):
    lines = LEXICON_LINES[1:]
    shuffled = list(lines)
    rnd.shuffle(shuffled)
    text = " ".join(tokens)
    assert score_lexicon(text, parse_lexicon(shuffled)) == score_lexicon(text, lexicon)


def test_duplicate_phrases_merge():
    lex = parse_lexicon(["hell\t0.3", "hell\t0.6\tinsult"])
    (entry,) = lex.entries.values()
    assert entry.weight == 0.6
    assert entry.attributes == {"toxicity", "profanity", "insult"}


@pytest.mark.parametrize("line, msg", [
    ("bad\t1.5", "weight"),
    ("bad\tabc", "bad weight"),
    ("bad\t0.5\tnot_an_attribute", "unknown attributes"),
    ("   \t0.5", "no tokens"),
])
def test_lexicon_parse_errors(line, msg):
    with pytest.raises(ValueError, match=msg):
        parse_lexicon([line])


def test_default_lexicon_loads():
    lex = load_lexicon()
    assert len(lex) > 20
    assert "fucking" in lex
    assert contains_profanity("you are a fucking idiot", lex)


def test_attribute_scores_validation_and_round_trip():
    s = AttributeScores(toxicity=0.5, insult=1)
    assert AttributeScores.from_dict(s.to_dict()) == s
    assert list(s.to_dict()) == list(ATTRIBUTES)
    with pytest.raises(ValueError):
        AttributeScores(toxicity=1.2)
    with pytest.raises(ValueError):
        AttributeScores(threat=float("nan"))
    with pytest.raises(ValueError, match="missing"):
        AttributeScores.from_dict({"toxicity": 0.1})
    with pytest.raises(KeyError):
        s["rudeness"]


@pytest.mark.parametrize("workers", [1, 4])
def test_score_batch_preserves_order_and_reports_failures(lexicon, workers):
    inner = LexiconScorer(lexicon)

    def flaky(text):
        if "boom" in text:
            raise RuntimeError("scorer exploded")
        return inner(text)

    texts = ["shit", "fine", "boom", "idiot", "boom again", "damn"]
    results, errors = score_batch(texts, flaky, workers=workers)
    assert sorted(errors) == [2, 4]
    assert all(isinstance(e, RuntimeError) for e in errors.values())
    assert results[2] is None and results[4] is None
    for i in (0, 1, 3, 5):
        assert results[i] == inner(texts[i])


def test_score_batch_thread_results_match_serial(lexicon):
    rng = random.Random(0)
    words = ["shit", "idiot", "kill", "you", "nice", "day", "."]
    texts = [" ".join(rng.choices(words, k=rng.randint(1, 12))) for _ in range(200)]
    scorer = LexiconScorer(lexicon)
    assert score_batch(texts, scorer, workers=1) == score_batch(texts, scorer, workers=8)
