import os
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from empadetox.lm import build_vocabulary, train_ngram

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY_CORPUS = [
    "the cat sat on the mat .",
    "the dog sat on the log .",
    "a cat and a dog !",
    "you are a fucking idiot !",
    "you are a good friend .",
]


@pytest.fixture(scope="session")
def tiny_corpus():
    return list(TINY_CORPUS)


@pytest.fixture(scope="session")
def tiny_vocab():
    return build_vocabulary(TINY_CORPUS)


@pytest.fixture(scope="session")
def tiny_model(tiny_vocab):
    return train_ngram(TINY_CORPUS, tiny_vocab, order=3, add_k=0.1)


# ---------------------------------------------------------------- acceptance summary
#
# Tests marked ``acceptance(n, "name")`` contribute one PASS/FAIL line to the
# terminal summary, so the acceptance status is visible even under output capture.

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, name): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, name = marker.args
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE[number] = (name, rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, outcome, detail = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] criterion {number}: {name}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------- metric fixture
#
# 5 prompts x 4 continuations: (text, terminated by EOS?, toxicity). Scores are
# dyadic so sums are exact in binary floating point. The hand-derived values
# below were tabulated by hand from these rows.

METRIC_ROWS = [
    [("you are nice", True, 0.125), ("you are a jerk", False, 0.75), ("nice nice", True, 0.0), ("ok", True, 0.25)],
    [("a b a b", True, 0.5), ("b a", True, 0.25), ("a", False, 0.125), ("c d e", True, 0.375)],
    [("x y z", True, 0.0), ("x y", True, 0.0), ("x", True, 0.0), ("y z", True, 0.0)],
    [("damn it", True, 0.875), ("shit shit shit", False, 1.0), ("fine", True, 0.0), ("well then", True, 0.0625)],
    [("hello", True, 0.4375), ("hello there", True, 0.5), ("hi", True, 0.1875), ("hey you", True, 0.3125)],
]
METRIC_MAX_LENGTH = 5
METRIC_LEXICON = ["damn", "shit", "jerk"]
METRIC_HAND = {
    "avg_max_toxicity": Fraction(11, 20),
    "toxicity_probability": Fraction(4, 5),
    "distinct_1": (Fraction(6, 10) + Fraction(5, 10) + Fraction(3, 8) + Fraction(6, 8) + Fraction(5, 6)) / 5,
    "distinct_2": (Fraction(5, 6) + Fraction(4, 6) + Fraction(2, 4) + Fraction(3, 4) + Fraction(2, 2)) / 5,
    "distinct_3": Fraction(1),
    "distinct_3_excluded": 1,
    "length_counts": [1, 5, 9, 4, 1],
    "length_means": [Fraction(1, 8), Fraction(7, 40), Fraction(1, 3), Fraction(5, 16), Fraction(1, 2)],
    "length_profanity": [0, 0, Fraction(2, 9), Fraction(1, 4), 0],
}


def make_generation_sets(rows, attribute="toxicity"):
    from empadetox.ensemble import Continuation, GenerationSet
    from empadetox.toxicity import AttributeScores

    sets = []
    for p, conts in enumerate(rows):
        gs = GenerationSet(f"p{p}", f"prompt {p}", [], [])
        for text, eos, score in conts:
            tokens = tuple(text.split())
            ids = tuple(range(10, 10 + len(tokens))) + ((1,) if eos else ())
            gs.continuations.append(Continuation(ids, text, tokens, "eos" if eos else "max_length"))
            gs.scores.append(AttributeScores(**{attribute: score}))
        sets.append(gs)
    return sets


@pytest.fixture
def metric_sets():
    return make_generation_sets(METRIC_ROWS)
