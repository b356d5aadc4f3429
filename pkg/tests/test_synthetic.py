"""The synthetic sources behind the learnability and scaling acceptance checks."""

import math

import numpy as np
import pytest

from esnlm.synthetic import AgreementGrammar, MarkovSentenceSource


def true_nll(src: MarkovSentenceSource, sent: list[int]) -> float:
    """Negative log-probability of ``sent`` plus EOS under the generating process."""
    p = np.asarray(src.transition)
    states = [(t - 2) // src.emit_size for t in sent]
    nll = -math.log(src.stationary[states[0]]) + math.log(src.emit_size)
    for k in range(1, len(sent)):
        if k >= src.min_content:
            nll -= math.log(1 - src.stop_prob)
        nll -= math.log(p[states[k - 1], states[k]]) - math.log(src.emit_size)
    return nll - math.log(src.stop_prob)


def test_markov_entropy_matches_monte_carlo():
    src = MarkovSentenceSource()
    sents = src.sample(400_000, np.random.default_rng(0))
    total = math.fsum(true_nll(src, s) for s in sents)
    predictions = sum(len(s) + 1 for s in sents)
    assert total / predictions == pytest.approx(src.entropy_per_token(), rel=5e-3)


def test_markov_sentences_respect_minimum_and_alphabet():
    src = MarkovSentenceSource()
    for s in src.sample(5000, np.random.default_rng(1)):
        assert len(s) >= src.min_content
        assert all(2 <= t < src.vocab_size for t in s)


def test_agreement_pairs_differ_only_at_the_verb():
    g = AgreementGrammar()
    verbs = range(g.verb(0, 0), g.verb(1, g.n_verbs - 1) + 1)
    for good, bad, tag in g.minimal_pairs(300, np.random.default_rng(2)):
        diff = [i for i, (a, b) in enumerate(zip(good, bad)) if a != b]
        assert len(good) == len(bad) and len(diff) == 1
        i = diff[0]
        assert good[i] in verbs and bad[i] in verbs
        noun_cls = (good[0] - 2) // g.n_nouns
        assert (good[i] - g.verb(0, 0)) // g.n_verbs == noun_cls != (bad[i] - g.verb(0, 0)) // g.n_verbs
        assert tag == ("agreement_short" if i <= 3 else "agreement_long")


def test_agreement_grammar_is_reproducible():
    a = AgreementGrammar().sample(2000, np.random.default_rng(3))
    b = AgreementGrammar().sample(2000, np.random.default_rng(3))
    assert a == b
    assert all(max(s) < AgreementGrammar().vocab_size for s in a)
