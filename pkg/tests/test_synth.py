import pytest

from flakyfuse.corpus import FLAKY_CATEGORIES, FlakinessCategory, tokenize
from flakyfuse.dtm import mine, score_tokens
from flakyfuse.synth import SIGNAL_STATEMENTS, SynthSpec, generate, planted_tokens

C = FlakinessCategory


def test_default_counts_match_spec():
    spec = SynthSpec()
    corpus = generate(spec)
    assert len(corpus) == 400 and len(corpus.projects) == 40
    assert dict(corpus.category_counts) == spec.category_counts()
    assert sum(corpus.category_counts[c] for c in FLAKY_CATEGORIES) == 40
    assert corpus.category_counts[C.NON_FLAKY] == 360


def test_generation_is_seeded():
    a, b = generate(SynthSpec(seed=7)), generate(SynthSpec(seed=7))
    assert [t.to_record() for t in a] == [t.to_record() for t in b]
    assert [t.source for t in generate(SynthSpec(seed=8))] != [t.source for t in a]


@pytest.mark.parametrize("bad", [{"n_tests": 10, "n_projects": 20}, {"flaky_fraction": 1.5},
                                 {"q_signal": -0.1}, {"n_flaky": 500}])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        SynthSpec(**bad)


def test_signal_statements_tokenize_to_planted_tokens():
    for cat in FLAKY_CATEGORIES:
        assert len(SIGNAL_STATEMENTS[cat]) == 10
        per_statement = [tokenize(stmt) for stmt in SIGNAL_STATEMENTS[cat]]
        assert all(len(toks) == 1 for toks in per_statement)
        assert {toks[0] for toks in per_statement} == planted_tokens(cat)
        assert len(planted_tokens(cat)) == 10


def test_planted_tokens_span_enough_projects():
    corpus = generate(SynthSpec(seed=1))
    for cat in FLAKY_CATEGORIES:
        projects = {t.project for t in corpus if t.label is cat}
        assert len(projects) >= 3


def test_planted_rate_tracks_q_signal():
    corpus = generate(SynthSpec(n_tests=4000, n_projects=40, flaky_fraction=0.25, seed=2))
    for cat in FLAKY_CATEGORIES:
        own = [set(tokenize(t.source)) for t in corpus if t.label is cat]
        other = [set(tokenize(t.source)) for t in corpus if t.label is C.NON_FLAKY]
        for tok in planted_tokens(cat):
            assert sum(tok in s for s in own) / len(own) == pytest.approx(0.8, abs=0.1)
            assert sum(tok in s for s in other) / len(other) == pytest.approx(0.05, abs=0.03)


def test_no_contrast_when_signal_equals_noise():
    corpus = generate(SynthSpec(q_signal=0.05, q_noise=0.05, seed=0))
    scored = [s for cat in C for s in score_tokens(corpus, cat)]
    significant = sum(s.p_value < 0.05 for s in scored) / len(scored)
    assert significant < 0.05
    vocab = mine(corpus)
    recovered = sum(len(set(planted_tokens(c)) & set(vocab.tokens(c))) for c in FLAKY_CATEGORIES)
    assert recovered <= 5


def test_reference_imbalance_at_five_percent():
    spec = SynthSpec.paper_scaled(0.05)
    corpus = generate(spec)
    assert len(corpus) == 429
    flaky = sum(corpus.category_counts[c] for c in FLAKY_CATEGORIES)
    assert flaky == 14 and corpus.category_counts[C.NON_FLAKY] == 415
    assert flaky / len(corpus) == pytest.approx(280 / 8574, abs=1e-3)
