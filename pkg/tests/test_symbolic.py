import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import TIMING_TEST, java_like
from flakyfuse.augment import rename_variables
from flakyfuse.corpus import Corpus, FlakinessCategory, TestCase, tokenize
from flakyfuse.dtm import mine
from flakyfuse.symbolic import (DEFAULT_GROUPS, N_FEATURES, N_GROUPS, FeatureGroupSpec,
                                FeatureOptions, batch_extract, extract, extract_from_tokens,
                                features_csv, group_presence, trigger_matches)
from flakyfuse.synth import SynthSpec, generate, planted_tokens

C = FlakinessCategory


@pytest.fixture(scope="module")
def planted():
    corpus = generate(SynthSpec(seed=3))
    return corpus, mine(corpus)


def test_group_spec_shape():
    assert len(DEFAULT_GROUPS.names) == N_GROUPS == 9
    assert DEFAULT_GROUPS.names[0] == "sleep_await"
    with pytest.raises(ValueError):
        FeatureGroupSpec(DEFAULT_GROUPS.groups[:8])
    with pytest.raises(ValueError):
        FeatureGroupSpec(DEFAULT_GROUPS.groups[:8] + (DEFAULT_GROUPS.groups[0],))


def test_prefix_triggers():
    assert trigger_matches("timeunit.seconds", "timeunit.*")
    assert trigger_matches("atomiclong", "atomic*")
    assert not trigger_matches("sleepy", "sleep")


def test_empty_source_gives_zero_vector():
    v = extract("", None)
    assert v.shape == (N_FEATURES,)
    assert not v.any()


def test_sleep_and_latch_fixture():
    v = extract("Thread.sleep(100); CountDownLatch latch;", None)
    nonzero = {i for i in range(N_GROUPS) if v[i] > 0}
    assert nonzero == {0, 2, 3, 5}
    # thread.sleep and sleep both hit the first group
    assert v[0] == pytest.approx(np.log1p(2))


def test_renamed_timing_test_keeps_time_ops():
    renamed, mapping = rename_variables(TIMING_TEST, seed=1, scheme="stress")
    assert "nanoStart" in mapping
    assert "system.nanotime" in tokenize(renamed)
    assert extract(renamed, None)[DEFAULT_GROUPS.names.index("has_time_ops")] > 0


def test_comment_and_string_mentions_do_not_count():
    assert not extract('log("Thread.sleep"); // countdownlatch await', None)[:N_GROUPS].any()


def test_batch_matches_single_extract(planted):
    corpus, vocab = planted
    tests = list(corpus)[:3]
    m = batch_extract(tests, vocab)
    assert m.shape == (3, N_FEATURES)
    for row, t in zip(m, tests):
        assert np.array_equal(row, extract(t, vocab))
    assert batch_extract([], vocab).shape == (0, N_FEATURES)


def test_flaky_rows_match_more_mined_tokens(planted):
    corpus, vocab = planted
    m = batch_extract(corpus, vocab)
    flaky = np.array([t.label.is_flaky for t in corpus])
    assert m[flaky, 15].mean() > m[~flaky, 15].mean()


def test_mined_slots_follow_category_order(planted):
    _, vocab = planted
    token = vocab.tokens(C.TIME)[0]
    v = extract_from_tokens([token], vocab)
    assert v[9 + list(C).index(C.TIME)] == pytest.approx(np.log1p(1))
    assert v[15] == pytest.approx(np.log1p(1))


def test_ablation_switches(planted):
    corpus, vocab = planted
    nf = list(vocab.tokens(C.NON_FLAKY))
    tokens = tokenize(next(iter(corpus)).source) + nf + ["sleep"]
    full = extract_from_tokens(tokens, vocab)
    hard = extract_from_tokens(tokens, vocab, options=FeatureOptions(use_mined=False))
    assert np.array_equal(hard[:N_GROUPS], full[:N_GROUPS])
    assert not hard[N_GROUPS:].any()
    if nf:
        no_nf = extract_from_tokens(tokens, vocab, options=FeatureOptions(include_non_flaky=False))
        assert no_nf[14] == 0 and full[14] > 0


@given(java_like)
def test_entries_finite_nonnegative_and_zero_iff_no_hits(source):
    v = extract(source, None)
    assert np.all(np.isfinite(v)) and np.all(v >= 0)
    hits = DEFAULT_GROUPS.group_hits(tokenize(source))
    assert [x == 0 for x in v[:N_GROUPS]] == [h == 0 for h in hits]


trigger_tokens = sorted({t.rstrip("*") + ("seconds" if t.endswith(".*") else "")
                         for _, g in DEFAULT_GROUPS.groups for t in g if t != "synchronized"})


@given(java_like, st.sampled_from(trigger_tokens))
def test_adding_a_trigger_never_lowers_a_group(source, trigger):
    before = extract_from_tokens(tokenize(source), None)
    after = extract_from_tokens(tokenize(source) + [trigger], None)
    assert np.all(after >= before)
    assert any(after[i] > before[i] for i in range(N_GROUPS))


RENAME_FIXTURES = [
    TIMING_TEST,
    "void t() { CountDownLatch done = new CountDownLatch(1); done.await(); }",
    "void t() { Map<String, Integer> counts = new HashMap<>(); counts.keySet(); }",
    "void t() { long begin = System.currentTimeMillis(); Thread.sleep(begin % 10); }",
    "void t() { ExecutorService pool = Executors.newFixedThreadPool(2); pool.shutdown(); }",
]


@pytest.mark.parametrize("source", RENAME_FIXTURES)
@pytest.mark.parametrize("scheme", ["var", "stress"])
def test_renaming_keeps_indicator_groups(source, scheme):
    renamed, mapping = rename_variables(source, seed=5, scheme=scheme)
    assert mapping
    assert np.array_equal(extract(renamed, None)[:N_GROUPS], extract(source, None)[:N_GROUPS])


def test_features_csv_header_and_rows():
    m = np.zeros((2, N_FEATURES))
    lines = features_csv(["a", "b"], m).splitlines()
    assert lines[0].split(",") == ["test_id"] + [f"f{i}" for i in range(1, 17)]
    assert lines[1].startswith("a,0.0")


def test_group_presence_grid(planted):
    _, vocab = planted
    grid = group_presence(vocab)
    assert set(grid) == set(C)
    assert all(len(row) == N_GROUPS for row in grid.values())
    assert grid[C.CONCURRENCY][DEFAULT_GROUPS.names.index("has_atomic")] >= 2
    assert set(planted_tokens(C.CONCURRENCY)) & set(vocab.tokens(C.CONCURRENCY))
