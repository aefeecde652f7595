import json
import math

import pytest
from hypothesis import given, strategies as st

from conftest import java_like, reference_tokens
from flakyfuse.corpus import (CATEGORIES, JAVA_RESERVED_WORDS, STOPWORDS, Corpus, CorpusError,
                              FlakinessCategory, TestCase, build_tfidf, idf, lex, load_corpus,
                              save_corpus, tokenize)


def test_six_categories_round_trip():
    assert len(CATEGORIES) == 6
    for c in CATEGORIES:
        assert FlakinessCategory.parse(str(c)) is c
    with pytest.raises(ValueError):
        FlakinessCategory.parse("flaky")


def test_reserved_word_list_has_fifty_entries():
    assert len(JAVA_RESERVED_WORDS) == 50
    assert {"true", "false", "null"} <= STOPWORDS


@pytest.mark.parametrize("source, expected", [
    ("Thread.sleep(100);", ["thread.sleep", "thread", "sleep"]),
    ("", []),
    ("int while_count = 0; // Thread.sleep", ["while_count"]),
    ('log("Thread.sleep"); /* await */', ["log"]),
    ("TimeUnit.SECONDS.sleep(1);",
     ["timeunit.seconds", "timeunit", "seconds.sleep", "seconds", "sleep"]),
    ("this.latch.await();", ["latch.await", "latch", "await"]),
])
def test_tokenize_examples(source, expected):
    assert tokenize(source) == expected


def test_text_blocks_and_char_literals_are_skipped():
    src = 'String s = """\n  Thread.sleep\n"""; char c = \'x\';'
    assert tokenize(src) == ["string", "s", "c"]


@given(java_like)
def test_tokenize_matches_reference_lexer(source):
    assert tokenize(source) == reference_tokens(source)


@given(st.text())
def test_lex_is_lossless(source):
    assert "".join(lx.text for lx in lex(source)) == source


@given(java_like)
def test_no_stopwords_and_lowercase(source):
    for tok in tokenize(source):
        assert tok == tok.lower()
        assert not set(tok.split(".")) & STOPWORDS


def test_generic_closers_lex_separately():
    ops = [lx.text for lx in lex("List<List<T>> x;") if lx.kind == "op"]
    assert ops.count(">") == 2


def test_tfidf_single_document():
    corpus = Corpus([TestCase("a", "p", "sleep sleep", "time")])
    m = build_tfidf(corpus)
    assert m.weight(0, "sleep") == pytest.approx(2 * (math.log(1 / 2) + 1), abs=1e-12)
    assert m.weight(0, "sleep") == pytest.approx(0.6137, abs=1e-4)


def test_tfidf_token_everywhere():
    corpus = Corpus([TestCase(f"t{i}", "p", f"common x{i}", "time") for i in range(4)])
    m = build_tfidf(corpus)
    assert idf(4, m.doc_freq[m.vocabulary.index("common")]) == pytest.approx(0.7769, abs=1e-4)
    assert "absent" not in m.vocabulary
    assert m.vocabulary == sorted(m.vocabulary)


@given(st.lists(java_like, min_size=1, max_size=20))
def test_tfidf_doc_freq_is_binary_presence(sources):
    corpus = Corpus([TestCase(f"t{i}", "p", s or "x", "time") for i, s in enumerate(sources)])
    m = build_tfidf(corpus)
    streams = [set(tokenize(t.source)) for t in corpus]
    for tok, df in zip(m.vocabulary, m.doc_freq):
        assert df == sum(tok in s for s in streams)
        assert df <= len(corpus)
    assert all(w >= 0 for row in m.rows for w in row.values())


def test_tfidf_rejects_empty_corpus():
    with pytest.raises(CorpusError):
        build_tfidf(Corpus([]))


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_load_minimal_record(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [{"id": "t1", "project": "p1", "code": "@Test void a(){}", "label": "non_flaky"}])
    corpus = load_corpus(p)
    assert len(corpus) == 1
    assert corpus.category_counts[FlakinessCategory.NON_FLAKY] == 1
    assert sum(corpus.category_counts.values()) == 1


def test_duplicate_id_is_named(tmp_path):
    p = tmp_path / "c.jsonl"
    rec = {"id": "t1", "project": "p1", "code": "x", "label": "time"}
    _write(p, [rec, rec])
    with pytest.raises(CorpusError, match="t1"):
        load_corpus(p)


@pytest.mark.parametrize("line, message", [
    ("{not json", "line 2"),
    ('{"id": "t2", "project": "p", "label": "time"}', "line 2"),
    ('{"id": "t2", "project": "p", "code": "x", "label": "slow"}', "slow"),
])
def test_malformed_lines_are_reported(tmp_path, line, message):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"id": "t1", "project": "p", "code": "x", "label": "time"})
                 + "\n" + line + "\n")
    with pytest.raises(CorpusError, match=message):
        load_corpus(p)


def test_save_load_round_trip_keeps_order(tmp_path, tiny_corpus):
    save_corpus(tiny_corpus, tmp_path / "c.jsonl")
    again = load_corpus(tmp_path / "c.jsonl")
    assert [t.id for t in again] == [t.id for t in tiny_corpus]
    assert again.project_index == tiny_corpus.project_index


def test_reference_scale_counts():
    tests = [TestCase(f"t{i}", f"p{i % 97}", "x", "time" if i < 280 else "non_flaky")
             for i in range(8574)]
    corpus = Corpus(tests)
    assert sum(corpus.category_counts.values()) == 8574
    assert corpus.category_counts[FlakinessCategory.NON_FLAKY] == 8294
