"""Data model, JSONL ingestion, Java lexical tokenization and TF-IDF.

The tokenizer is lexical only. It never builds an AST; it skips comments,
string/char/text-block literals and numeric literals, lowercases identifiers,
drops Java reserved words, and emits two-segment dotted chains (``a.b``) next
to their parts.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple


class FlakinessCategory(str, enum.Enum):
    ASYNC_WAIT = "async_wait"
    CONCURRENCY = "concurrency"
    TIME = "time"
    UNORDERED_COLLECTIONS = "unordered_collections"
    ORDER_DEPENDENCY = "order_dependency"
    NON_FLAKY = "non_flaky"

    @classmethod
    def parse(cls, text: str) -> "FlakinessCategory":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown label {text!r}") from None

    def __str__(self) -> str:
        return self.value

    @property
    def is_flaky(self) -> bool:
        return self is not FlakinessCategory.NON_FLAKY


CATEGORIES: tuple[FlakinessCategory, ...] = tuple(FlakinessCategory)
FLAKY_CATEGORIES: tuple[FlakinessCategory, ...] = CATEGORIES[:-1]

# The 50 reserved words of the Java Language Specification (incl. const/goto).
JAVA_RESERVED_WORDS: frozenset[str] = frozenset(
    """
    abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package private
    protected public return short static strictfp super switch synchronized
    this throw throws transient try void volatile while
    """.split()
)
JAVA_LITERAL_WORDS: frozenset[str] = frozenset({"true", "false", "null"})
STOPWORDS: frozenset[str] = JAVA_RESERVED_WORDS | JAVA_LITERAL_WORDS

PRIMITIVE_TYPES: frozenset[str] = frozenset(
    {"boolean", "byte", "char", "short", "int", "long", "float", "double"}
)


class CorpusError(ValueError):
    """Raised for malformed corpus input."""


@dataclass(frozen=True)
class TestCase:
    id: str
    project: str
    source: str
    label: FlakinessCategory

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.id:
            raise CorpusError("test id must be non-empty")
        if not self.project:
            raise CorpusError(f"test {self.id!r}: project must be non-empty")
        if not self.source:
            raise CorpusError(f"test {self.id!r}: source must be non-empty")
        if not isinstance(self.label, FlakinessCategory):
            object.__setattr__(self, "label", FlakinessCategory.parse(self.label))

    def to_record(self) -> dict:
        return {"id": self.id, "project": self.project, "code": self.source,
                "label": self.label.value}


@dataclass
class Corpus:
    tests: list[TestCase]
    project_index: dict[str, set[str]] = field(init=False)
    category_counts: dict[FlakinessCategory, int] = field(init=False)

    def __post_init__(self):
        self.tests = list(self.tests)
        seen: set[str] = set()
        self.project_index = {}
        counts = Counter()
        for t in self.tests:
            if t.id in seen:
                raise CorpusError(f"duplicate test id {t.id!r}")
            seen.add(t.id)
            self.project_index.setdefault(t.project, set()).add(t.id)
            counts[t.label] += 1
        self.category_counts = {c: counts.get(c, 0) for c in CATEGORIES}
        self._by_id = {t.id: t for t in self.tests}

    def __len__(self) -> int:
        return len(self.tests)

    def __iter__(self) -> Iterator[TestCase]:
        return iter(self.tests)

    def __getitem__(self, test_id: str) -> TestCase:
        return self._by_id[test_id]

    @property
    def projects(self) -> list[str]:
        return sorted(self.project_index)

    def prior(self, category: FlakinessCategory) -> float:
        return self.category_counts[category] / len(self.tests)

    def subset(self, ids: Iterable[str]) -> "Corpus":
        """Sub-corpus keeping the original order of the selected ids."""
        wanted = set(ids)
        return Corpus([t for t in self.tests if t.id in wanted])


def load_corpus(path: str | os.PathLike) -> Corpus:
    tests = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            missing = [k for k in ("id", "project", "code", "label") if k not in rec]
            if missing:
                raise CorpusError(f"line {lineno}: missing field(s) {', '.join(missing)}")
            try:
                label = FlakinessCategory.parse(rec["label"])
            except ValueError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            if rec["id"] in seen:
                raise CorpusError(f"line {lineno}: duplicate test id {rec['id']!r}")
            seen.add(rec["id"])
            try:
                tests.append(TestCase(str(rec["id"]), str(rec["project"]), rec["code"], label))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
    return Corpus(tests)


def dump_jsonl(records: Iterable[dict], path: str | os.PathLike) -> None:
    atomic_write_text(
        path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))


def save_corpus(corpus: Corpus | Iterable[TestCase], path: str | os.PathLike) -> None:
    dump_jsonl((t.to_record() for t in corpus), path)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Lexer


class Lexeme(NamedTuple):
    kind: str  # ident | number | string | char | comment | op | space
    text: str
    start: int


_OPS3 = ("<<=", "...")
_OPS2 = ("->", "::", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=",
         "*=", "/=", "%=", "&=", "|=", "^=")


def _is_ident_start(ch: str) -> bool:
    return ch == "_" or ("a" <= ch <= "z") or ("A" <= ch <= "Z")


def _is_ident_part(ch: str) -> bool:
    return _is_ident_start(ch) or ("0" <= ch <= "9")


def lex(source: str) -> list[Lexeme]:
    """Split Java source into lexemes; concatenating their text gives the input back.

    Unterminated comments or literals run to end of input instead of failing.
    Generic closers are emitted one '>' at a time so ``List<List<T>>`` nests.
    """
    out: list[Lexeme] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        start = i
        if ch.isspace():
            while i < n and source[i].isspace():
                i += 1
            out.append(Lexeme("space", source[start:i], start))
        elif source.startswith("//", i):
            j = source.find("\n", i)
            i = n if j < 0 else j
            out.append(Lexeme("comment", source[start:i], start))
        elif source.startswith("/*", i):
            j = source.find("*/", i + 2)
            i = n if j < 0 else j + 2
            out.append(Lexeme("comment", source[start:i], start))
        elif source.startswith('"""', i):
            j = source.find('"""', i + 3)
            i = n if j < 0 else j + 3
            out.append(Lexeme("string", source[start:i], start))
        elif ch == '"' or ch == "'":
            i += 1
            while i < n and source[i] != ch and source[i] != "\n":
                i += 2 if source[i] == "\\" else 1
            i = min(n, i + 1) if i < n and source[i] == ch else min(i, n)
            out.append(Lexeme("string" if ch == '"' else "char", source[start:i], start))
        elif _is_ident_start(ch):
            while i < n and _is_ident_part(source[i]):
                i += 1
            out.append(Lexeme("ident", source[start:i], start))
        elif ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            hexadecimal = source[start:start + 2].lower() == "0x"
            i += 1
            while i < n:
                c = source[i]
                if _is_ident_part(c) or c == ".":
                    i += 1
                elif c in "+-" and (source[i - 1] in "pP"
                                    or (source[i - 1] in "eE" and not hexadecimal)):
                    i += 1
                else:
                    break
            out.append(Lexeme("number", source[start:i], start))
        else:
            for op in _OPS3 + _OPS2:
                if source.startswith(op, i):
                    i += len(op)
                    break
            else:
                i += 1
            out.append(Lexeme("op", source[start:i], start))
    return out


def code_lexemes(source: str) -> list[Lexeme]:
    """Lexemes that carry program meaning (no whitespace or comments)."""
    return [lx for lx in lex(source) if lx.kind not in ("space", "comment")]


def tokenize(source: str) -> list[str]:
    """Mining token stream: lowercase identifiers plus adjacent ``a.b`` pairs.

    >>> tokenize("Thread.sleep(100);")
    ['thread.sleep', 'thread', 'sleep']
    """
    lexemes = code_lexemes(source)
    tokens: list[str] = []
    for k, lx in enumerate(lexemes):
        if lx.kind != "ident":
            continue
        word = lx.text.lower()
        if word in STOPWORDS:
            continue
        if (k + 2 < len(lexemes) and lexemes[k + 1].text == "."
                and lexemes[k + 2].kind == "ident"):
            nxt = lexemes[k + 2].text.lower()
            if nxt not in STOPWORDS:
                tokens.append(f"{word}.{nxt}")
        tokens.append(word)
    return tokens


# ---------------------------------------------------------------------------
# TF-IDF


@dataclass
class TfIdfMatrix:
    doc_ids: list[str]
    vocabulary: list[str]
    rows: list[dict[int, float]]
    doc_freq: list[int]

    def weight(self, doc: int, token: str) -> float:
        try:
            col = self.vocabulary.index(token)
        except ValueError:
            return 0.0
        return self.rows[doc].get(col, 0.0)

    def to_csv(self, path: str | os.PathLike) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["doc_id", "token", "weight"])
        for doc_id, row in zip(self.doc_ids, self.rows):
            for col in sorted(row):
                writer.writerow([doc_id, self.vocabulary[col], repr(row[col])])
        atomic_write_text(path, buf.getvalue())


def idf(n_docs: int, df: int) -> float:
    return math.log(n_docs / (1 + df)) + 1.0


def build_tfidf(corpus: Corpus, streams: list[list[str]] | None = None) -> TfIdfMatrix:
    """Raw term counts times smoothed idf ``ln(N / (1 + df)) + 1``, unnormalized."""
    if len(corpus) == 0:
        raise CorpusError("cannot vectorize an empty corpus")
    if streams is None:
        streams = [tokenize(t.source) for t in corpus]
    counts = [Counter(s) for s in streams]
    df = Counter()
    for c in counts:
        df.update(c.keys())
    vocabulary = sorted(df)
    col = {tok: j for j, tok in enumerate(vocabulary)}
    n = len(corpus)
    idfs = [idf(n, df[tok]) for tok in vocabulary]
    rows = [{col[tok]: tf * idfs[col[tok]] for tok, tf in c.items()} for c in counts]
    return TfIdfMatrix([t.id for t in corpus], vocabulary, rows,
                       [df[tok] for tok in vocabulary])
