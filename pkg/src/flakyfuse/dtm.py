"""Discriminative token mining.

For every category the corpus is split into the documents carrying that label
and all the rest. Each token gets a presence-based 2x2 table (token present /
absent x in category / not), scored with the four-cell chi-square test of
independence (1 degree of freedom, no continuity correction). Surviving tokens
must be significant and appear in category documents of at least ``n_min``
distinct projects; the strongest ``k`` per category are kept.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

from .corpus import (CATEGORIES, Corpus, FlakinessCategory, atomic_write_text,
                     tokenize)

VOCABULARY_FORMAT = "flakyfuse.vocabulary"
VOCABULARY_VERSION = 1


class MiningError(ValueError):
    pass


@dataclass(frozen=True)
class ContingencyTable:
    """Document counts: o11 present & in class, o12 present & not, o21 absent & in
    class, o22 absent & not."""

    o11: int
    o12: int
    o21: int
    o22: int

    def __post_init__(self):
        if min(self.o11, self.o12, self.o21, self.o22) < 0:
            raise ValueError(f"negative cell in {self}")

    @property
    def total(self) -> int:
        return self.o11 + self.o12 + self.o21 + self.o22

    @property
    def rows(self) -> tuple[int, int]:
        return self.o11 + self.o12, self.o21 + self.o22

    @property
    def cols(self) -> tuple[int, int]:
        return self.o11 + self.o21, self.o12 + self.o22

    @property
    def degenerate(self) -> bool:
        """True when a marginal is zero, i.e. the table carries no information."""
        return 0 in self.rows or 0 in self.cols

    def expected(self) -> tuple[float, float, float, float]:
        (r1, r2), (c1, c2), n = self.rows, self.cols, self.total
        return r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n


def chi_square(table: ContingencyTable) -> float:
    """Pearson's statistic summed over all four cells; 0.0 for degenerate tables."""
    if table.total <= 0:
        raise ValueError("contingency table is empty")
    if table.degenerate:
        return 0.0
    observed = (table.o11, table.o12, table.o21, table.o22)
    return sum((o - e) ** 2 / e for o, e in zip(observed, table.expected()))


def p_value_chi2_1dof(chi2: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom.

    Uses P(X > x) = erfc(sqrt(x / 2)); ``math.erfc`` is accurate to a few ulp,
    far inside the 1e-7 absolute error budget.
    """
    if chi2 < 0 or math.isnan(chi2):
        raise ValueError(f"chi-square statistic must be >= 0, got {chi2}")
    return math.erfc(math.sqrt(chi2 / 2.0))


@dataclass(frozen=True)
class ChiSquareScore:
    token: str
    category: FlakinessCategory
    chi2: float
    p_value: float
    project_support: int


@dataclass
class SymbolicVocabulary:
    entries: dict[FlakinessCategory, list[ChiSquareScore]]
    k: int = 10
    n_min: int = 3
    p_max: float = 0.05

    def __post_init__(self):
        self.entries = {c: list(self.entries.get(c, [])) for c in CATEGORIES}

    def tokens(self, category: FlakinessCategory) -> list[str]:
        return [s.token for s in self.entries[category]]

    def all_tokens(self) -> set[str]:
        return {s.token for scores in self.entries.values() for s in scores}

    def is_empty(self) -> bool:
        return not any(self.entries.values())

    def to_dict(self) -> dict:
        return {
            "format": VOCABULARY_FORMAT,
            "version": VOCABULARY_VERSION,
            "params": {"k": self.k, "n_min": self.n_min, "p_max": self.p_max},
            "categories": {
                c.value: [{"token": s.token, "chi2": s.chi2, "p_value": s.p_value,
                           "project_support": s.project_support}
                          for s in self.entries[c]]
                for c in CATEGORIES
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SymbolicVocabulary":
        if not isinstance(doc, dict) or "version" not in doc:
            raise MiningError("vocabulary document has no version field")
        if doc.get("format") != VOCABULARY_FORMAT or doc["version"] != VOCABULARY_VERSION:
            raise MiningError(
                f"unsupported vocabulary format {doc.get('format')!r} v{doc['version']}")
        try:
            params = doc["params"]
            entries = {}
            for name, rows in doc["categories"].items():
                cat = FlakinessCategory.parse(name)
                entries[cat] = [
                    ChiSquareScore(r["token"], cat, float(r["chi2"]), float(r["p_value"]),
                                   int(r["project_support"]))
                    for r in rows
                ]
            return cls(entries, int(params["k"]), int(params["n_min"]),
                       float(params["p_max"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MiningError(f"vocabulary schema mismatch: {exc}") from None

    def ranked_rows(self) -> list[tuple[str, int, str, float]]:
        """(category, rank, token, chi2) rows, rank starting at 1."""
        return [(c.value, rank, s.token, s.chi2)
                for c in CATEGORIES
                for rank, s in enumerate(self.entries[c], start=1)]

    def ranked_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "rank", "token", "chi2"])
        for cat, rank, tok, chi2 in self.ranked_rows():
            writer.writerow([cat, rank, tok, repr(chi2)])
        return buf.getvalue()


def save_vocabulary(vocab: SymbolicVocabulary, path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps(vocab.to_dict(), indent=2) + "\n")


def load_vocabulary(path: str | os.PathLike) -> SymbolicVocabulary:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MiningError(f"vocabulary file is not JSON: {exc.msg}") from None
    return SymbolicVocabulary.from_dict(doc)


@dataclass
class _Presence:
    n_docs: int = 0
    by_category: dict = field(default_factory=lambda: defaultdict(int))
    projects: dict = field(default_factory=lambda: defaultdict(set))


def score_tokens(corpus: Corpus, category: FlakinessCategory,
                 streams: list[list[str]] | None = None) -> list[ChiSquareScore]:
    """Score every corpus token against ``category`` (no filtering)."""
    presence = _presence(corpus, streams)
    return _score(presence, corpus, category)


def _presence(corpus: Corpus, streams) -> dict[str, _Presence]:
    if streams is None:
        streams = [tokenize(t.source) for t in corpus]
    table: dict[str, _Presence] = defaultdict(_Presence)
    for test, stream in zip(corpus.tests, streams):
        for tok in set(stream):
            p = table[tok]
            p.n_docs += 1
            p.by_category[test.label] += 1
            p.projects[test.label].add(test.project)
    return table


def _score(presence, corpus, category) -> list[ChiSquareScore]:
    n = len(corpus)
    n_c = corpus.category_counts[category]
    scores = []
    for tok in sorted(presence):
        p = presence[tok]
        a = p.by_category.get(category, 0)
        b = p.n_docs - a
        chi2 = chi_square(ContingencyTable(a, b, n_c - a, n - n_c - b))
        scores.append(ChiSquareScore(tok, category, chi2, p_value_chi2_1dof(chi2),
                                     len(p.projects.get(category, ()))))
    return scores


def mine(corpus: Corpus, k: int = 10, n_min: int = 3, p_max: float = 0.05,
         streams: list[list[str]] | None = None) -> SymbolicVocabulary:
    if k < 1:
        raise MiningError("k must be >= 1")
    present = [c for c in CATEGORIES if corpus.category_counts[c] > 0]
    if len(present) < 2:
        raise MiningError("no contrast class: corpus has fewer than two categories")
    presence = _presence(corpus, streams)
    entries = {}
    for category in CATEGORIES:
        kept = [s for s in _score(presence, corpus, category)
                if s.p_value < p_max and s.project_support >= n_min]
        kept.sort(key=lambda s: (-s.chi2, s.token))
        entries[category] = kept[:k]
    return SymbolicVocabulary(entries, k, n_min, p_max)
