"""Symbolic feature channel: a fixed 16-wide vector per test.

Layout (0-based index):

* 0-8   log1p(hits) for the nine indicator groups, in ``DEFAULT_GROUPS`` order
* 9-14  log1p(matches) against each category's mined tokens, category enum order
* 15    log1p(number of distinct mined tokens present)

Counts run over the mining token stream, so comments and string literals never
contribute. A trigger ending in ``*`` matches any token with that prefix.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .corpus import CATEGORIES, FlakinessCategory, TestCase, atomic_write_text, tokenize
from .dtm import SymbolicVocabulary

N_FEATURES = 16
N_GROUPS = 9


@dataclass(frozen=True)
class FeatureGroupSpec:
    groups: tuple[tuple[str, frozenset[str]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.groups]
        if len(names) != N_GROUPS or len(set(names)) != N_GROUPS:
            raise ValueError("feature spec needs exactly 9 uniquely named groups")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.groups]

    def group_hits(self, tokens: list[str]) -> list[int]:
        return [sum(1 for t in tokens if any(trigger_matches(t, g) for g in triggers))
                for _, triggers in self.groups]


def trigger_matches(token: str, trigger: str) -> bool:
    if trigger.endswith("*"):
        return token.startswith(trigger[:-1])
    return token == trigger


DEFAULT_GROUPS = FeatureGroupSpec((
    ("sleep_await", frozenset({"sleep", "thread.sleep", "await", "timeunit.*"})),
    ("has_network", frozenset({"socket", "http", "url", "connect", "netty"})),
    ("has_future_async", frozenset({"future", "completablefuture", "promise",
                                    "countdownlatch"})),
    ("threading", frozenset({"thread", "executorservice", "runnable"})),
    ("has_atomic", frozenset({"atomicinteger", "atomicboolean", "atomic*"})),
    # "synchronized" is a reserved word and never reaches the token stream.
    ("has_sync_lock", frozenset({"countdownlatch", "cyclicbarrier", "semaphore", "lock",
                                 "synchronized"})),
    ("has_time_ops", frozenset({"currenttimemillis", "nanotime", "stopwatch", "clock",
                                "duration"})),
    ("has_json_unordered", frozenset({"json", "map", "set", "iterator"})),
    ("has_persistence", frozenset({"save", "delete", "repository", "database",
                                   "filesystem"})),
))


@dataclass(frozen=True)
class FeatureOptions:
    """Switches for ablations.

    ``use_mined=False`` zeroes slots 9-15 (hard-coded indicator groups only).
    ``include_non_flaky=False`` zeroes the non-flaky mined slot.
    """

    use_mined: bool = True
    include_non_flaky: bool = True


def extract_from_tokens(tokens: list[str], vocab: SymbolicVocabulary | None,
                        spec: FeatureGroupSpec = DEFAULT_GROUPS,
                        options: FeatureOptions = FeatureOptions()) -> np.ndarray:
    counts = np.zeros(N_FEATURES)
    counts[:N_GROUPS] = spec.group_hits(tokens)
    if options.use_mined and vocab is not None:
        matched: set[str] = set()
        for j, cat in enumerate(CATEGORIES):
            if cat is FlakinessCategory.NON_FLAKY and not options.include_non_flaky:
                continue
            mined = set(vocab.tokens(cat))
            hits = [t for t in tokens if t in mined]
            counts[N_GROUPS + j] = len(hits)
            matched.update(hits)
        counts[N_FEATURES - 1] = len(matched)
    return np.log1p(counts)


def extract(test: TestCase | str, vocab: SymbolicVocabulary | None,
            spec: FeatureGroupSpec = DEFAULT_GROUPS,
            options: FeatureOptions = FeatureOptions()) -> np.ndarray:
    source = test.source if isinstance(test, TestCase) else test
    return extract_from_tokens(tokenize(source), vocab, spec, options)


def batch_extract(tests, vocab: SymbolicVocabulary | None,
                  spec: FeatureGroupSpec = DEFAULT_GROUPS,
                  options: FeatureOptions = FeatureOptions()) -> np.ndarray:
    rows = [extract(t, vocab, spec, options) for t in tests]
    return np.vstack(rows) if rows else np.zeros((0, N_FEATURES))


def features_csv(test_ids: list[str], matrix: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["test_id"] + [f"f{i}" for i in range(1, N_FEATURES + 1)])
    for tid, row in zip(test_ids, matrix):
        writer.writerow([tid] + [repr(float(x)) for x in row])
    return buf.getvalue()


def save_features_csv(test_ids, matrix, path: str | os.PathLike) -> None:
    atomic_write_text(path, features_csv(list(test_ids), matrix))


def group_presence(vocab: SymbolicVocabulary, spec: FeatureGroupSpec = DEFAULT_GROUPS
                   ) -> dict[FlakinessCategory, list[int]]:
    """Per category, how many mined tokens fall in each indicator group."""
    return {cat: spec.group_hits(vocab.tokens(cat)) for cat in CATEGORIES}
