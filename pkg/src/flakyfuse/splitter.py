"""Stratified, project-disjoint K-fold splitting.

Each project is labeled with the most critical category among its tests
(concurrency > async wait > order dependency > time > unordered collections >
non-flaky). Within each label the projects are sorted, shuffled with the seed
and dealt round-robin to folds, so a fold's test set is a union of whole
projects.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass
from typing import Iterable, Mapping

from .corpus import Corpus, FlakinessCategory, TestCase, atomic_write_text

PRIORITY: tuple[FlakinessCategory, ...] = (
    FlakinessCategory.CONCURRENCY,
    FlakinessCategory.ASYNC_WAIT,
    FlakinessCategory.ORDER_DEPENDENCY,
    FlakinessCategory.TIME,
    FlakinessCategory.UNORDERED_COLLECTIONS,
    FlakinessCategory.NON_FLAKY,
)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectPriorityLabel:
    project: str
    priority_category: FlakinessCategory


@dataclass(frozen=True)
class Fold:
    train_ids: frozenset[str]
    test_ids: frozenset[str]


@dataclass(frozen=True)
class SplitPlan:
    k: int
    assignment: dict[str, int]
    folds: tuple[Fold, ...]
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "assignment": dict(sorted(self.assignment.items())),
            "folds": [{"test_ids": sorted(f.test_ids)} for f in self.folds],
        }

    @classmethod
    def from_dict(cls, doc: dict, corpus: Corpus | None = None) -> "SplitPlan":
        if corpus is not None:
            return make_splits(corpus, doc["assignment"], doc["k"], doc.get("seed"))
        all_ids = {i for f in doc["folds"] for i in f["test_ids"]}
        folds = tuple(Fold(frozenset(all_ids - set(f["test_ids"])), frozenset(f["test_ids"]))
                      for f in doc["folds"])
        return cls(doc["k"], dict(doc["assignment"]), folds, doc.get("seed"))


def priority_label(project_tests: Iterable[TestCase]) -> FlakinessCategory:
    tests = list(project_tests)
    if not tests:
        raise SplitError("cannot label a project without tests")
    if len({t.project for t in tests}) != 1:
        raise SplitError("tests span more than one project")
    present = {t.label for t in tests}
    return next(c for c in PRIORITY if c in present)


def project_labels(corpus: Corpus) -> list[ProjectPriorityLabel]:
    return [ProjectPriorityLabel(p, priority_label(corpus[i] for i in corpus.project_index[p]))
            for p in corpus.projects]


def assign_folds(labels: Iterable[ProjectPriorityLabel], k: int = 4, seed: int = 0
                 ) -> dict[str, int]:
    labels = list(labels)
    if k < 2:
        raise SplitError("need at least 2 folds")
    if len(labels) < k:
        raise SplitError(f"{len(labels)} projects cannot fill {k} folds")
    rng = random.Random(seed)
    assignment = {}
    for category in PRIORITY:
        projects = sorted(lab.project for lab in labels if lab.priority_category is category)
        rng.shuffle(projects)
        for i, project in enumerate(projects):
            assignment[project] = i % k
    return assignment


def make_splits(corpus: Corpus, assignment: Mapping[str, int], k: int = 4,
                seed: int | None = None) -> SplitPlan:
    missing = set(corpus.project_index) - set(assignment)
    if missing:
        raise SplitError(f"projects without a fold: {', '.join(sorted(missing))}")
    all_ids = frozenset(t.id for t in corpus)
    folds = []
    for i in range(k):
        test_ids = frozenset(t.id for t in corpus if assignment[t.project] == i)
        folds.append(Fold(all_ids - test_ids, test_ids))
    return SplitPlan(k, dict(assignment), tuple(folds), seed)


def split_corpus(corpus: Corpus, k: int = 4, seed: int = 0) -> SplitPlan:
    return make_splits(corpus, assign_folds(project_labels(corpus), k, seed), k, seed)


def save_split(plan: SplitPlan, path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps(plan.to_dict(), indent=2) + "\n")


def load_split(path: str | os.PathLike, corpus: Corpus | None = None) -> SplitPlan:
    with open(path, encoding="utf-8") as fh:
        return SplitPlan.from_dict(json.load(fh), corpus)
