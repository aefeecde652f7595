"""Metrics, robustness drops, stress evaluation and report files."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import jsonschema
import numpy as np

from .augment import STRESS_MODES, AugmentationPolicy, perturb_for_stress
from .corpus import CATEGORIES, FlakinessCategory, TestCase, atomic_write_text
from .dtm import SymbolicVocabulary
from .symbolic import DEFAULT_GROUPS, group_presence

REPORT_SCHEMA_VERSION = 1
TABLE_HEADERS = ("Async.", "Conc.", "Time", "UC", "OD", "Non-flaky", "Macro Avg.")


def _as_categories(values: Iterable) -> list[FlakinessCategory]:
    return [FlakinessCategory.parse(v) if not isinstance(v, FlakinessCategory) else v
            for v in values]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual categories, columns predicted, both in enum order."""

    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (len(CATEGORIES), len(CATEGORIES)) or np.any(self.counts < 0):
            raise ValueError("confusion matrix must be a non-negative 6x6 array")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key: tuple[FlakinessCategory, FlakinessCategory]) -> int:
        actual, predicted = key
        return int(self.counts[CATEGORIES.index(actual), CATEGORIES.index(predicted)])

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


def confusion(predictions: Sequence, labels: Sequence) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    counts = np.zeros((len(CATEGORIES), len(CATEGORIES)), dtype=np.int64)
    for p, a in zip(_as_categories(predictions), _as_categories(labels)):
        counts[CATEGORIES.index(a), CATEGORIES.index(p)] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class scores in percent at full precision; round only for display."""

    precision: dict[FlakinessCategory, float]
    recall: dict[FlakinessCategory, float]
    f1: dict[FlakinessCategory, float]
    support: dict[FlakinessCategory, int]
    macro_f1: float
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "per_class": {c.value: {"precision": self.precision[c], "recall": self.recall[c],
                                    "f1": self.f1[c], "support": self.support[c]}
                          for c in CATEGORIES},
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.to_list(),
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    precision, recall, f1, support = {}, {}, {}, {}
    for i, c in enumerate(CATEGORIES):
        tp = int(counts[i, i])
        p = _ratio(tp, int(counts[:, i].sum()))
        r = _ratio(tp, int(counts[i, :].sum()))
        precision[c], recall[c] = 100.0 * p, 100.0 * r
        f1[c] = 100.0 * (2 * p * r / (p + r) if p + r else 0.0)
        support[c] = int(counts[i, :].sum())
    macro = sum(f1.values()) / len(CATEGORIES)
    return MetricsReport(precision, recall, f1, support, macro, cm)


def f1_scores(predictions: Sequence, labels: Sequence) -> MetricsReport:
    """Per-class F1 with the zero-division rule (undefined ratios count as 0)."""
    return metrics_from_confusion(confusion(predictions, labels))


@dataclass(frozen=True)
class RobustnessReport:
    clean: MetricsReport
    perturbed: dict[str, MetricsReport] = field(default_factory=dict)
    drops: dict[str, dict[FlakinessCategory, float]] = field(default_factory=dict)
    average_drop: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "clean": self.clean.to_dict(),
            "perturbed": {m: r.to_dict() for m, r in self.perturbed.items()},
            "drops": {m: {c.value: d for c, d in ds.items()} for m, ds in self.drops.items()},
            "average_drop": dict(self.average_drop),
        }


def pp_drops(clean_f1: Mapping[FlakinessCategory, float],
             perturbed_f1: Mapping[FlakinessCategory, float]) -> dict[FlakinessCategory, float]:
    """clean - perturbed per class, in percentage points (negative = improvement)."""
    if set(clean_f1) != set(perturbed_f1):
        raise ValueError("clean and perturbed scores cover different classes")
    return {c: clean_f1[c] - perturbed_f1[c] for c in clean_f1}


def robustness_drops(clean: MetricsReport, perturbed: Mapping[str, MetricsReport],
                     modes: Sequence[str] | None = None) -> RobustnessReport:
    modes = list(perturbed) if modes is None else list(modes)
    missing = [m for m in modes if m not in perturbed]
    if missing:
        raise KeyError(f"no perturbed metrics for mode(s): {', '.join(missing)}")
    drops = {m: pp_drops(clean.f1, perturbed[m].f1) for m in modes}
    average = {m: sum(d.values()) / len(d) for m, d in drops.items()}
    return RobustnessReport(clean, {m: perturbed[m] for m in modes}, drops, average)


class Predictor(Protocol):
    def predict(self, tests: Sequence[TestCase]) -> list[FlakinessCategory]: ...


def stress_predictions(model: Predictor, tests: Sequence[TestCase],
                       policy: AugmentationPolicy, modes: Sequence[str] = STRESS_MODES
                       ) -> dict[str, list[FlakinessCategory]]:
    """Predictions on clean tests and on every stress variant.

    Perturbed tests go through the full feature pipeline again, so the symbolic
    channel sees the attack too.
    """
    for m in modes:
        if m not in STRESS_MODES:
            raise ValueError(f"unknown stress mode {m!r}")
    out = {"clean": model.predict(tests)}
    for m in modes:
        out[m] = model.predict([perturb_for_stress(t, m, policy).test for t in tests])
    return out


def stress_evaluate(model: Predictor, tests: Sequence[TestCase], policy: AugmentationPolicy,
                    modes: Sequence[str] = STRESS_MODES) -> RobustnessReport:
    preds = stress_predictions(model, tests, policy, modes)
    return report_from_predictions(preds, [t.label for t in tests], modes)


def report_from_predictions(preds: Mapping[str, Sequence], labels: Sequence,
                            modes: Sequence[str]) -> RobustnessReport:
    clean = f1_scores(preds["clean"], labels)
    return robustness_drops(clean, {m: f1_scores(preds[m], labels) for m in modes}, modes)


# ---------------------------------------------------------------------------
# Report files

_METRICS_SCHEMA = {
    "type": "object",
    "required": ["per_class", "macro_f1", "confusion"],
    "properties": {
        "per_class": {
            "type": "object",
            "required": [c.value for c in CATEGORIES],
            "additionalProperties": {
                "type": "object",
                "required": ["precision", "recall", "f1", "support"],
                "properties": {
                    "precision": {"type": "number", "minimum": 0, "maximum": 100},
                    "recall": {"type": "number", "minimum": 0, "maximum": 100},
                    "f1": {"type": "number", "minimum": 0, "maximum": 100},
                    "support": {"type": "integer", "minimum": 0},
                },
            },
        },
        "macro_f1": {"type": "number", "minimum": 0, "maximum": 100},
        "confusion": {"type": "array", "minItems": 6, "maxItems": 6,
                      "items": {"type": "array", "minItems": 6, "maxItems": 6,
                                "items": {"type": "integer", "minimum": 0}}},
    },
}

_ROBUSTNESS_SCHEMA = {
    "type": "object",
    "required": ["clean", "perturbed", "drops", "average_drop"],
    "properties": {
        "clean": _METRICS_SCHEMA,
        "perturbed": {"type": "object", "additionalProperties": _METRICS_SCHEMA},
        "drops": {"type": "object",
                  "additionalProperties": {"type": "object",
                                           "additionalProperties": {"type": "number"}}},
        "average_drop": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "flakyfuse run report",
    "type": "object",
    "required": ["schema_version", "config_hash", "config", "folds", "pooled"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "config": {"type": "object"},
        "folds": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["fold", "n_train", "n_test", "init_checksum",
                             "final_checksum", "trace", "metrics"],
                "properties": {
                    "fold": {"type": "integer", "minimum": 0},
                    "n_train": {"type": "integer", "minimum": 1},
                    "n_test": {"type": "integer", "minimum": 0},
                    "init_checksum": {"type": "string"},
                    "final_checksum": {"type": "string"},
                    "trace": {"type": "object"},
                    "metrics": _ROBUSTNESS_SCHEMA,
                },
            },
        },
        "pooled": _ROBUSTNESS_SCHEMA,
    },
}


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, REPORT_SCHEMA)


def _csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def metrics_markdown(report: RobustnessReport, title: str = "Pooled held-out F1 (%)") -> str:
    lines = [f"## {title}", "", "| Setting | " + " | ".join(TABLE_HEADERS) + " |",
             "|---" * (len(TABLE_HEADERS) + 1) + "|"]
    rows = [("clean", report.clean)] + list(report.perturbed.items())
    for name, m in rows:
        cells = [_fmt(m.f1[c]) for c in CATEGORIES] + [_fmt(m.macro_f1)]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    if report.drops:
        lines += ["", "## Drop under perturbation (pp, clean minus perturbed)", "",
                  "| Mode | " + " | ".join(TABLE_HEADERS[:-1]) + " | Average |",
                  "|---" * (len(TABLE_HEADERS) + 1) + "|"]
        for mode, d in report.drops.items():
            cells = [_fmt(d[c]) for c in CATEGORIES] + [_fmt(report.average_drop[mode])]
            lines.append(f"| {mode} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def f1_table_csv(report: RobustnessReport) -> str:
    rows = [["setting"] + [c.value for c in CATEGORIES] + ["macro"]]
    for name, m in [("clean", report.clean)] + list(report.perturbed.items()):
        rows.append([name] + [_fmt(m.f1[c]) for c in CATEGORIES] + [_fmt(m.macro_f1)])
    return _csv(rows)


def drops_csv(report: RobustnessReport) -> str:
    rows = [["mode", "category", "clean_f1", "perturbed_f1", "drop"]]
    for mode, d in report.drops.items():
        for c in CATEGORIES:
            rows.append([mode, c.value, _fmt(report.clean.f1[c]),
                         _fmt(report.perturbed[mode].f1[c]), _fmt(d[c])])
        rows.append([mode, "average", "", "", _fmt(report.average_drop[mode])])
    return _csv(rows)


def token_groups_csv(vocab: SymbolicVocabulary) -> str:
    grid = group_presence(vocab)
    rows = [["group"] + [c.value for c in CATEGORIES]]
    for g, (name, _) in enumerate(DEFAULT_GROUPS.groups):
        rows.append([name] + [grid[c][g] for c in CATEGORIES])
    return _csv(rows)


def emit_report(doc: dict, pooled: RobustnessReport, vocab: SymbolicVocabulary | None,
                out_dir: str | os.PathLike) -> list[Path]:
    """Write report.json, metrics.md and the CSV tables into ``out_dir``."""
    validate_report(doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": json.dumps(doc, indent=2, sort_keys=True) + "\n",
        "metrics.md": metrics_markdown(pooled),
        "f1_table.csv": f1_table_csv(pooled),
        "drops.csv": drops_csv(pooled),
    }
    if vocab is not None:
        files["token_rank.csv"] = vocab.ranked_csv()
        files["token_groups.csv"] = token_groups_csv(vocab)
    written = []
    for name, text in files.items():
        atomic_write_text(out / name, text)
        written.append(out / name)
    return written
