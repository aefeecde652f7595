"""Class-imbalance aware objective.

Effective-number class weights feed the six-way categorical cross-entropy; the
two-unit binary head is trained with focal loss. Both log terms clamp the
probability at 1e-12, which caps a single example's loss near 27.6 * weight.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import torch

from .corpus import CATEGORIES, FlakinessCategory

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    weights: dict[FlakinessCategory, float]
    beta: float

    def __getitem__(self, category: FlakinessCategory) -> float:
        return self.weights[category]

    def vector(self, dtype=torch.float64) -> torch.Tensor:
        """Weights in enum order; absent classes get 0."""
        return torch.tensor([self.weights.get(c, 0.0) for c in CATEGORIES], dtype=dtype)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "weights": {c.value: w for c, w in self.weights.items()}}


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def ens_weight(n: int, beta: float) -> float:
    """(1 - beta) / (1 - beta**n), evaluated without cancellation near beta = 1."""
    if beta == 0.0:
        return 1.0
    return (1.0 - beta) / -math.expm1(n * math.log(beta))


def ens_weights(counts: Mapping[FlakinessCategory, int], beta: float = 0.9999) -> ClassWeights:
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    weights = {}
    for cat, n in counts.items():
        if n < 1:
            log.warning("class %s has no samples; excluded from ENS weights", cat)
            continue
        weights[cat] = ens_weight(n, beta)
    return ClassWeights(weights, beta)


def _as_tensor(x) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(x, dtype=torch.float64), True


def focal_loss(p_t, params: FocalParams = FocalParams()):
    """-alpha * (1 - p_t)**gamma * ln(p_t). Accepts a float or a tensor."""
    p, scalar = _as_tensor(p_t)
    with torch.no_grad():
        if torch.any((p < 0) | (p > 1)) or not torch.all(torch.isfinite(p)):
            raise ValueError("p_t must lie in [0, 1]")
    loss = -params.alpha * (1 - p) ** params.gamma * torch.log(p.clamp(PROB_FLOOR, 1.0))
    return float(loss) if scalar else loss


def _check_finite(logits: torch.Tensor) -> None:
    if not torch.all(torch.isfinite(logits)):
        raise ValueError("logits must be finite")


def binary_focal_from_logits(binary_logits: torch.Tensor, is_flaky,
                             params: FocalParams = FocalParams()) -> torch.Tensor:
    """Focal loss per example on two-logit softmax; index 1 is the flaky class."""
    _check_finite(binary_logits)
    target = torch.as_tensor(is_flaky, dtype=torch.long)
    probs = torch.softmax(binary_logits, dim=-1)
    p_t = probs.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    return focal_loss(p_t, params)


def weighted_categorical_ce(cat_logits: torch.Tensor, label, weights: ClassWeights
                            ) -> torch.Tensor:
    """-w[label] * ln softmax(logits)[label], per example.

    ``label`` is a category, a sequence of categories, or a tensor of enum indices.
    """
    _check_finite(cat_logits)
    index = label_indices(label)
    for i in torch.atleast_1d(index).tolist():
        if CATEGORIES[i] not in weights.weights:
            raise KeyError(f"class {CATEGORIES[i].value} has no weight")
    w = weights.vector(cat_logits.dtype)[index]
    probs = torch.softmax(cat_logits, dim=-1)
    p = probs.gather(-1, index.unsqueeze(-1)).squeeze(-1)
    return -w * torch.log(p.clamp(PROB_FLOOR, 1.0))


def label_indices(label) -> torch.Tensor:
    if isinstance(label, torch.Tensor):
        return label.long()
    if isinstance(label, FlakinessCategory):
        return torch.tensor(CATEGORIES.index(label))
    return torch.tensor([CATEGORIES.index(FlakinessCategory(l)) for l in label])


@dataclass(frozen=True)
class LossTerms:
    total: torch.Tensor
    binary: torch.Tensor
    categorical: torch.Tensor


def total_loss(binary_logits: torch.Tensor, cat_logits: torch.Tensor, label,
               weights: ClassWeights, params: FocalParams = FocalParams(),
               lambda_bin: float = 1.0, lambda_cat: float = 1.0) -> LossTerms:
    """Per-example ``lambda_bin * focal + lambda_cat * weighted CE``."""
    index = label_indices(label)
    is_flaky = (index != CATEGORIES.index(FlakinessCategory.NON_FLAKY)).long()
    binary = binary_focal_from_logits(binary_logits, is_flaky, params)
    categorical = weighted_categorical_ce(cat_logits, index, weights)
    return LossTerms(lambda_bin * binary + lambda_cat * categorical, binary, categorical)
