"""Training loop, AdamW, and K-fold cross-validation with a fresh model per fold."""

from __future__ import annotations

import logging
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import torch

from .augment import STRESS_MODES, AugmentationPolicy, augment_training, derive_seed
from .corpus import CATEGORIES, Corpus, FlakinessCategory, TestCase, tokenize
from .dtm import SymbolicVocabulary, mine
from .evaluation import RobustnessReport, report_from_predictions, stress_predictions
from .imbalance import ClassWeights, FocalParams, ens_weights, label_indices, total_loss
from .model import (DTYPE, DualChannelClassifier, ModelConfig, NeuralVocabulary, checksum,
                    encode_batch, init_params, predict)
from .splitter import SplitPlan
from .symbolic import DEFAULT_GROUPS, FeatureOptions, extract_from_tokens

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    """Optimisation settings.

    The default learning rate (2e-5) is the fine-tuning value for a pre-trained
    encoder. ``from_scratch()`` raises it to 1e-3, which a randomly initialised
    encoder needs to learn anything within 8 epochs.
    """

    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    epochs: int = 8
    batch_size: int = 16
    beta_ens: float = 0.9999
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    lambda_bin: float = 1.0
    lambda_cat: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")

    @classmethod
    def from_scratch(cls, **overrides) -> "TrainingConfig":
        return cls(**{"learning_rate": 1e-3, **overrides})

    @property
    def focal(self) -> FocalParams:
        return FocalParams(self.focal_alpha, self.focal_gamma)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamWState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0


def optimizer_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
                   state: AdamWState, config: TrainingConfig) -> AdamWState:
    """One in-place AdamW update with decoupled weight decay."""
    if set(grads) != set(params):
        raise TrainingError("gradient names do not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise TrainingError(f"gradient shape {tuple(g.shape)} does not match {name}")
        if not torch.all(torch.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    lr, wd = config.learning_rate, config.weight_decay
    with torch.no_grad():
        for name, theta in params.items():
            g = grads[name]
            m = state.m.setdefault(name, torch.zeros_like(theta))
            v = state.v.setdefault(name, torch.zeros_like(theta))
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            update = (m / c1) / ((v / c2).sqrt() + config.eps) + wd * theta
            theta.sub_(lr * update)
    return state


# ---------------------------------------------------------------------------
# Fitted model


@dataclass
class FittedModel:
    """A trained classifier plus the fold-local vocabularies it depends on."""

    model: DualChannelClassifier
    neural_vocab: NeuralVocabulary
    symbolic_vocab: SymbolicVocabulary | None
    options: FeatureOptions = FeatureOptions()

    def features(self, streams: Sequence[list[str]]) -> np.ndarray:
        return np.array([extract_from_tokens(s, self.symbolic_vocab, DEFAULT_GROUPS,
                                             self.options) for s in streams]).reshape(-1, 16)

    def logits(self, tests: Sequence[TestCase], batch_size: int = 256):
        streams = [tokenize(t.source) for t in tests]
        outs = []
        with torch.no_grad():
            for i in range(0, len(streams), batch_size):
                chunk = streams[i: i + batch_size]
                ids, mask = encode_batch(chunk, self.neural_vocab, self.model.config.max_seq)
                sym = (torch.as_tensor(self.features(chunk), dtype=DTYPE)
                       if self.model.config.use_symbolic else None)
                outs.append(self.model(ids, mask, sym).categorical)
        return torch.cat(outs) if outs else torch.zeros((0, len(CATEGORIES)), dtype=DTYPE)

    def predict(self, tests: Sequence[TestCase]) -> list[FlakinessCategory]:
        if not tests:
            return []
        return predict(self.logits(tests))


@dataclass
class TrainingTrace:
    loss: list[float] = field(default_factory=list)
    binary_loss: list[float] = field(default_factory=list)
    categorical_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    class_weights: ClassWeights | None = None

    def to_dict(self, include_time: bool = False) -> dict:
        doc = {"loss": self.loss, "binary_loss": self.binary_loss,
               "categorical_loss": self.categorical_loss,
               "class_weights": None if self.class_weights is None
               else self.class_weights.to_dict()}
        if include_time:
            doc["seconds"] = self.seconds
        return doc


def _label_counts(tests: Sequence[TestCase]) -> dict[FlakinessCategory, int]:
    counts = {c: 0 for c in CATEGORIES}
    for t in tests:
        counts[t.label] += 1
    return counts


def train_fold(train_set: Sequence[TestCase], model_config: ModelConfig,
               config: TrainingConfig, symbolic_vocab: SymbolicVocabulary | None = None,
               policy: AugmentationPolicy | None = None,
               options: FeatureOptions = FeatureOptions(),
               neural_vocab: NeuralVocabulary | None = None
               ) -> tuple[FittedModel, TrainingTrace]:
    """Train a freshly initialised model on ``train_set`` only.

    The examples are put in id order first, so the result does not depend on how
    the caller ordered them. Each epoch reshuffles with a seed derived from the
    training seed; training augmentation, when a policy is given, is redrawn per
    example and epoch.
    """
    if not train_set:
        raise TrainingError("empty training set")
    tests = sorted(train_set, key=lambda t: t.id)
    counts = _label_counts(tests)
    if sum(1 for n in counts.values() if n) < 2:
        log.warning("training set has fewer than 2 classes; ENS weighting is degenerate")
    weights = ens_weights({c: n for c, n in counts.items() if n}, config.beta_ens)

    clean_streams = [tokenize(t.source) for t in tests]
    if neural_vocab is None:
        neural_vocab = NeuralVocabulary.build(clean_streams, model_config.vocab_cap)
    model = init_params(model_config)
    fitted = FittedModel(model, neural_vocab, symbolic_vocab, options)
    params = dict(model.named_parameters())
    state = AdamWState()
    labels = label_indices([t.label for t in tests])
    dropout_gen = torch.Generator().manual_seed(derive_seed(config.seed, "dropout"))
    augmenting = config.augment and policy is not None

    clean_features = None if augmenting else fitted.features(clean_streams)
    trace = TrainingTrace(class_weights=weights)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        if augmenting:
            streams = [tokenize(augment_training(
                t, policy, random.Random(derive_seed(config.seed, "augment", epoch, t.id))).source)
                for t in tests]
            features = fitted.features(streams)
        else:
            streams, features = clean_streams, clean_features
        order = list(range(len(tests)))
        random.Random(derive_seed(config.seed, "shuffle", epoch)).shuffle(order)
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            idx = order[start: start + config.batch_size]
            ids, mask = encode_batch([streams[i] for i in idx], neural_vocab,
                                     model_config.max_seq)
            sym = torch.as_tensor(features[idx], dtype=DTYPE) if model_config.use_symbolic else None
            out = model(ids, mask, sym, train_mode=True, generator=dropout_gen)
            terms = total_loss(out.binary, out.categorical, labels[idx], weights, config.focal,
                               config.lambda_bin, config.lambda_cat)
            loss = terms.total.mean()
            for p in params.values():
                p.grad = None
            loss.backward()
            grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p))
                     for n, p in params.items()}
            optimizer_step(params, grads, state, config)
            with torch.no_grad():
                sums += [float(terms.total.sum()), float(terms.binary.sum()),
                         float(terms.categorical.sum())]
        sums /= len(tests)
        if not np.all(np.isfinite(sums)):
            raise TrainingError(f"non-finite loss in epoch {epoch + 1}")
        trace.loss.append(float(sums[0]))
        trace.binary_loss.append(float(sums[1]))
        trace.categorical_loss.append(float(sums[2]))
        trace.seconds.append(time.perf_counter() - started)
        log.debug("epoch %d loss %.6f", epoch + 1, sums[0])
    for p in params.values():
        p.grad = None
    return fitted, trace


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass(frozen=True)
class MiningConfig:
    k: int = 10
    n_min: int = 3
    p_max: float = 0.05


@dataclass(frozen=True)
class Ablation:
    """Switches for the ablation runs; the default is the full model."""

    no_symbolic: bool = False
    no_augment: bool = False
    hardcoded_symbols: bool = False

    @property
    def feature_options(self) -> FeatureOptions:
        return FeatureOptions(use_mined=not self.hardcoded_symbols)


@dataclass
class FoldReport:
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    labels: list[FlakinessCategory]
    init_checksum: str
    final_checksum: str
    trace: TrainingTrace
    symbolic_vocab: SymbolicVocabulary | None
    predictions: dict[str, list[FlakinessCategory]]
    metrics: RobustnessReport
    fitted: FittedModel

    def to_dict(self) -> dict:
        return {"fold": self.fold, "n_train": len(self.train_ids), "n_test": len(self.test_ids),
                "init_checksum": self.init_checksum, "final_checksum": self.final_checksum,
                "trace": self.trace.to_dict(), "metrics": self.metrics.to_dict(),
                "symbolic_vocabulary": None if self.symbolic_vocab is None
                else self.symbolic_vocab.to_dict()}


@dataclass
class CrossValidationResult:
    folds: list[FoldReport]
    pooled: RobustnessReport
    modes: tuple[str, ...]


def cross_validate(corpus: Corpus, plan: SplitPlan, model_config: ModelConfig,
                   config: TrainingConfig, mining: MiningConfig = MiningConfig(),
                   policy: AugmentationPolicy = AugmentationPolicy(),
                   ablation: Ablation = Ablation(),
                   modes: Sequence[str] = STRESS_MODES) -> CrossValidationResult:
    """Fresh init, fold-local mining and training, clean and stress evaluation per fold.

    Per-class scores are computed on predictions pooled across folds; per-fold
    scores are kept alongside.
    """
    if ablation.no_symbolic:
        model_config = replace(model_config, use_symbolic=False)
    if ablation.no_augment:
        config = replace(config, augment=False)
    reference = checksum(init_params(model_config))
    folds, pooled_preds, pooled_labels = [], {m: [] for m in ("clean", *modes)}, []
    for i, fold in enumerate(plan.folds):
        init_sum = checksum(init_params(model_config))
        if init_sum != reference:
            raise TrainingError(f"fold {i} does not start from the reference initialisation")
        train = corpus.subset(sorted(fold.train_ids))
        test = [corpus[t] for t in sorted(fold.test_ids)]
        vocab = None
        if model_config.use_symbolic and not ablation.hardcoded_symbols:
            vocab = mine(train, mining.k, mining.n_min, mining.p_max)
        fold_policy = policy.with_decoys(vocab)
        fitted, trace = train_fold(list(train), model_config, config, vocab, fold_policy,
                                   ablation.feature_options)
        preds = stress_predictions(fitted, test, fold_policy, modes) if test else \
            {m: [] for m in ("clean", *modes)}
        labels = [t.label for t in test]
        for m in preds:
            pooled_preds[m].extend(preds[m])
        pooled_labels.extend(labels)
        folds.append(FoldReport(i, sorted(fold.train_ids), sorted(fold.test_ids), labels,
                                init_sum, checksum(fitted.model), trace, vocab, preds,
                                report_from_predictions(preds, labels, modes), fitted))
        log.info("fold %d: clean macro F1 %.2f", i, folds[-1].metrics.clean.macro_f1)
    pooled = report_from_predictions(pooled_preds, pooled_labels, modes)
    return CrossValidationResult(folds, pooled, tuple(modes))
