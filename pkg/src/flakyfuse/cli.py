"""Command-line entry point: ``flakyfuse <command> ...``.

Exit codes: 0 success, 2 bad input or configuration, 1 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .augment import STRESS_MODES, AugmentationError, AugmentationPolicy, perturb_for_stress
from .corpus import CorpusError, atomic_write_text, dump_jsonl, load_corpus, save_corpus
from .dtm import MiningError, load_vocabulary, mine, save_vocabulary
from .evaluation import (emit_report, metrics_from_confusion, robustness_drops,
                         validate_report)
from .model import CheckpointError, ModelConfig, save_checkpoint
from .splitter import SplitError, load_split, save_split, split_corpus
from .symbolic import FeatureOptions, batch_extract, save_features_csv
from .synth import SynthSpec, generate
from .trainer import Ablation, MiningConfig, TrainingConfig, cross_validate, train_fold

log = logging.getLogger("flakyfuse")


class UsageError(ValueError):
    """Bad user input; maps to exit code 2."""


INPUT_ERRORS = (UsageError, CorpusError, MiningError, SplitError, CheckpointError,
                AugmentationError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
                PermissionError, json.JSONDecodeError)


@dataclass(frozen=True)
class SplitConfig:
    k: int = 4
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run in one document; all fields have defaults."""

    mining: MiningConfig = MiningConfig()
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    training: TrainingConfig = field(default_factory=TrainingConfig.from_scratch)
    augmentation: AugmentationPolicy = AugmentationPolicy()
    split: SplitConfig = SplitConfig()
    ablation: Ablation = Ablation()

    def to_dict(self) -> dict:
        doc = {f.name: asdict(getattr(self, f.name)) for f in fields(self)}
        for key in ("train_decoys", "stress_decoys"):
            doc["augmentation"].pop(key)
        for key in ("train_guard_styles", "stress_guard_styles"):
            doc["augmentation"][key] = list(doc["augmentation"][key])
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        sections = {f.name: f for f in fields(cls)}
        unknown = set(doc) - set(sections)
        if unknown:
            raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        base = cls()
        kwargs = {}
        for name, value in doc.items():
            current = getattr(base, name)
            allowed = {f.name for f in fields(current)}
            bad = set(value) - allowed
            if bad:
                raise UsageError(f"unknown key(s) in {name}: {', '.join(sorted(bad))}")
            value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            try:
                kwargs[name] = replace(current, **value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid {name} config: {exc}") from exc
        return replace(base, **kwargs)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(out_dir: Path, command: str, cfg: RunConfig, inputs: dict[str, Path],
              outputs: list[Path]) -> None:
    doc = {
        "tool": "flakyfuse",
        "version": __version__,
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "seeds": {"model": cfg.model.seed, "training": cfg.training.seed,
                  "augmentation": cfg.augmentation.seed, "split": cfg.split.seed},
        "inputs": {k: _sha256_file(p) for k, p in sorted(inputs.items())},
        "outputs": {p.name: _sha256_file(p) for p in sorted(outputs)},
    }
    _write_json(out_dir / "manifest.json", doc)


# ---------------------------------------------------------------------------
# configuration plumbing


def load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = RunConfig.from_dict(doc)
    try:
        if getattr(args, "top_k", None) is not None:
            cfg = replace(cfg, mining=replace(cfg.mining, k=args.top_k))
        if getattr(args, "n_min", None) is not None:
            cfg = replace(cfg, mining=replace(cfg.mining, n_min=args.n_min))
        if getattr(args, "p_max", None) is not None:
            cfg = replace(cfg, mining=replace(cfg.mining, p_max=args.p_max))
        if getattr(args, "folds", None) is not None:
            cfg = replace(cfg, split=replace(cfg.split, k=args.folds))
        if getattr(args, "seed", None) is not None:
            s = args.seed
            cfg = replace(cfg, model=replace(cfg.model, seed=s),
                          training=replace(cfg.training, seed=s),
                          augmentation=replace(cfg.augmentation, seed=s),
                          split=replace(cfg.split, seed=s))
        if getattr(args, "epochs", None) is not None:
            cfg = replace(cfg, training=replace(cfg.training, epochs=args.epochs))
        flags = {k: True for k in ("no_symbolic", "no_augment", "hardcoded_symbols")
                 if getattr(args, k, False)}
        if flags:
            cfg = replace(cfg, ablation=replace(cfg.ablation, **flags))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.mining.k < 1 or cfg.split.k < 2:
        raise UsageError("--top-k must be >= 1 and --folds >= 2")
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    overrides = {k: v for k, v in {
        "n_projects": args.projects, "n_tests": args.tests,
        "flaky_fraction": args.flaky_fraction, "n_flaky": args.n_flaky,
        "q_signal": args.q_signal, "q_noise": args.q_noise,
        "n_min_projects": args.n_min_projects, "seed": args.seed}.items() if v is not None}
    try:
        spec = (SynthSpec.paper_scaled(args.scale, **overrides) if args.scale is not None
                else SynthSpec(**overrides))
        corpus = generate(spec)
    except ValueError as exc:
        raise UsageError(f"invalid generator spec: {exc}") from exc
    save_corpus(corpus, args.out)
    counts = {c.value: n for c, n in corpus.category_counts.items()}
    print(json.dumps({"tests": len(corpus), "projects": len(corpus.projects),
                      "category_counts": counts}, sort_keys=True))
    return 0


def cmd_mine(args) -> int:
    cfg = load_run_config(args)
    corpus = load_corpus(args.corpus)
    if args.split:
        plan = load_split(args.split, corpus)
        corpus = corpus.subset(plan.folds[args.fold].train_ids)
    vocab = mine(corpus, cfg.mining.k, cfg.mining.n_min, cfg.mining.p_max)
    out = Path(args.out)
    save_vocabulary(vocab, out)
    atomic_write_text(out.with_suffix(".csv"), vocab.ranked_csv())
    for cat in vocab.entries:
        print(f"{cat.value}: {' '.join(vocab.tokens(cat))}")
    return 0


def cmd_features(args) -> int:
    corpus = load_corpus(args.corpus)
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    options = FeatureOptions(use_mined=not args.hardcoded_symbols)
    matrix = batch_extract(list(corpus), vocab, options=options)
    save_features_csv([t.id for t in corpus], matrix, args.out)
    return 0


def cmd_split(args) -> int:
    cfg = load_run_config(args)
    corpus = load_corpus(args.corpus)
    plan = split_corpus(corpus, cfg.split.k, cfg.split.seed)
    save_split(plan, args.out)
    for i, fold in enumerate(plan.folds):
        print(f"fold {i}: {len(fold.train_ids)} train / {len(fold.test_ids)} test")
    return 0


def cmd_perturb(args) -> int:
    cfg = load_run_config(args)
    corpus = load_corpus(args.corpus)
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    policy = cfg.augmentation.with_decoys(vocab)
    records, sidecar = [], {}
    for test in corpus:
        pt = perturb_for_stress(test, args.mode, policy)
        records.append(pt.test.to_record())
        sidecar[test.id] = {"applied_transforms": list(pt.applied_transforms),
                            "rename_map": pt.rename_map}
    out = Path(args.out)
    dump_jsonl(records, out)
    _write_json(out.with_name(out.name + ".meta.json"),
                {"mode": args.mode, "policy": policy.to_dict(), "tests": sidecar})
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    corpus = load_corpus(args.corpus)
    if args.split:
        plan = load_split(args.split, corpus)
        if not 0 <= args.fold < plan.k:
            raise UsageError(f"--fold must lie in [0, {plan.k})")
        corpus = corpus.subset(plan.folds[args.fold].train_ids)
    model_cfg = replace(cfg.model, use_symbolic=not cfg.ablation.no_symbolic)
    vocab = None
    if model_cfg.use_symbolic and not cfg.ablation.hardcoded_symbols:
        vocab = mine(corpus, cfg.mining.k, cfg.mining.n_min, cfg.mining.p_max)
    training = replace(cfg.training, augment=cfg.training.augment and not cfg.ablation.no_augment)
    fitted, trace = train_fold(list(corpus), model_cfg, training, vocab,
                               cfg.augmentation.with_decoys(vocab),
                               cfg.ablation.feature_options)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(fitted.model, out / "model.ckpt", fitted.neural_vocab)
    outputs = [out / "model.ckpt", out / "trace.json"]
    _write_json(out / "trace.json", trace.to_dict())
    if vocab is not None:
        save_vocabulary(vocab, out / "vocabulary.json")
        outputs.append(out / "vocabulary.json")
    _manifest(out, "train", cfg, {"corpus": Path(args.corpus)}, outputs)
    print(f"final epoch loss {trace.loss[-1]:.6f}")
    return 0


def cmd_run(args) -> int:
    cfg = load_run_config(args)
    corpus = load_corpus(args.corpus)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = split_corpus(corpus, cfg.split.k, cfg.split.seed)
    save_split(plan, out / "split.json")
    result = cross_validate(corpus, plan, cfg.model, cfg.training, cfg.mining,
                            cfg.augmentation, cfg.ablation)
    outputs = [out / "split.json"]
    for fold in result.folds:
        path = out / f"fold{fold.fold}.ckpt"
        save_checkpoint(fold.fitted.model, path, fold.fitted.neural_vocab)
        outputs.append(path)
    try:
        overview = mine(corpus, cfg.mining.k, cfg.mining.n_min, cfg.mining.p_max)
    except MiningError:
        overview = None
    doc = {
        "schema_version": 1,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "corpus_sha256": _sha256_file(Path(args.corpus)),
        "folds": [f.to_dict() for f in result.folds],
        "pooled": result.pooled.to_dict(),
    }
    outputs += emit_report(doc, result.pooled, overview, out)
    _manifest(out, "run", cfg, {"corpus": Path(args.corpus)}, outputs)
    print(f"macro F1 {result.pooled.clean.macro_f1:.2f}; "
          + ", ".join(f"{m} drop {d:.2f}" for m, d in result.pooled.average_drop.items()))
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    doc = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    validate_report(doc)
    import numpy as np

    from .evaluation import ConfusionMatrix, metrics_markdown

    pooled_doc = doc["pooled"]
    clean = metrics_from_confusion(ConfusionMatrix(np.array(pooled_doc["clean"]["confusion"])))
    perturbed = {m: metrics_from_confusion(ConfusionMatrix(np.array(r["confusion"])))
                 for m, r in sorted(pooled_doc["perturbed"].items(),
                                    key=lambda kv: STRESS_MODES.index(kv[0]))}
    text = metrics_markdown(robustness_drops(clean, perturbed))
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser, *, mining=False, split=False, train=False):
    p.add_argument("--config", help="JSON run-config file; flags override it")
    p.add_argument("--seed", type=int, help="seed for model, training, augmentation and split")
    if mining:
        p.add_argument("--top-k", type=int, help="tokens kept per category (default 10)")
        p.add_argument("--n-min", type=int, help="minimum supporting projects (default 3)")
        p.add_argument("--p-max", type=float, help="significance threshold (default 0.05)")
    if split:
        p.add_argument("--folds", type=int, help="number of folds (default 4)")
    if train:
        p.add_argument("--epochs", type=int)
        p.add_argument("--no-symbolic", action="store_true", help="neural channel only")
        p.add_argument("--no-augment", action="store_true", help="disable training augmentation")
        p.add_argument("--hardcoded-symbols", action="store_true",
                       help="indicator groups only, mined slots zeroed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flakyfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-signal corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--projects", type=int)
    p.add_argument("--tests", type=int)
    p.add_argument("--flaky-fraction", type=float)
    p.add_argument("--n-flaky", type=int)
    p.add_argument("--q-signal", type=float)
    p.add_argument("--q-noise", type=float)
    p.add_argument("--n-min-projects", type=int)
    p.add_argument("--scale", type=float, help="scale the 280:8294 reference corpus")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="mine discriminative tokens")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split file; mine only the train side of --fold")
    p.add_argument("--fold", type=int, default=0)
    _add_config_flags(p, mining=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("features", help="export the symbolic feature matrix as CSV")
    p.add_argument("corpus")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--hardcoded-symbols", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("split", help="project-disjoint stratified folds")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    _add_config_flags(p, split=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("perturb", help="write stress-perturbed copies of a corpus")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=STRESS_MODES, required=True)
    p.add_argument("--vocab", help="vocabulary supplying the decoy pools")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split")
    p.add_argument("--fold", type=int, default=0)
    _add_config_flags(p, mining=True, train=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="full cross-validated experiment with stress tests")
    p.add_argument("corpus")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p, mining=True, split=True, train=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render the metrics table of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
