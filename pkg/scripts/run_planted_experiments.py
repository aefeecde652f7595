"""Cross-validate the full model and its ablations on planted-signal corpora.

Prints one row per (seed, setting) with clean macro F1 and the average drop
under each stress mode, then the per-setting means. Optionally writes the
rows as JSON.
"""

import argparse
import json
import logging
import time

import numpy as np

from flakyfuse.augment import STRESS_MODES
from flakyfuse.model import ModelConfig
from flakyfuse.splitter import split_corpus
from flakyfuse.synth import SynthSpec, generate
from flakyfuse.trainer import Ablation, TrainingConfig, cross_validate

SETTINGS = {
    "full": Ablation(),
    "no-symbolic": Ablation(no_symbolic=True),
    "no-augment": Ablation(no_augment=True),
    "hardcoded-symbols": Ablation(hardcoded_symbols=True),
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--settings", nargs="+", choices=SETTINGS, default=list(SETTINGS))
    parser.add_argument("--modes", nargs="*", choices=STRESS_MODES, default=list(STRESS_MODES))
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--json", help="write rows to this file")
    args = parser.parse_args()
    logging.basicConfig(level=logging.ERROR)

    rows = []
    header = ["seed", "setting", "clean"] + [f"drop:{m}" for m in args.modes]
    print(" | ".join(header))
    for seed in range(args.seeds):
        corpus = generate(SynthSpec(seed=seed))
        plan = split_corpus(corpus, k=4, seed=seed)
        overrides = {} if args.epochs is None else {"epochs": args.epochs}
        training = TrainingConfig.from_scratch(seed=seed, **overrides)
        for name in args.settings:
            start = time.perf_counter()
            result = cross_validate(corpus, plan, ModelConfig.desk(seed=seed), training,
                                    ablation=SETTINGS[name], modes=args.modes)
            row = {"seed": seed, "setting": name, "clean": result.pooled.clean.macro_f1,
                   "drops": dict(result.pooled.average_drop),
                   "seconds": time.perf_counter() - start}
            rows.append(row)
            cells = [str(seed), name, f"{row['clean']:.2f}"]
            cells += [f"{row['drops'][m]:.2f}" for m in args.modes]
            print(" | ".join(cells), flush=True)

    print()
    for name in args.settings:
        mine = [r for r in rows if r["setting"] == name]
        means = [np.mean([r["clean"] for r in mine])]
        means += [np.mean([r["drops"][m] for r in mine]) for m in args.modes]
        print(" | ".join(["mean", name] + [f"{x:.2f}" for x in means]))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
