"""Vary the training augmentation rates and report the 'both' stress drop.

Useful for seeing how much of the drop comes from augmentation being applied
more often to flaky tests than to non-flaky ones.
"""

import argparse
import logging

from flakyfuse.augment import AugmentationPolicy
from flakyfuse.model import ModelConfig
from flakyfuse.splitter import split_corpus
from flakyfuse.synth import SynthSpec, generate
from flakyfuse.trainer import TrainingConfig, cross_validate


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2])
    parser.add_argument("--rates", nargs="+", default=["0.5:0.95", "0.5:0.5", "0.95:0.95"],
                        help="p_base:p_rare pairs")
    args = parser.parse_args()
    logging.basicConfig(level=logging.ERROR)

    print("seed | p_base | p_rare | clean | drop:both")
    for seed in args.seeds:
        corpus = generate(SynthSpec(seed=seed))
        plan = split_corpus(corpus, k=4, seed=seed)
        for pair in args.rates:
            p_base, p_rare = (float(x) for x in pair.split(":"))
            result = cross_validate(corpus, plan, ModelConfig.desk(seed=seed),
                                    TrainingConfig.from_scratch(seed=seed),
                                    policy=AugmentationPolicy(p_base=p_base, p_rare=p_rare),
                                    modes=("both",))
            pooled = result.pooled
            print(f"{seed} | {p_base} | {p_rare} | {pooled.clean.macro_f1:.2f} | "
                  f"{pooled.average_drop['both']:.2f}", flush=True)


if __name__ == "__main__":
    main()
