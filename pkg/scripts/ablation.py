"""Full model vs. the c = 0 ablation (no macro-into-micro fusion) over several seeds.

    python3 scripts/ablation.py --seeds 0 1 2 --epochs 40
"""

import argparse
import statistics

from ustep.experiments import ToyConfig, run_toy, toy_splits


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=ToyConfig.epochs)
    args = p.parse_args()

    cfg = ToyConfig(epochs=args.epochs)
    splits = toy_splits(cfg)
    scores = {True: [], False: []}
    for seed in args.seeds:
        for cross_gate in (True, False):
            res = run_toy(cfg, seed=seed, cross_gate=cross_gate, splits=splits)
            scores[cross_gate].append(res.test_mse)
            label = "full" if cross_gate else "c=0 "
            print(f"seed {seed} {label} test mse {res.test_mse:.5f} (ratio {res.ratio:.3f}, {res.seconds:.0f}s)", flush=True)
    print(f"median full {statistics.median(scores[True]):.5f}  median c=0 {statistics.median(scores[False]):.5f}")


if __name__ == "__main__":
    main()
