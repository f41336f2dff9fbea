"""Train the full model on the bouncing-square toy task and compare to the floor.

    python3 scripts/toy_learning.py --epochs 40 --seed 0
"""

import argparse

from ustep.experiments import ToyConfig, run_toy


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--epochs", type=int, default=ToyConfig.epochs)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=ToyConfig.hidden)
    p.add_argument("--kernel", type=int, default=ToyConfig.kernel_size)
    p.add_argument("--lr", type=float, default=ToyConfig.lr)
    p.add_argument("--no-cross-gate", action="store_true")
    args = p.parse_args()

    cfg = ToyConfig(epochs=args.epochs, hidden=args.hidden, kernel_size=args.kernel, lr=args.lr)

    def progress(e):
        print(f"epoch {e.epoch:3d}  train {e.train_loss:.5f}  val {e.eval_mse:.5f}  {e.seconds:.1f}s", flush=True)

    res = run_toy(cfg, seed=args.seed, cross_gate=not args.no_cross_gate, progress=progress)
    print(f"test mse {res.test_mse:.5f}  floor {res.floor_mse:.5f}  ratio {res.ratio:.3f}  best epoch {res.best_epoch}")


if __name__ == "__main__":
    main()
