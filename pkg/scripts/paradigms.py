"""Train the three paradigms on one toy dataset and write a frame-wise comparison CSV.

Uses the CLI end to end, so the printed commands can be rerun by hand.

    python3 scripts/paradigms.py --workdir runs/paradigms --epochs 20
"""

import argparse
import os
import shlex

from ustep.cli import main as ustep


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ ustep " + shlex.join(argv), flush=True)
    code = ustep(argv)
    if code:
        raise SystemExit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--workdir", default="runs/paradigms")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--Tp", type=int, default=4, help="frames to score (<= 4)")
    args = p.parse_args()
    os.makedirs(args.workdir, exist_ok=True)
    path = lambda name: os.path.join(args.workdir, name)

    run("gen-data", "--num", 256, "--seed", 7, "--out", path("train.ustp"))
    run("gen-data", "--num", 64, "--seed", 9, "--out", path("val.ustp"))
    run("gen-data", "--num", 64, "--seed", 8, "--out", path("test.ustp"))
    common = ("--data", path("train.ustp"), "--eval-data", path("val.ustp"), "--epochs", args.epochs, "--lr", 1e-3, "--precision", 32)
    ckpts = []
    for model in ("ustep", "rec-lite", "recfree-lite"):
        out = path(f"{model}.ckpt")
        run("train", *common, "--model", model, "--hidden", 8, "--kernel", 5, "--out", out)
        ckpts += ["--ckpt", out]
    run("compare", "--data", path("test.ustp"), *ckpts, "--Tp", args.Tp, "--out", path("compare.csv"))


if __name__ == "__main__":
    main()
