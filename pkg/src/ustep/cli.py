"""Command-line entry point: ``ustep {gen-data,train,eval,compare,gradcheck}``.

Exit codes: 0 success, 1 gradcheck failure, 2 usage/config, 3 data/shape,
4 I/O. ``USTEP_THREADS`` caps BLAS threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import data as data_mod
from .errors import ConfigError, DimensionError, FormatError
from .metrics import METRICS
from .model import UstepConfig
from .trainer import (
    LR_GRID,
    TrainConfig,
    evaluate,
    floor_report,
    gradcheck_forward_train,
    load_model,
    resolve_scales,
    train,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3, 4
GRADCHECK_TOL = 1e-4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def read_kv_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _need_file(path: str | None, what: str) -> None:
    if path is None:
        raise CliError(f"missing {what}", EXIT_USAGE)
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}", EXIT_IO)


def _need_out_dir(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise CliError(f"output directory does not exist: {parent}", EXIT_IO)


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ------------------------------------------------------------------ commands

GEN_FLAGS = {
    "num": "num_sequences",
    "T": "T",
    "Tp": "T_prime",
    "H": "height",
    "W": "width",
    "C": "channels",
    "objects": "num_objects",
    "size": "object_size",
    "speed_min": "speed_min",
    "speed_max": "speed_max",
    "variant": "variant",
    "sigma_v": "sigma_v",
    "noise": "noise_amplitude",
    "seed": "seed",
}


def cmd_gen_data(args) -> int:
    _need_out_dir(args.out)
    values = {}
    if args.config:
        _need_file(args.config, "config file")
        values.update(read_kv_file(args.config))
    for flag, key in GEN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    cfg = data_mod.GenConfig.from_dict(values)
    cfg.validate()
    ds = data_mod.generate(cfg)
    data_mod.write_dataset(ds, args.out)
    N, L, C, H, W = ds.shape
    print(f"N={N} L={L} C={C} H={H} W={W}")
    for k, v in asdict(cfg).items():
        print(f"  {k} = {v}")
    return EXIT_OK


def cmd_train(args) -> int:
    _need_file(args.data, "--data")
    if args.eval_data:
        _need_file(args.eval_data, "--eval-data")
    _need_out_dir(args.out)
    cfg = TrainConfig(
        data=args.data,
        eval_data=args.eval_data,
        model=args.model,
        T=args.T,
        delta_t=args.dt,
        delta_T=args.dT,
        hidden=args.hidden,
        depth=args.depth,
        kernel_size=args.kernel,
        cross_gate=not args.no_cross_gate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.wd,
        strict_grid=args.strict_grid,
        seed=args.seed,
        precision=args.precision,
        out=args.out,
        log_path=args.log,
        log_time=args.log_time,
    )
    cfg.validate()
    if cfg.model == "ustep":
        ds = data_mod.read_dataset(cfg.data)
        T = cfg.T if cfg.T is not None else ds.T
        if T is None:
            raise ConfigError("dataset has no generator echo; pass --T")
        dt, dT, guided = resolve_scales(T, ds.shape[1] - T, cfg.delta_t, cfg.delta_T)
        UstepConfig(dt, dT).validate()
        print(f"dt={dt}" + (" (guideline)" if guided else ""))
        print(f"dT={dT}")

    def progress(e):
        print(f"epoch {e.epoch:4d}  train_loss {e.train_loss:.6f}  eval_mse {e.eval_mse:.6f}", flush=True)

    _, runlog = train(cfg, progress=progress)
    print(f"best epoch {runlog.best_epoch} eval_mse {runlog.best_eval_mse:.6f} -> {cfg.out}")
    return EXIT_OK


def _eval_inputs(args):
    _need_file(args.data, "--data")
    ds = data_mod.read_dataset(args.data)
    T = args.T if args.T is not None else ds.T
    if T is None:
        raise ConfigError("dataset has no generator echo; pass --T")
    stored = ds.shape[1] - T
    Tp = args.Tp if args.Tp is not None else stored
    if Tp > stored:
        raise ConfigError(f"--Tp {Tp} exceeds the {stored} ground-truth frames stored after T={T}")
    return ds, T, Tp


def cmd_eval(args) -> int:
    _need_file(args.ckpt, "--ckpt")
    _need_out_dir(args.out)
    ds, T, Tp = _eval_inputs(args)
    model = load_model(args.ckpt, ds)
    report = evaluate(model, ds, Tp, T, {"checkpoint": os.path.basename(args.ckpt)})
    _write(args.out, report.to_csv() if args.report == "csv" else report.to_json())
    agg = report.aggregate
    print(" ".join(f"{m}={agg[m]:.6f}" for m in METRICS))
    return EXIT_OK


def cmd_compare(args) -> int:
    for path in args.ckpt:
        _need_file(path, "--ckpt")
    _need_out_dir(args.out)
    ds, T, Tp = _eval_inputs(args)
    reports = {"floor": floor_report(ds, Tp, T)}
    for path in args.ckpt:
        name = Path(path).stem
        if name in reports:
            raise ConfigError(f"duplicate model name {name!r}; rename a checkpoint")
        try:
            reports[name] = evaluate(load_model(path, ds), ds, Tp, T)
        except Exception as exc:
            raise type(exc)(f"model {name}: {exc}") from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "frame_index") + METRICS)
    for name in sorted(reports):
        for row in reports[name].rows():
            w.writerow([name, row[0]] + [repr(float(v)) for v in row[1:]])
    _write(args.out, buf.getvalue())
    for name in sorted(reports):
        print(f"{name:>16s}  mse={reports[name].aggregate['mse']:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    values = {}
    if args.config:
        _need_file(args.config, "--config")
        values = read_kv_file(args.config)
    report = gradcheck_forward_train(values, seed=args.seed, corrupt=args.corrupt_grad)
    ok = report.max_rel_error < GRADCHECK_TOL
    print(f"max relative error {report.max_rel_error:.3e} (worst parameter {report.worst_param} {report.worst_index})")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ustep", description="Micro/macro temporal frame prediction at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic bouncing-squares dataset")
    g.add_argument("--config", help="flat key = value generator config")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int)
    g.add_argument("--T", type=int)
    g.add_argument("--Tp", type=int)
    g.add_argument("--H", type=int)
    g.add_argument("--W", type=int)
    g.add_argument("--C", type=int)
    g.add_argument("--objects", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--speed-min", type=float)
    g.add_argument("--speed-max", type=float)
    g.add_argument("--variant", choices=data_mod.VARIANTS)
    g.add_argument("--sigma-v", type=float)
    g.add_argument("--noise", type=float, help="background clutter amplitude")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a predictor")
    t.add_argument("--data", required=True)
    t.add_argument("--eval-data")
    t.add_argument("--model", choices=("ustep", "rec-lite", "recfree-lite"), default="ustep")
    t.add_argument("--T", type=int, help="observed frames (default: from the dataset echo)")
    t.add_argument("--dt", type=int)
    t.add_argument("--dT", type=int)
    t.add_argument("--hidden", type=int, default=16)
    t.add_argument("--depth", type=int, default=2)
    t.add_argument("--kernel", type=int, default=3)
    t.add_argument("--no-cross-gate", action="store_true", help="ablation: pin the cross-segment gate to zero")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--wd", type=float, default=0.05)
    t.add_argument("--strict-grid", action="store_true", help=f"require lr in {LR_GRID}")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--precision", type=int, choices=(32, 64), default=64)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="run log path (default: <out>.runlog.jsonl)")
    t.add_argument("--log-time", action="store_true", help="record wall-clock seconds in the run log")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score one checkpoint"), ("compare", cmd_compare, "frame-wise comparison of checkpoints")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", required=True)
        if name == "eval":
            e.add_argument("--ckpt", required=True)
            e.add_argument("--report", choices=("csv", "json"), default="csv")
        else:
            e.add_argument("--ckpt", action="append", required=True)
        e.add_argument("--Tp", type=int)
        e.add_argument("--T", type=int)
        e.add_argument("--out", required=True)
        e.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference check of the training loss")
    c.add_argument("--config", help="flat key = value model config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = int(os.environ.get("USTEP_THREADS", "1"))
    try:
        with threadpool_limits(limits=max(1, threads)):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DimensionError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
