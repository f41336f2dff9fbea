"""Training and evaluation loops, checkpoints and run logs."""

from __future__ import annotations

import json
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from . import tensor as tc
from .data import Dataset, GenConfig, dataset_hash, generate, read_dataset
from .errors import ConfigError, DimensionError, FormatError
from .model import (
    BaselineConfig,
    CopyLastFrame,
    RecurrentFreeLite,
    RecurrentLite,
    Ustep,
    UstepConfig,
    build_model,
    config_dict,
)
from .optim import AdamState, adamw_step
from .segmentation import choose_delta_t, default_delta_T
from .tensor import ParamStore

LR_GRID = (1e-2, 5e-3, 1e-3, 5e-4, 1e-4)

# ---------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"USTC1"
# version 1 stores float32 values, version 2 float64
CKPT_DTYPES = {1: "<f4", 2: "<f8"}


def save_checkpoint(params: ParamStore, path: str | os.PathLike) -> None:
    version = 2 if any(t.dtype == np.float64 for _, t in params.items()) else 1
    dtype = CKPT_DTYPES[version]
    parts = [CKPT_MAGIC, struct.pack("<BI", version, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{t.data.ndim}I", t.data.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype=dtype).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def parse_checkpoint(buf: bytes) -> ParamStore:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes", offset=pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(5) != CKPT_MAGIC:
        raise FormatError(f"bad magic, expected {CKPT_MAGIC.decode()!r}", offset=0)
    version, count = struct.unpack("<BI", take(5))
    if version not in CKPT_DTYPES:
        raise FormatError(f"unknown checkpoint version {version}", offset=5)
    dtype = np.dtype(CKPT_DTYPES[version])
    params = ParamStore()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        start = pos
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", offset=start) from None
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if any(d == 0 for d in dims):
            raise FormatError(f"zero dimension for {name!r}", offset=pos)
        n = math.prod(dims)
        data = np.frombuffer(take(n * dtype.itemsize), dtype=dtype).reshape(dims)
        if name in params:
            raise FormatError(f"duplicate parameter {name!r}", offset=start)
        native = np.float64 if version == 2 else np.float32
        params.add(name, data.astype(native), dtype=native)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", offset=pos)
    return params


def load_checkpoint(path: str | os.PathLike, expected: ParamStore | None = None) -> ParamStore:
    """Read a checkpoint; with ``expected``, insist on matching names and shapes."""
    with open(path, "rb") as fh:
        params = parse_checkpoint(fh.read())
    if expected is not None:
        check_compatible(expected, params)
    return params


def check_compatible(expected: ParamStore, loaded: ParamStore) -> None:
    for name, t in expected.items():
        if name not in loaded:
            raise FormatError(f"checkpoint lacks parameter {name!r}")
        if loaded[name].shape != t.shape:
            raise FormatError(f"parameter {name!r}: checkpoint shape {loaded[name].shape}, model expects {t.shape}")
    for name in loaded:
        if name not in expected:
            raise FormatError(f"unexpected parameter {name!r} in checkpoint")


# -------------------------------------------------------------------- config


@dataclass
class TrainConfig:
    data: str | None = None
    eval_data: str | None = None
    model: str = "ustep"
    T: int | None = None  # observed frames; defaults to the dataset's generator echo
    delta_t: int | None = None
    delta_T: int | None = None
    hidden: int = 16
    depth: int = 2
    kernel_size: int = 3
    cross_gate: bool = True
    epochs: int = 10
    batch_size: int = 16
    lr: float = 0.01
    weight_decay: float = 0.05
    strict_grid: bool = False
    seed: int = 0
    precision: int = 64
    out: str | None = None
    log_path: str | None = None
    log_time: bool = False

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.model not in ("ustep", "rec-lite", "recfree-lite"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.strict_grid and not any(math.isclose(self.lr, g) for g in LR_GRID):
            raise ConfigError(f"lr {self.lr} is not in the grid {LR_GRID}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    eval_mse: float
    seconds: float


@dataclass
class RunLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    best_eval_mse: float = math.inf
    report: metrics.MetricsReport | None = None

    def to_jsonl(self, include_time: bool = False) -> str:
        lines = []
        for e in self.epochs:
            d = asdict(e)
            if not include_time:
                d.pop("seconds")
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + "\n"


def resolve_scales(T: int, T_prime: int, delta_t: int | None, delta_T: int | None) -> tuple[int, int, bool]:
    """Fill in missing scales; the flag says whether the guideline chose ``delta_t``."""
    guided = delta_t is None
    if guided:
        delta_t = choose_delta_t(T, T_prime)
    if delta_T is None:
        delta_T = default_delta_T(T, delta_t)
    return delta_t, delta_T, guided


def build_from_config(cfg: TrainConfig, shape: tuple[int, ...], T: int):
    """Fresh predictor for sequences of ``shape`` = (N, L, C, H, W)."""
    _, L, C, H, W = shape
    if T >= L:
        raise ConfigError(f"T={T} leaves no frames to predict in sequences of length {L}")
    if cfg.model == "ustep":
        dt, dT, _ = resolve_scales(T, L - T, cfg.delta_t, cfg.delta_T)
        mcfg = UstepConfig(dt, dT, C, H, W, cfg.hidden, cfg.depth, cfg.kernel_size, cfg.cross_gate)
        return Ustep.init(mcfg, seed=cfg.seed, dtype=cfg.dtype)
    bcfg = BaselineConfig(C, H, W, cfg.hidden, cfg.depth, cfg.kernel_size, frames=T)
    cls = RecurrentLite if cfg.model == "rec-lite" else RecurrentFreeLite
    return cls.init(bcfg, seed=cfg.seed, dtype=cfg.dtype)


# ------------------------------------------------------------------ training


def eval_mse(model, seqs: np.ndarray, T: int, batch_size: int = 64) -> float:
    """Mean clamped per-pixel MSE of rollouts over every frame after ``T``."""
    T_prime = seqs.shape[1] - T
    total = 0.0
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo : lo + batch_size]
        pred = model.predict(chunk[:, :T], T_prime)
        total += metrics.mse(pred, chunk[:, T:]) * len(chunk)
    return total / len(seqs)


def fit(
    model,
    train_seqs: np.ndarray,
    T: int,
    *,
    epochs: int,
    batch_size: int = 16,
    lr: float = 0.01,
    weight_decay: float = 0.05,
    seed: int = 0,
    eval_seqs: np.ndarray | None = None,
    progress=None,
) -> tuple[ParamStore, RunLog]:
    """Optimise ``model.params`` in place; returns the best parameters and the log."""
    rng = np.random.default_rng(seed)
    state = AdamState()
    runlog = RunLog()
    best = model.params.copy()
    eval_set = train_seqs if eval_seqs is None else eval_seqs
    n = len(train_seqs)
    for epoch in range(epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            batch = train_seqs[order[lo : lo + batch_size]]
            model.params.zero_grad()
            loss = model.training_loss(batch, T)
            tc.backward(loss)
            adamw_step(model.params, state, lr=lr, weight_decay=weight_decay)
            losses.append(float(loss.data) * len(batch))
        model.params.zero_grad()
        train_loss = sum(losses) / n
        score = eval_mse(model, eval_set, T)
        if not (math.isfinite(train_loss) and math.isfinite(score)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        entry = EpochLog(epoch, train_loss, score, time.perf_counter() - start)
        runlog.epochs.append(entry)
        if score < runlog.best_eval_mse:
            runlog.best_eval_mse = score
            runlog.best_epoch = epoch
            best = model.params.copy()
        if progress is not None:
            progress(entry)
    return best, runlog


def _dataset_T(ds: Dataset, override: int | None) -> int:
    if override is not None:
        return override
    if ds.T is None:
        raise ConfigError("dataset has no generator echo; pass T explicitly")
    return ds.T


def train(cfg: TrainConfig, progress=None) -> tuple[str, RunLog]:
    """Train on ``cfg.data``; writes the best checkpoint to ``cfg.out`` and the run log."""
    cfg.validate()
    if cfg.data is None or cfg.out is None:
        raise ConfigError("train needs data and out paths")
    ds = read_dataset(cfg.data)
    T = _dataset_T(ds, cfg.T)
    model = build_from_config(cfg, ds.shape, T)
    train_seqs = ds.sequences.astype(cfg.dtype)
    eval_seqs = None
    if cfg.eval_data is not None:
        eds = read_dataset(cfg.eval_data)
        if eds.shape[2:] != ds.shape[2:] or eds.shape[1] <= T:
            raise ConfigError(f"eval data shape {eds.shape} incompatible with training data {ds.shape}")
        eval_seqs = eds.sequences.astype(cfg.dtype)
    best, runlog = fit(
        model,
        train_seqs,
        T,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
        eval_seqs=eval_seqs,
        progress=progress,
    )
    save_checkpoint(best, cfg.out)
    with open(checkpoint_sidecar(cfg.out), "w") as fh:
        json.dump({**config_dict(model), "T": T}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log_path = cfg.log_path or os.fspath(cfg.out) + ".runlog.jsonl"
    with open(log_path, "w") as fh:
        fh.write(runlog.to_jsonl(cfg.log_time))
    return cfg.out, runlog


# ---------------------------------------------------------------- evaluation


def checkpoint_sidecar(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".json"


def load_model(path: str | os.PathLike, ds: Dataset, kind: str | None = None):
    """Rebuild a predictor from a checkpoint, cross-checked against its config echo if present."""
    params = load_checkpoint(path)
    _, _, C, H, W = ds.shape
    try:
        model = build_model(kind, params, C, H, W)
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing parameter {exc}") from None
    except DimensionError as exc:
        raise FormatError(f"incompatible checkpoint: {exc}") from None
    side = checkpoint_sidecar(path)
    if os.path.exists(side):
        with open(side) as fh:
            echo = json.load(fh)
        if echo.get("channels") != C:
            raise FormatError(f"checkpoint was trained on C={echo.get('channels')}, data has C={C}")
    return model


def evaluate(model, ds: Dataset, T_prime: int, T: int | None = None, metadata: dict | None = None) -> metrics.MetricsReport:
    """Roll ``model`` (or a checkpoint path) out on every sequence and score it frame by frame."""
    if isinstance(model, (str, os.PathLike)):
        model = load_model(model, ds)
    T = _dataset_T(ds, T)
    L = ds.shape[1]
    if T_prime < 1:
        raise ConfigError("T' must be >= 1")
    if T + T_prime > L:
        raise ConfigError(f"T'={T_prime} exceeds the {L - T} ground-truth frames stored after T={T}")
    seqs = ds.sequences
    if getattr(model, "params", None) is not None:
        seqs = seqs.astype(model.dtype)
    pred = model.predict(seqs[:, :T], T_prime)
    meta = {"model": model.kind, "dataset_hash": dataset_hash(ds), "T": T, "T_prime": T_prime}
    if isinstance(model, Ustep):
        meta.update(delta_t=model.config.delta_t, delta_T=model.config.delta_T)
    meta.update(metadata or {})
    return metrics.frame_report(pred, ds.sequences[:, T : T + T_prime], meta)


def floor_report(ds: Dataset, T_prime: int, T: int | None = None) -> metrics.MetricsReport:
    return evaluate(CopyLastFrame(), ds, T_prime, T, {"model": "floor"})


# ----------------------------------------------------------------- gradcheck

GRADCHECK_DEFAULTS = {
    "H": 8, "W": 8, "C": 1, "hidden": 4, "depth": 1, "kernel": 3,
    "dt": 2, "dT": 4, "T": 4, "Tp": 4, "batch": 2, "eps": 1e-6,
}


def gradcheck_forward_train(overrides: dict | None = None, seed: int = 0, corrupt: bool = False) -> tc.GradcheckReport:
    """Finite-difference check of the full teacher-forced loss on a tiny model.

    Parameters are drawn at random (readout and biases included) so that no
    gradient is trivially zero. ``corrupt`` doubles every backpropagated
    gradient, which the check must flag.
    """
    opts = dict(GRADCHECK_DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in opts:
            raise ConfigError(f"unknown gradcheck key {key!r}")
        opts[key] = type(opts[key])(value)
    gen = GenConfig(
        num_sequences=opts["batch"], T=opts["T"], T_prime=opts["Tp"], height=opts["H"], width=opts["W"],
        channels=opts["C"], object_size=max(1, min(opts["H"], opts["W"]) // 4), seed=seed,
    )
    seqs = generate(gen).sequences.astype(np.float64)
    cfg = UstepConfig(opts["dt"], opts["dT"], opts["C"], opts["H"], opts["W"], opts["hidden"], opts["depth"], opts["kernel"])
    model = Ustep.init(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in model.params.items():
        if name.startswith("readout") or name.endswith(".bias"):
            t.data[...] = rng.uniform(-0.5, 0.5, size=t.shape)

    def loss_fn(_params):
        loss = model.forward_train(seqs)[1]
        if corrupt:
            loss = tc._make(loss.data, (loss,), lambda g: (2.0 * g,))
        return loss

    return tc.gradcheck_report(loss_fn, model.params, eps=opts["eps"])
