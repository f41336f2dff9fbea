"""Desk-scale toy experiment shared by the acceptance suite and ``scripts/``.

One bouncing 4x4 square on a 16x16 grid, T = T' = 4. Training, validation
and test sets come from different generator seeds; the checkpoint is chosen
on validation MSE and scored once on the test set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import GenConfig, generate
from .model import CopyLastFrame, Ustep, UstepConfig
from .trainer import eval_mse, fit


@dataclass
class ToyConfig:
    train_seed: int = 7
    val_seed: int = 9
    test_seed: int = 8
    num_train: int = 256
    num_val: int = 64
    num_test: int = 64
    T: int = 4
    T_prime: int = 4
    delta_t: int = 2
    delta_T: int = 4
    hidden: int = 8
    depth: int = 2
    kernel_size: int = 5
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.05
    dtype: type = np.float32


@dataclass
class ToyResult:
    seed: int
    cross_gate: bool
    test_mse: float
    floor_mse: float
    best_epoch: int
    seconds: float
    model: Ustep = field(repr=False, default=None)

    @property
    def ratio(self) -> float:
        return self.test_mse / self.floor_mse


def toy_splits(cfg: ToyConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    def make(n, seed):
        gc = GenConfig(num_sequences=n, T=cfg.T, T_prime=cfg.T_prime, seed=seed)
        return generate(gc).sequences.astype(cfg.dtype)

    return make(cfg.num_train, cfg.train_seed), make(cfg.num_val, cfg.val_seed), make(cfg.num_test, cfg.test_seed)


def run_toy(cfg: ToyConfig, seed: int = 0, cross_gate: bool = True, splits=None, progress=None) -> ToyResult:
    train, val, test = splits if splits is not None else toy_splits(cfg)
    mcfg = UstepConfig(cfg.delta_t, cfg.delta_T, 1, 16, 16, cfg.hidden, cfg.depth, cfg.kernel_size, cross_gate)
    model = Ustep.init(mcfg, seed=seed, dtype=cfg.dtype)
    start = time.perf_counter()
    best, runlog = fit(
        model,
        train,
        cfg.T,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        seed=seed,
        eval_seqs=val,
        progress=progress,
    )
    model = Ustep(mcfg, best)
    return ToyResult(
        seed=seed,
        cross_gate=cross_gate,
        test_mse=eval_mse(model, test, cfg.T),
        floor_mse=eval_mse(CopyLastFrame(), test, cfg.T),
        best_epoch=runlog.best_epoch,
        seconds=time.perf_counter() - start,
        model=model,
    )
