"""Micro segments and trailing macro windows over a frame sequence.

A sequence of ``L`` frames is padded (by repeating its last frame) up to a
multiple of ``dt`` and cut into non-overlapping micro segments of ``dt``
frames. Step ``i`` of the recurrence consumes micro segment ``i + 1`` together
with the macro window of ``dT`` frames that ends where that segment ends,
i.e. ``[(i + 2) * dt - dT, (i + 2) * dt)``. Indices below zero are served by
frame 0.

Arrays carry time on ``time_axis`` (0 for a single ``L x C x H x W``
sequence, 1 for a batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


def choose_delta_t(T: int, T_prime: int) -> int:
    """Micro segment length guideline: 5 for long videos, 2 for short ones."""
    if T < 1 or T_prime < 1:
        raise ConfigError("T and T' must be >= 1")
    return 5 if T + T_prime > 10 else 2


def default_delta_T(T: int, delta_t: int) -> int:
    """Macro window covering the observed length, rounded down to a multiple of ``delta_t``."""
    return max(delta_t, (T // delta_t) * delta_t)


def check_scales(delta_t: int, delta_T: int) -> int:
    """Validate the scale pair and return ``k = delta_T // delta_t``."""
    if delta_t < 1:
        raise ConfigError(f"delta_t must be >= 1, got {delta_t}")
    if delta_T < delta_t or delta_T % delta_t:
        raise ConfigError(f"delta_T={delta_T} must be a positive multiple of delta_t={delta_t}")
    return delta_T // delta_t


def padded_length(L: int, delta_t: int) -> int:
    return -(-L // delta_t) * delta_t


def pad_sequence(seq: np.ndarray, delta_t: int, time_axis: int = 0) -> tuple[np.ndarray, int]:
    """Repeat the final frame until the length is a multiple of ``delta_t``."""
    if delta_t < 1:
        raise ConfigError(f"delta_t must be >= 1, got {delta_t}")
    L = seq.shape[time_axis]
    if L == 0:
        raise ContractError("cannot pad an empty sequence")
    pad = padded_length(L, delta_t) - L
    if pad == 0:
        return seq, 0
    idx = np.concatenate([np.arange(L), np.full(pad, L - 1)])
    return np.take(seq, idx, axis=time_axis), pad


@dataclass(frozen=True)
class SegmentPartition:
    delta_t: int
    delta_T: int
    length: int  # padded
    pad_count: int
    micro: tuple[tuple[int, int], ...]
    macro_windows: tuple[tuple[int, int], ...]  # start may be negative (edge-replicated)

    @property
    def k(self) -> int:
        return self.delta_T // self.delta_t


def partition_length(L: int, delta_t: int, delta_T: int) -> SegmentPartition:
    check_scales(delta_t, delta_T)
    if L < 1:
        raise ContractError("sequence must hold at least one frame")
    Lp = padded_length(L, delta_t)
    if Lp < 2 * delta_t:
        raise ConfigError(f"padded length {Lp} is shorter than two micro segments ({2 * delta_t})")
    n_micro = Lp // delta_t
    micro = tuple((j * delta_t, (j + 1) * delta_t) for j in range(n_micro))
    macro = tuple(((i + 2) * delta_t - delta_T, (i + 2) * delta_t) for i in range(n_micro - 1))
    return SegmentPartition(delta_t, delta_T, Lp, Lp - L, micro, macro)


def partition(seq: np.ndarray, delta_t: int, delta_T: int, time_axis: int = 0) -> SegmentPartition:
    return partition_length(seq.shape[time_axis], delta_t, delta_T)


def window_indices(step: int, delta_t: int, delta_T: int) -> np.ndarray:
    end = (step + 2) * delta_t
    return np.maximum(np.arange(end - delta_T, end), 0)


def macro_window_frames(stream: np.ndarray, step: int, delta_t: int, delta_T: int, time_axis: int = 0) -> np.ndarray:
    """Frames ``[(step+2)*dt - dT, (step+2)*dt)`` of ``stream``, clamped at frame 0."""
    check_scales(delta_t, delta_T)
    end = (step + 2) * delta_t
    if step < 0 or stream.shape[time_axis] < end:
        raise ContractError(
            f"stream of length {stream.shape[time_axis]} cannot serve macro window for step {step} (needs {end})"
        )
    return np.take(stream, window_indices(step, delta_t, delta_T), axis=time_axis)


def micro_segment_frames(stream: np.ndarray, j: int, delta_t: int, time_axis: int = 0) -> np.ndarray:
    if j < 0 or stream.shape[time_axis] < (j + 1) * delta_t:
        raise ContractError(f"stream of length {stream.shape[time_axis]} has no micro segment {j}")
    sl = [slice(None)] * stream.ndim
    sl[time_axis] = slice(j * delta_t, (j + 1) * delta_t)
    return stream[tuple(sl)]
