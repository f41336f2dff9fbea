"""Frame quality metrics (MSE, MAE, SSIM, PSNR) and frame-wise reports.

Inputs are clamped to [0, 1] before every metric. MSE and MAE are per-pixel
means over a frame.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, FormatError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 100.0
CSV_COLUMNS = ("frame_index", "mse", "mae", "ssim", "psnr")
METRICS = CSV_COLUMNS[1:]


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return np.clip(pred, 0.0, 1.0), np.clip(target, 0.0, 1.0)


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def psnr_from_mse(err: float, data_range: float = 1.0) -> float:
    if err < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range**2 / err))


def psnr(pred, target, data_range: float = 1.0) -> float:
    return psnr_from_mse(mse(pred, target), data_range)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def _ssim_2d(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(pred, target, data_range: float = 1.0) -> float:
    """Gaussian-windowed SSIM (11x11, sigma 1.5) over valid window positions.

    Accepts (H, W) or (C, H, W); channels are scored separately and averaged.
    """
    p, t = _pair(pred, target)
    if p.ndim == 2:
        p, t = p[None], t[None]
    if p.ndim != 3:
        raise DimensionError(f"ssim expects (H, W) or (C, H, W), got {p.shape}")
    if min(p.shape[1:]) < SSIM_WINDOW:
        raise ConfigError(f"frame {p.shape[1:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(np.mean([_ssim_2d(p[c], t[c], data_range) for c in range(p.shape[0])]))


def frame_metrics(pred, target) -> dict[str, float]:
    err = mse(pred, target)
    return {"mse": err, "mae": mae(pred, target), "ssim": ssim(pred, target), "psnr": psnr_from_mse(err)}


@dataclass
class MetricsReport:
    per_frame: list[dict[str, float]]
    aggregate: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[list]:
        out = [[i] + [r[m] for m in METRICS] for i, r in enumerate(self.per_frame)]
        out.append(["aggregate"] + [self.aggregate[m] for m in METRICS])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "metadata": self.metadata,
            "per_frame": [{"frame_index": i, **r} for i, r in enumerate(self.per_frame)],
            "aggregate": self.aggregate,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_csv(cls, text: str, metadata: dict | None = None) -> "MetricsReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise FormatError(f"CSV header {header} != {list(CSV_COLUMNS)}")
        per_frame, aggregate = [], None
        for row in reader:
            values = dict(zip(METRICS, map(float, row[1:])))
            if row[0] == "aggregate":
                aggregate = values
            else:
                if int(row[0]) != len(per_frame):
                    raise FormatError(f"frame index {row[0]} out of order")
                per_frame.append(values)
        if aggregate is None:
            raise FormatError("CSV has no aggregate row")
        return cls(per_frame, aggregate, metadata or {})

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        per_frame = [{m: r[m] for m in METRICS} for r in doc["per_frame"]]
        return cls(per_frame, doc["aggregate"], doc.get("metadata", {}))


def frame_report(pred_seq, target_seq, metadata: dict | None = None) -> MetricsReport:
    """Metrics per predicted frame, averaged over samples, plus an aggregate row.

    Arrays are (T', C, H, W) for one sample or (N, T', C, H, W) for many.
    """
    pred = np.asarray(pred_seq)
    target = np.asarray(target_seq)
    if pred.shape[:-3] != target.shape[:-3]:
        raise DimensionError(f"sequence shapes differ: {pred.shape} vs {target.shape}")
    if pred.shape != target.shape:
        raise DimensionError(f"frame shapes differ: {pred.shape} vs {target.shape}")
    if pred.ndim == 4:
        pred, target = pred[None], target[None]
    n, length = pred.shape[:2]
    per_frame = []
    for t in range(length):
        scores = [frame_metrics(pred[s, t], target[s, t]) for s in range(n)]
        per_frame.append({m: float(np.mean([sc[m] for sc in scores])) for m in METRICS})
    aggregate = {m: float(np.mean([r[m] for r in per_frame])) for m in METRICS}
    meta = dict(metadata or {})
    meta.setdefault("num_samples", int(n))
    meta.setdefault("pixels_per_frame", int(np.prod(pred.shape[2:])))
    return MetricsReport(per_frame, aggregate, meta)
