"""Synthetic bouncing-squares sequences and the USTP1 dataset file format.

Each sequence draws from its own xoshiro256** stream derived from
``(seed, sequence_index)``. Draw order per sequence: background noise
(row-major, cluttered variant only), then per object ``x, y, speed, angle``,
then per frame and object the two velocity perturbations (dynamic-speed
variant only).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, FormatError
from .prng import Xoshiro256StarStar, stream

VARIANTS = ("plain", "dynamic-speed", "cluttered-background")

MAGIC = b"USTP1"
VERSION = 1
_HEADER = struct.Struct("<5sBIIIII")
MAX_ELEMENTS = 1 << 36


@dataclass
class GenConfig:
    num_sequences: int = 256
    T: int = 4
    T_prime: int = 4
    height: int = 16
    width: int = 16
    channels: int = 1
    num_objects: int = 1
    object_size: int = 4
    speed_min: float = 1.0
    speed_max: float = 2.0
    variant: str = "plain"
    sigma_v: float = 0.0
    noise_amplitude: float = 0.0
    seed: int = 0

    @property
    def length(self) -> int:
        return self.T + self.T_prime

    def validate(self) -> None:
        if self.num_sequences < 1 or self.T < 1 or self.T_prime < 1:
            raise ConfigError("num_sequences, T and T' must be >= 1")
        if self.channels < 1 or self.num_objects < 0:
            raise ConfigError("channels must be >= 1 and num_objects >= 0")
        if not 1 <= self.object_size < min(self.height, self.width):
            raise ConfigError(f"object_size {self.object_size} must be in [1, min(H, W))")
        if not (math.isfinite(self.speed_min) and math.isfinite(self.speed_max)):
            raise ConfigError("speeds must be finite")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigError("need 0 <= speed_min <= speed_max")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not (math.isfinite(self.sigma_v) and self.sigma_v >= 0):
            raise ConfigError("sigma_v must be >= 0")
        if not 0 <= self.noise_amplitude < 1:
            raise ConfigError("noise_amplitude must lie in [0, 1)")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        out = cls()
        for key, value in d.items():
            current = getattr(out, key)
            try:
                setattr(out, key, type(current)(value))
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        return out


@dataclass
class Dataset:
    sequences: np.ndarray  # (N, L, C, H, W) float32 in [0, 1]
    config: GenConfig | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sequences.shape

    @property
    def T(self) -> int | None:
        return None if self.config is None else self.config.T


# ---------------------------------------------------------------- dynamics


def reflect(pos: float, vel: float, upper: float) -> tuple[float, float]:
    """Fold ``pos`` back into ``[0, upper]``, flipping ``vel`` on each wall hit."""
    while pos < 0 or pos > upper:
        if pos < 0:
            pos, vel = -pos, abs(vel)
        else:
            pos, vel = 2 * upper - pos, -abs(vel)
    return pos, vel


def advance(state: list[float], bounds: tuple[float, float], rng: Xoshiro256StarStar | None = None, sigma_v: float = 0.0):
    """Move one object ``[x, y, vx, vy]`` one frame, with optional velocity noise."""
    x, y, vx, vy = state
    if rng is not None and sigma_v > 0:
        vx += sigma_v * rng.gauss()
        vy += sigma_v * rng.gauss()
    x, vx = reflect(x + vx, vx, bounds[0])
    y, vy = reflect(y + vy, vy, bounds[1])
    return [x, y, vx, vy]


def rasterize(objects: list[list[float]], size: int, height: int, width: int, background: np.ndarray | None = None):
    frame = np.zeros((height, width)) if background is None else background.copy()
    for x, y, _, _ in objects:
        col = min(int(math.floor(x)), width - size)
        row = min(int(math.floor(y)), height - size)
        frame[row : row + size, col : col + size] += 1.0
    np.minimum(frame, 1.0, out=frame)
    return frame


def generate_sequence(cfg: GenConfig, index: int) -> np.ndarray:
    rng = stream(cfg.seed, index)
    H, W, s = cfg.height, cfg.width, cfg.object_size
    background = None
    if cfg.variant == "cluttered-background":
        background = np.array([cfg.noise_amplitude * rng.uniform() for _ in range(H * W)]).reshape(H, W)
    objects = []
    for _ in range(cfg.num_objects):
        x = rng.uniform() * (W - s)
        y = rng.uniform() * (H - s)
        speed = cfg.speed_min + rng.uniform() * (cfg.speed_max - cfg.speed_min)
        angle = 2.0 * math.pi * rng.uniform()
        objects.append([x, y, speed * math.cos(angle), speed * math.sin(angle)])
    sigma = cfg.sigma_v if cfg.variant == "dynamic-speed" else 0.0
    bounds = (float(W - s), float(H - s))
    frames = np.empty((cfg.length, cfg.channels, H, W), dtype=np.float32)
    for t in range(cfg.length):
        frames[t] = rasterize(objects, s, H, W, background)[None]
        objects = [advance(o, bounds, rng, sigma) for o in objects]
    return frames


def generate(cfg: GenConfig) -> Dataset:
    cfg.validate()
    seqs = np.stack([generate_sequence(cfg, i) for i in range(cfg.num_sequences)])
    return Dataset(seqs, cfg)


# -------------------------------------------------------------------- files


def serialize(ds: Dataset) -> bytes:
    seqs = np.ascontiguousarray(ds.sequences, dtype="<f4")
    if seqs.ndim != 5:
        raise FormatError(f"dataset must be 5-D (N, L, C, H, W), got {seqs.shape}")
    return _HEADER.pack(MAGIC, VERSION, *seqs.shape) + seqs.tobytes()


def dataset_hash(ds: Dataset) -> str:
    return hashlib.sha256(serialize(ds)).hexdigest()


def sidecar_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".json"


def write_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write the USTP1 file plus, when known, a ``<path>.json`` generator echo."""
    with open(path, "wb") as fh:
        fh.write(serialize(ds))
    if ds.config is not None:
        with open(sidecar_path(path), "w") as fh:
            json.dump(asdict(ds.config), fh, indent=2, sort_keys=True)
            fh.write("\n")


def parse_dataset(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", offset=len(buf))
    magic, version, *dims = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC.decode()!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=5)
    if any(d == 0 for d in dims):
        raise FormatError(f"zero dimension in header {dims}", offset=6)
    count = math.prod(dims)
    if count > MAX_ELEMENTS:
        raise FormatError(f"header dimensions {dims} overflow the element limit", offset=6)
    need = _HEADER.size + 4 * count
    if len(buf) < need:
        raise FormatError(f"truncated data: header declares {count} values ({need} bytes), file has {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after data", offset=need)
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(dims).astype(np.float32)


def read_dataset(path: str | os.PathLike) -> Dataset:
    with open(path, "rb") as fh:
        seqs = parse_dataset(fh.read())
    cfg = None
    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side) as fh:
            cfg = GenConfig.from_dict(json.load(fh))
    return Dataset(seqs, cfg)
