"""USTEP predictor and the two single-scale baselines.

All three predictors share one block family: a 1x1 channel-mixing input
convolution followed by ``encoder_depth`` residual blocks
``h + silu(conv_kxk(h))``, and a zero-initialised 1x1 readout. Frames are
stacked along channels before encoding, so a segment of ``n`` frames with
``C`` channels enters as ``n*C`` channels.

Arrays handed to the predictors are batched: ``(N, L, C, H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DimensionError
from .segmentation import (
    check_scales,
    macro_window_frames,
    micro_segment_frames,
    pad_sequence,
    padded_length,
)
from .tensor import ParamStore, Tensor

MODEL_KINDS = ("ustep", "rec-lite", "recfree-lite")


# ------------------------------------------------------------------- blocks


def _init_conv(params: ParamStore, name: str, cin: int, cout: int, k: int, rng, dtype, zero=False) -> None:
    if zero:
        w = np.zeros((cout, cin, k, k))
    else:
        bound = math.sqrt(1.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    params.add(f"{name}.weight", w.astype(dtype), dtype=dtype)
    params.add(f"{name}.bias", np.zeros(cout, dtype=dtype), dtype=dtype)


def _init_encoder(params, prefix, cin, hidden, depth, k, rng, dtype) -> None:
    _init_conv(params, f"{prefix}.in", cin, hidden, 1, rng, dtype)
    for d in range(depth):
        _init_conv(params, f"{prefix}.block{d}", hidden, hidden, k, rng, dtype)


def _conv(params: ParamStore, name: str, x: Tensor) -> Tensor:
    return tc.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def encode(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    """Channel-mixing encoder: 1x1 projection then residual k x k blocks."""
    h = _conv(params, f"{prefix}.in", x)
    d = 0
    while f"{prefix}.block{d}.weight" in params:
        h = h + tc.silu(_conv(params, f"{prefix}.block{d}", h))
        d += 1
    return h


def _depth(params: ParamStore, prefix: str) -> int:
    d = 0
    while f"{prefix}.block{d}.weight" in params:
        d += 1
    return d


def _stack(frames: np.ndarray, dtype) -> Tensor:
    """(N, n, C, H, W) -> constant tensor (N, n*C, H, W)."""
    n, t, c, h, w = frames.shape
    return Tensor(frames.reshape(n, t * c, h, w), dtype=dtype)


def _unstack(x: Tensor, frames: int) -> Tensor:
    n, tc_, h, w = x.shape
    return tc.reshape(x, (n, frames, tc_ // frames, h, w))


def _check_seqs(seqs: np.ndarray, channels: int) -> None:
    if seqs.ndim != 5:
        raise DimensionError(f"expected (N, L, C, H, W) frames, got shape {seqs.shape}")
    if seqs.shape[2] != channels:
        raise DimensionError(f"frames have {seqs.shape[2]} channels, model expects {channels}")


# ------------------------------------------------------- cross-segment gating


def macro_step(vbar: Tensor, h_prev: Tensor, w_v: Tensor, b_v: Tensor) -> Tensor:
    """Context gate: ``h = vbar + sigmoid(w_v * vbar + b_v) . h_prev``."""
    tc._same_shape("macro_step", vbar, h_prev)
    g = tc.sigmoid(tc.conv2d(vbar, w_v, b_v))
    return vbar + g * h_prev


def micro_step(
    ubar: Tensor,
    h_prev: Tensor,
    h_v: Tensor,
    w_u: Tensor,
    b_u: Tensor,
    w_c: Tensor | None,
    b_c: Tensor | None,
) -> Tensor:
    """Historical gate ``m`` on the micro history, cross-segment gate ``c`` on the macro state.

    Passing ``w_c=None`` pins ``c`` to zero, cutting the macro path.
    """
    tc._same_shape("micro_step", ubar, h_prev)
    tc._same_shape("micro_step", ubar, h_v)
    m = tc.sigmoid(tc.conv2d(ubar, w_u, b_u))
    h = ubar + m * h_prev
    if w_c is None:
        c = Tensor(np.zeros(ubar.shape, dtype=ubar.dtype))
    else:
        c = tc.sigmoid(tc.conv2d(ubar, w_c, b_c))
    return h + c * h_v


# ------------------------------------------------------------------- USTEP


@dataclass
class UstepConfig:
    delta_t: int
    delta_T: int
    channels: int = 1
    height: int = 16
    width: int = 16
    hidden: int = 16
    encoder_depth: int = 2
    kernel_size: int = 3
    cross_gate: bool = True

    def validate(self) -> None:
        check_scales(self.delta_t, self.delta_T)
        if self.hidden < 1 or self.encoder_depth < 1:
            raise ConfigError("hidden channels and encoder depth must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError("frame geometry must be positive")


@dataclass
class StepState:
    """Hidden states after one recurrence step (kept for inspection)."""

    h_u: np.ndarray
    h_v: np.ndarray


class Ustep:
    """Micro/macro segment predictor."""

    kind = "ustep"

    def __init__(self, config: UstepConfig, params: ParamStore):
        config.validate()
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: UstepConfig, seed: int = 0, dtype=np.float64) -> "Ustep":
        config.validate()
        rng = np.random.default_rng(seed)
        c, hid, k = config.channels, config.hidden, config.kernel_size
        p = ParamStore()
        _init_encoder(p, "micro", config.delta_t * c, hid, config.encoder_depth, k, rng, dtype)
        _init_encoder(p, "macro", config.delta_T * c, hid, config.encoder_depth, k, rng, dtype)
        gates = ("gate_v", "gate_u", "gate_c") if config.cross_gate else ("gate_v", "gate_u")
        for g in gates:
            _init_conv(p, g, hid, hid, k, rng, dtype)
        _init_conv(p, "readout", hid, config.delta_t * c, 1, rng, dtype, zero=True)
        return cls(config, p)

    @classmethod
    def from_params(cls, params: ParamStore, channels: int, height: int, width: int) -> "Ustep":
        win = params["micro.in.weight"].shape
        mac = params["macro.in.weight"].shape
        if win[1] % channels or mac[1] % channels:
            raise DimensionError(f"checkpoint input widths {win[1]}/{mac[1]} incompatible with C={channels}")
        cfg = UstepConfig(
            delta_t=win[1] // channels,
            delta_T=mac[1] // channels,
            channels=channels,
            height=height,
            width=width,
            hidden=win[0],
            encoder_depth=_depth(params, "micro"),
            kernel_size=params["gate_v.weight"].shape[2],
            cross_gate="gate_c.weight" in params,
        )
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["readout.weight"].dtype

    # single pieces, exposed for inspection and tests

    def encode_micro(self, segment: Tensor) -> Tensor:
        return encode(self.params, "micro", segment)

    def encode_macro(self, window: Tensor) -> Tensor:
        return encode(self.params, "macro", window)

    def readout(self, h_u: Tensor) -> Tensor:
        return _unstack(_conv(self.params, "readout", h_u), self.config.delta_t)

    def step(self, window: np.ndarray, segment: np.ndarray, h_u: Tensor, h_v: Tensor):
        """One recurrence step from raw frames; returns (prediction, h_u, h_v)."""
        p = self.params
        vbar = self.encode_macro(_stack(window, self.dtype))
        ubar = self.encode_micro(_stack(segment, self.dtype))
        h_v = macro_step(vbar, h_v, p["gate_v.weight"], p["gate_v.bias"])
        if self.config.cross_gate:
            w_c, b_c = p["gate_c.weight"], p["gate_c.bias"]
        else:
            w_c = b_c = None
        h_u = micro_step(ubar, h_u, h_v, p["gate_u.weight"], p["gate_u.bias"], w_c, b_c)
        return self.readout(h_u), h_u, h_v

    def _zeros(self, frames: np.ndarray) -> Tensor:
        n, _, _, h, w = frames.shape
        return Tensor(np.zeros((n, self.config.hidden, h, w), dtype=self.dtype))

    def forward_train(self, seqs: np.ndarray, states: list | None = None):
        """Teacher-forced pass over whole sequences.

        Step ``i`` reads ground-truth frames and predicts frames
        ``[(i+2)dt, (i+3)dt)``. Frames added by padding are left out of the
        loss. Returns ``(predictions, loss)``.
        """
        cfg = self.config
        _check_seqs(seqs, cfg.channels)
        L = seqs.shape[1]
        dt, dT = cfg.delta_t, cfg.delta_T
        data, _ = pad_sequence(seqs, dt, time_axis=1)
        steps = data.shape[1] // dt - 2
        if steps < 1:
            raise ConfigError(f"sequence of length {L} gives no supervised step for delta_t={dt}")
        h_u = h_v = self._zeros(seqs)
        preds = []
        weighted = []
        total = 0
        for i in range(steps):
            window = macro_window_frames(data, i, dt, dT, time_axis=1)
            segment = micro_segment_frames(data, i + 1, dt, time_axis=1)
            pred, h_u, h_v = self.step(window, segment, h_u, h_v)
            if states is not None:
                states.append(StepState(h_u.data, h_v.data))
            preds.append(pred)
            lo = (i + 2) * dt
            target = data[:, lo : lo + dt].astype(self.dtype, copy=False)
            valid = np.clip(L - lo, 0, dt)
            if valid == 0:
                continue
            mask = None
            if valid < dt:
                mask = np.zeros(target.shape, dtype=self.dtype)
                mask[:, :valid] = 1.0
            weighted.append((tc.mse_loss(pred, target, mask), valid))
            total += valid
        loss = None
        for term, valid in weighted:
            part = tc.scale(term, valid / total)
            loss = part if loss is None else loss + part
        return preds, loss

    def training_loss(self, seqs: np.ndarray, T: int) -> Tensor:
        return self.forward_train(seqs)[1]

    def rollout(self, observed: np.ndarray, T_prime: int, states: list | None = None) -> np.ndarray:
        """Autoregressive prediction of ``T_prime`` frames after ``observed``.

        The frame stream starts as the observed frames. Each step predicts the
        ``dt`` frames after its micro segment; predicted frames lying beyond
        the current end of the stream are appended and feed later steps.
        """
        cfg = self.config
        _check_seqs(observed, cfg.channels)
        if T_prime < 1:
            raise ConfigError("T' must be >= 1")
        dt, dT = cfg.delta_t, cfg.delta_T
        T = observed.shape[1]
        if padded_length(T, dt) < 2 * dt:
            raise ConfigError(f"observed length {T} shorter than two micro segments of {dt}")
        stream = observed.astype(self.dtype)
        if T < 2 * dt:
            stream, _ = pad_sequence(stream, dt, time_axis=1)
        with tc.no_grad():
            h_u = h_v = self._zeros(observed)
            i = 0
            while stream.shape[1] < T + T_prime:
                window = macro_window_frames(stream, i, dt, dT, time_axis=1)
                segment = micro_segment_frames(stream, i + 1, dt, time_axis=1)
                pred, h_u, h_v = self.step(window, segment, h_u, h_v)
                if states is not None:
                    states.append(StepState(h_u.data, h_v.data))
                lo = (i + 2) * dt
                have = stream.shape[1]
                if lo + dt > have:
                    stream = np.concatenate([stream, pred.data[:, have - lo :]], axis=1)
                i += 1
        return stream[:, T : T + T_prime]

    predict = rollout


# --------------------------------------------------------------- baselines


@dataclass
class BaselineConfig:
    channels: int = 1
    height: int = 16
    width: int = 16
    hidden: int = 16
    encoder_depth: int = 2
    kernel_size: int = 3
    frames: int = 1  # recurrent-free: frames per shot (T)

    def validate(self) -> None:
        if self.hidden < 1 or self.encoder_depth < 1 or self.frames < 1:
            raise ConfigError("hidden, encoder depth and frames must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")


class RecurrentLite:
    """Frame-by-frame gated recurrence (micro scale only, one frame per step)."""

    kind = "rec-lite"

    def __init__(self, config: BaselineConfig, params: ParamStore):
        config.validate()
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: BaselineConfig, seed: int = 0, dtype=np.float64) -> "RecurrentLite":
        config.validate()
        rng = np.random.default_rng(seed)
        p = ParamStore()
        c, hid, k = config.channels, config.hidden, config.kernel_size
        _init_encoder(p, "frame_enc", c, hid, config.encoder_depth, k, rng, dtype)
        _init_conv(p, "gate_h", hid, hid, k, rng, dtype)
        _init_conv(p, "readout", hid, c, 1, rng, dtype, zero=True)
        return cls(config, p)

    @classmethod
    def from_params(cls, params, channels, height, width) -> "RecurrentLite":
        w = params["frame_enc.in.weight"].shape
        if w[1] != channels:
            raise DimensionError(f"checkpoint expects {w[1]} channels, data has {channels}")
        cfg = BaselineConfig(channels, height, width, w[0], _depth(params, "frame_enc"), params["gate_h.weight"].shape[2])
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["readout.weight"].dtype

    def cell(self, frame: Tensor, h_prev: Tensor | None) -> tuple[Tensor, Tensor]:
        """One step: encode frame, gate against ``h_prev``, read out the next frame."""
        p = self.params
        xbar = encode(p, "frame_enc", frame)
        if h_prev is None:
            h = xbar
        else:
            h = macro_step(xbar, h_prev, p["gate_h.weight"], p["gate_h.bias"])
        return _conv(p, "readout", h), h

    def _run(self, seqs: np.ndarray, T: int, steps: int, provenance: list | None):
        preds = []
        h = None
        prev = None
        for i in range(steps):
            if i < T:
                frame = Tensor(seqs[:, i], dtype=self.dtype)
                src = "observed"
            else:
                frame = prev
                src = "predicted"
            if provenance is not None:
                provenance.append(src)
            prev, h = self.cell(frame, h)
            preds.append(prev)
        return preds

    def training_loss(self, seqs: np.ndarray, T: int) -> Tensor:
        """Next-frame loss over the sequence; ground truth in for the first ``T`` frames, own output after."""
        _check_seqs(seqs, self.config.channels)
        L = seqs.shape[1]
        preds = self._run(seqs, T, L - 1, None)
        loss = None
        for i, p in enumerate(preds):
            term = tc.scale(tc.mse_loss(p, seqs[:, i + 1].astype(self.dtype)), 1.0 / len(preds))
            loss = term if loss is None else loss + term
        return loss

    def predict(self, observed: np.ndarray, T_prime: int, provenance: list | None = None) -> np.ndarray:
        _check_seqs(observed, self.config.channels)
        T = observed.shape[1]
        with tc.no_grad():
            preds = self._run(observed.astype(self.dtype), T, T + T_prime - 1, provenance)
        return np.stack([p.data for p in preds[T - 1 :]], axis=1)

    rollout = predict


class RecurrentFreeLite:
    """Whole-window predictor: T stacked frames in, T frames out, one shot."""

    kind = "recfree-lite"

    def __init__(self, config: BaselineConfig, params: ParamStore):
        config.validate()
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: BaselineConfig, seed: int = 0, dtype=np.float64) -> "RecurrentFreeLite":
        config.validate()
        rng = np.random.default_rng(seed)
        p = ParamStore()
        width = config.frames * config.channels
        _init_encoder(p, "seq_enc", width, config.hidden, config.encoder_depth, config.kernel_size, rng, dtype)
        _init_conv(p, "readout", config.hidden, width, 1, rng, dtype, zero=True)
        return cls(config, p)

    @classmethod
    def from_params(cls, params, channels, height, width) -> "RecurrentFreeLite":
        w = params["seq_enc.in.weight"].shape
        if w[1] % channels:
            raise DimensionError(f"checkpoint input width {w[1]} incompatible with C={channels}")
        blocks = _depth(params, "seq_enc")
        k = params["seq_enc.block0.weight"].shape[2] if blocks else 3
        cfg = BaselineConfig(channels, height, width, w[0], blocks, k, frames=w[1] // channels)
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["readout.weight"].dtype

    def forward(self, observed: Tensor) -> Tensor:
        """(N, T*C, H, W) -> (N, T*C, H, W)."""
        return _conv(self.params, "readout", encode(self.params, "seq_enc", observed))

    def training_loss(self, seqs: np.ndarray, T: int) -> Tensor:
        _check_seqs(seqs, self.config.channels)
        F = self.config.frames
        if T != F:
            raise ConfigError(f"model was built for T={F}, got T={T}")
        target_len = min(F, seqs.shape[1] - T)
        if target_len < 1:
            raise ConfigError("sequences hold no frames after the observed window")
        out = _unstack(self.forward(_stack(seqs[:, :T], self.dtype)), F)
        target = np.zeros(out.shape, dtype=self.dtype)
        target[:, :target_len] = seqs[:, T : T + target_len]
        mask = None
        if target_len < F:
            mask = np.zeros(out.shape, dtype=self.dtype)
            mask[:, :target_len] = 1.0
        return tc.mse_loss(out, target, mask)

    def predict(self, observed: np.ndarray, T_prime: int) -> np.ndarray:
        """Shorter horizons are trimmed; longer ones re-feed the last output window."""
        _check_seqs(observed, self.config.channels)
        F = self.config.frames
        if observed.shape[1] != F:
            raise DimensionError(f"model consumes exactly {F} frames, got {observed.shape[1]}")
        chunks = []
        window = observed.astype(self.dtype)
        produced = 0
        with tc.no_grad():
            while produced < T_prime:
                window = _unstack(self.forward(_stack(window, self.dtype)), F).data
                chunks.append(window)
                produced += F
        return np.concatenate(chunks, axis=1)[:, :T_prime]

    rollout = predict


class CopyLastFrame:
    """Floor predictor: repeats the final observed frame."""

    kind = "floor"
    params = None

    def predict(self, observed: np.ndarray, T_prime: int) -> np.ndarray:
        last = observed[:, -1:]
        return np.repeat(last, T_prime, axis=1)


def build_model(kind: str, params: ParamStore, channels: int, height: int, width: int):
    """Rebuild a predictor from a parameter set (e.g. a loaded checkpoint)."""
    if "gate_u.weight" in params:
        model = Ustep.from_params(params, channels, height, width)
    elif "gate_h.weight" in params:
        model = RecurrentLite.from_params(params, channels, height, width)
    elif "seq_enc.in.weight" in params:
        model = RecurrentFreeLite.from_params(params, channels, height, width)
    else:
        raise ConfigError("parameter set matches no known model")
    if kind not in (None, model.kind):
        raise ConfigError(f"parameters describe a {model.kind} model, not {kind}")
    return model


def config_dict(model) -> dict:
    return {"kind": model.kind, **asdict(model.config)}
