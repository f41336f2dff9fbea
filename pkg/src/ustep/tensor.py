"""Dense tensors with reverse-mode automatic differentiation.

Only the handful of operations the predictors need are provided. Every
operation records a closure that maps the gradient of its output to the
gradients of its inputs; :func:`backward` walks the recorded graph in reverse
topological order.

Elementwise operations require identical shapes (no broadcasting). The
convolution additionally accepts a leading batch axis.
"""

from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError

DEBUG = os.environ.get("USTEP_DEBUG", "") not in ("", "0")

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"dimension sizes must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor operation")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Dispatch ``op`` in {"add", "mul"} (``"sub"`` also accepted)."""
    try:
        fn = {"add": add, "mul": mul, "sub": sub}[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    """``x * sigmoid(x)``."""
    xd = x.data
    s = expit(xd)
    return _make(xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))


# ------------------------------------------------------------------ structure


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    old = x.shape
    dtype = x.dtype
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(old, g, dtype=dtype),))


def mse_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared difference between ``pred`` and ``target``.

    ``mask`` (same shape, non-negative) weights individual elements; the mean
    is taken over the mask's total weight, so zero entries drop out entirely.
    """
    target = as_tensor(target, dtype=pred.dtype)
    _same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    if mask is None:
        count = diff.size
        value = np.asarray(np.mean(diff * diff))

        def backward(g):
            d = (2.0 * g / count) * diff
            return d, -d

    else:
        mask = np.asarray(mask, dtype=diff.dtype)
        if mask.shape != diff.shape:
            raise DimensionError(f"mse_loss: mask shape {mask.shape} vs {diff.shape}")
        count = float(mask.sum())
        if count <= 0:
            raise ContractError("mse_loss: mask selects no elements")
        value = np.asarray(np.sum(mask * diff * diff) / count)

        def backward(g):
            d = (2.0 * g / count) * mask * diff
            return d, -d

    return _make(value, (pred, target), backward)


# ---------------------------------------------------------------- convolution


def _correlate(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Same-padded cross-correlation of a batch ``x`` (N,C,H,W) with ``w`` (O,C,k,k).

    Returns the output and the im2col buffer (N, C*k*k, H*W) reused by the
    weight gradient (``None`` for 1x1 kernels, where the input itself serves).
    """
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    if k == 1:
        cols = x.reshape(n, c, h * wd)
        return np.matmul(w.reshape(o, c), cols).reshape(n, o, h, wd), None
    p = (k - 1) // 2
    xp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=np.result_type(x, w))
    xp[:, :, p : p + h, p : p + wd] = x
    cols = np.empty((n, c, k, k, h, wd), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + h, j : j + wd]
    cols = cols.reshape(n, c * k * k, h * wd)
    out = np.matmul(w.reshape(o, c * k * k), cols).reshape(n, o, h, wd)
    return out, cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-size 2-D cross-correlation plus per-channel bias.

    ``x`` is (Cin, H, W) or batched (N, Cin, H, W); ``weight`` is
    (Cout, Cin, k, k) with odd k; ``bias`` is (Cout,).
    """
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d: weight must be 4-D, got {weight.shape}")
    o, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if bias.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match Cout={o}")
    unbatched = x.data.ndim == 3
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    xd = x.data[None] if unbatched else x.data
    if xd.shape[1] != cin:
        raise DimensionError(f"conv2d: input has {xd.shape[1]} channels, weight expects {cin}")

    wd = weight.data
    out, cols = _correlate(xd, wd)
    out += bias.data[None, :, None, None]
    n, _, h, w = xd.shape

    def backward(g):
        g4 = g[None] if unbatched else g
        gb = g4.sum(axis=(0, 2, 3))
        g3 = g4.reshape(n, o, h * w)
        src = xd.reshape(n, cin, h * w) if cols is None else cols
        gw = np.matmul(g3, src.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gx = None
        if x.requires_grad:
            flipped = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _correlate(g4, np.ascontiguousarray(flipped))
            if unbatched:
                gx = gx[0]
        return gx, gw, gb

    return _make(out[0] if unbatched else out, (x, weight, bias), backward)


# ------------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls add to existing gradients; zero them between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------------- parameters


class ParamStore:
    """Ordered name -> Tensor mapping of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value, dtype=np.float64) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_elements(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype, copy=True), dtype=dtype)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), dtype=t.dtype)
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self._params.values())


# ------------------------------------------------------------------ gradcheck


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    analytic: float
    numeric: float
    per_param: dict[str, float]

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def gradcheck_report(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-6) -> GradcheckReport:
    """Compare backprop gradients of ``f`` with central finite differences."""
    if eps <= 0:
        raise ContractError("gradcheck: eps must be positive")
    params.zero_grad()
    backward(f(params))
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for n, t in params.items()}
    params.zero_grad()

    worst = (0.0, None, None, 0.0, 0.0)
    per_param = {}
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            ga = analytic[name].reshape(-1)
            pmax = 0.0
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                fp = float(f(params).data)
                flat[idx] = orig - eps
                fm = float(f(params).data)
                flat[idx] = orig
                num = (fp - fm) / (2.0 * eps)
                ana = float(ga[idx])
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                pmax = max(pmax, rel)
                if rel > worst[0]:
                    worst = (rel, name, tuple(int(i) for i in np.unravel_index(idx, t.shape)), ana, num)
            per_param[name] = pmax
    return GradcheckReport(worst[0], worst[1], worst[2], worst[3], worst[4], per_param)


def gradcheck(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-6) -> float:
    """Maximum relative error between analytic and finite-difference gradients."""
    return gradcheck_report(f, params, eps).max_rel_error
