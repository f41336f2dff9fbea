import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustep import tensor as tc
from ustep.errors import ContractError, DimensionError
from ustep.optim import AdamState, adamw_step
from ustep.tensor import ParamStore, Tensor


def conv_oracle(x, w, b):
    """Zero-padded cross-correlation by explicit loops."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((cout, h, wd))
    for o in range(cout):
        for r in range(h):
            for c in range(wd):
                acc = b[o]
                for ci in range(cin):
                    for i in range(k):
                        for j in range(k):
                            rr, cc = r + i - p, c + j - p
                            if 0 <= rr < h and 0 <= cc < wd:
                                acc += x[ci, rr, cc] * w[o, ci, i, j]
                out[o, r, c] = acc
    return out


# ------------------------------------------------------------------ conv2d


def test_conv_scalar_multiply_add():
    out = tc.conv2d(Tensor([[[3.0]]]), Tensor([[[[2.0]]]]), Tensor([0.5]))
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 6.5


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = tc.conv2d(Tensor(x), Tensor(w), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_kernel_hand_sum():
    x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
    out = tc.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, [[[10.0, 10.0], [10.0, 10.0]]])
    np.testing.assert_array_equal(out.data[0], conv_oracle(x.data, np.ones((1, 1, 3, 3)), [0.0])[0])


@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("cin,cout", [(1, 1), (2, 3), (3, 2)])
def test_conv_matches_loop_oracle(k, cin, cout):
    rng = np.random.default_rng(k * 10 + cin)
    x = rng.normal(size=(cin, 5, 4))
    w = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=cout)
    out = tc.conv2d(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_batched_equals_unbatched():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 2, 4, 4))
    w, b = Tensor(rng.normal(size=(2, 2, 3, 3))), Tensor(rng.normal(size=2))
    batched = tc.conv2d(Tensor(x), w, b).data
    for n in range(3):
        np.testing.assert_allclose(batched[n], tc.conv2d(Tensor(x[n]), w, b).data, rtol=0, atol=1e-14)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        tc.conv2d(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((1, 3, 3, 3))), Tensor([0.0]))


def test_conv_even_kernel_rejected():
    with pytest.raises(DimensionError):
        tc.conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 1, 2, 2))), Tensor([0.0]))


# ---------------------------------------------------------- elementwise ops


def test_sigmoid_values():
    assert tc.sigmoid(Tensor(0.0)).data == 0.5
    with np.errstate(all="raise"):
        assert tc.sigmoid(Tensor(-100.0)).data < 1e-6
        assert tc.sigmoid(Tensor(1000.0)).data == 1.0
    assert tc.sigmoid(Tensor(math.log(3.0))).data == pytest.approx(0.75, abs=1e-15)


def test_elementwise():
    np.testing.assert_array_equal(tc.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])
    np.testing.assert_array_equal(tc.elementwise("mul", Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).data, [8.0, 15.0])
    x = Tensor([0.3, -1.7, 2.5])
    np.testing.assert_array_equal(tc.elementwise("mul", x, Tensor(np.ones(3))).data, x.data)
    with pytest.raises(DimensionError):
        tc.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ContractError):
        tc.elementwise("pow", x, x)


def test_mse_loss_values():
    assert tc.mse_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).data == 0.0
    assert tc.mse_loss(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3)))).data == 1.0
    assert tc.mse_loss(Tensor([0.0, 2.0]), Tensor([1.0, 0.0])).data == 2.5
    with pytest.raises(DimensionError):
        tc.mse_loss(Tensor([0.0, 2.0]), Tensor([1.0]))


def test_mse_loss_mask_excludes_entries():
    loss = tc.mse_loss(Tensor([0.0, 2.0, 9.0]), Tensor([1.0, 0.0, 0.0]), mask=np.array([1.0, 1.0, 0.0]))
    assert loss.data == 2.5


# ---------------------------------------------------------------- backward


def test_backward_chain_rule():
    p = ParamStore()
    w = p.add("w", np.array([1.0]))
    x = Tensor([2.0])
    loss = tc.mse_loss(w * x, Tensor([0.0]))
    tc.backward(loss)
    assert w.grad[0] == 8.0


def test_backward_unreached_parameter_has_no_gradient():
    p = ParamStore()
    w = p.add("w", np.array([1.0]))
    q = p.add("q", np.array([5.0]))
    tc.backward(tc.sum(tc.sigmoid(w)))
    assert q.grad is None or q.grad[0] == 0.0


def test_backward_sigmoid_at_zero():
    w = Tensor(np.zeros(4), requires_grad=True)
    tc.backward(tc.sum(tc.sigmoid(w)))
    np.testing.assert_array_equal(w.grad, np.full(4, 0.25))


def test_backward_accumulates_and_requires_scalar():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = tc.sum(w * w)
    tc.backward(loss)
    tc.backward(loss)
    np.testing.assert_array_equal(w.grad, [4.0, 8.0])
    with pytest.raises(ContractError):
        tc.backward(w * w)


def test_backward_linearity():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    x = Tensor(rng.normal(size=(1, 4, 4)))
    t1, t2 = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))

    def losses():
        y = tc.sigmoid(tc.conv2d(x, w, b))
        return tc.mse_loss(y, t1), tc.mse_loss(y, t2)

    l1, l2 = losses()
    tc.backward(l1 + l2)
    joint = w.grad.copy(), b.grad.copy()
    w.grad = b.grad = None
    l1, _ = losses()
    tc.backward(l1)
    _, l2 = losses()
    tc.backward(l2)
    np.testing.assert_allclose(w.grad, joint[0], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(b.grad, joint[1], rtol=1e-12, atol=1e-14)


def test_ops_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    a = tc.silu(tc.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)))).data
    b = tc.silu(tc.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)))).data
    assert a.tobytes() == b.tobytes()


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with tc.no_grad():
        y = tc.sigmoid(w)
    assert not y.requires_grad


def test_debug_mode_rejects_non_finite(monkeypatch):
    monkeypatch.setattr(tc, "DEBUG", True)
    with pytest.raises(FloatingPointError):
        with np.errstate(all="ignore"):
            tc.mul(Tensor([np.inf]), Tensor([0.0]))


# --------------------------------------------------------------- gradcheck


def test_gradcheck_quadratic():
    p = ParamStore()
    p.add("w", np.array([3.0]))
    assert tc.gradcheck(lambda ps: tc.sum(ps["w"] * ps["w"]), p, eps=1e-4) < 1e-6
    assert p["w"].data[0] == 3.0


def test_gradcheck_constant_function():
    p = ParamStore()
    p.add("w", np.array([3.0, 1.0]))
    assert tc.gradcheck(lambda ps: Tensor(1.5), p) == 0.0


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    return tc.sum(out * Tensor(weights))


dims = st.integers(1, 4)


@settings(max_examples=100, derandomize=True, deadline=None)
@given(cin=dims, cout=dims, h=dims, w=dims, k=st.sampled_from([1, 3]), seed=st.integers(0, 2**31))
def test_gradcheck_conv2d(cin, cout, h, w, k, seed):
    rng = np.random.default_rng(seed)
    p = ParamStore()
    p.add("x", rng.normal(size=(cin, h, w)))
    p.add("w", rng.normal(size=(cout, cin, k, k)))
    p.add("b", rng.normal(size=cout))
    weights = rng.normal(size=(cout, h, w))
    f = lambda ps: _scalarize(tc.conv2d(ps["x"], ps["w"], ps["b"]), weights)  # noqa: E731
    assert tc.gradcheck(f, p, eps=1e-5) < 1e-4


@settings(max_examples=100, derandomize=True, deadline=None)
@given(shape=st.lists(dims, min_size=1, max_size=3), seed=st.integers(0, 2**31), op=st.sampled_from(["sigmoid", "silu"]))
def test_gradcheck_unary(shape, seed, op):
    rng = np.random.default_rng(seed)
    p = ParamStore()
    p.add("x", rng.normal(scale=2.0, size=shape))
    weights = rng.normal(size=shape)
    fn = getattr(tc, op)
    assert tc.gradcheck(lambda ps: _scalarize(fn(ps["x"]), weights), p, eps=1e-5) < 1e-4


@settings(max_examples=100, derandomize=True, deadline=None)
@given(shape=st.lists(dims, min_size=1, max_size=3), seed=st.integers(0, 2**31), op=st.sampled_from(["add", "mul", "sub"]))
def test_gradcheck_binary(shape, seed, op):
    rng = np.random.default_rng(seed)
    p = ParamStore()
    p.add("a", rng.normal(size=shape))
    p.add("b", rng.normal(size=shape))
    weights = rng.normal(size=shape)
    f = lambda ps: _scalarize(tc.elementwise(op, ps["a"], ps["b"]), weights)  # noqa: E731
    assert tc.gradcheck(f, p, eps=1e-5) < 1e-4


@settings(max_examples=100, derandomize=True, deadline=None)
@given(shape=st.lists(dims, min_size=1, max_size=3), seed=st.integers(0, 2**31), masked=st.booleans())
def test_gradcheck_mse_reshape_scale(shape, seed, masked):
    rng = np.random.default_rng(seed)
    p = ParamStore()
    p.add("a", rng.normal(size=shape))
    target = rng.normal(size=(int(np.prod(shape)),))
    mask = None
    if masked:
        mask = (rng.uniform(size=target.shape) < 0.7).astype(float)
        mask[0] = 1.0
    f = lambda ps: tc.scale(tc.mse_loss(tc.reshape(ps["a"], target.shape), target, mask), 1.7)  # noqa: E731
    assert tc.gradcheck(f, p, eps=1e-5) < 1e-4


# -------------------------------------------------------------------- adamw


def _store(value, grad):
    p = ParamStore()
    t = p.add("p", np.array(value, dtype=float))
    t.grad = np.array(grad, dtype=float)
    return p


def test_adamw_zero_grad_zero_decay_unchanged():
    p = _store([0.3, -2.0], [0.0, 0.0])
    adamw_step(p, AdamState(), weight_decay=0.0)
    np.testing.assert_array_equal(p["p"].data, [0.3, -2.0])


def test_adamw_first_step_moves_by_lr():
    p = _store([0.0], [1.0])
    adamw_step(p, AdamState(), lr=0.01, weight_decay=0.0)
    assert p["p"].data[0] == pytest.approx(-0.01, rel=1e-6)
    np.testing.assert_array_equal(p["p"].grad, [1.0])


def test_adamw_defaults():
    import inspect

    sig = inspect.signature(adamw_step).parameters
    assert sig["lr"].default == 0.01
    assert sig["weight_decay"].default == 0.05
    assert (sig["beta1"].default, sig["beta2"].default, sig["eps"].default) == (0.9, 0.999, 1e-8)


def test_adamw_decoupled_decay():
    # zero gradient: only the decay term moves the parameter
    p = _store([2.0], [0.0])
    adamw_step(p, AdamState(), lr=0.1, weight_decay=0.5)
    assert p["p"].data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_adamw_missing_grad():
    p = ParamStore()
    p.add("p", np.zeros(2))
    with pytest.raises(ContractError):
        adamw_step(p, AdamState())


def test_adamw_state_shapes():
    p = _store(np.zeros((2, 3)), np.ones((2, 3)))
    state = AdamState()
    adamw_step(p, state)
    assert state.step == 1
    assert state.exp_avg["p"].shape == (2, 3) and state.exp_avg_sq["p"].shape == (2, 3)


def test_param_store_order_and_uniqueness():
    p = ParamStore()
    for name in ["z", "a", "m"]:
        p.add(name, np.zeros(1))
    assert p.names() == ["z", "a", "m"]
    with pytest.raises(ContractError):
        p.add("a", np.zeros(1))
