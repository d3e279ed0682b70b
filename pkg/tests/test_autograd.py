import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setkp import autograd as ag
from setkp.autograd import Tape, Tensor, grad_check, no_grad


def _param(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ----------------------------------------------------------- FD battery


def test_add_broadcast_grad():
    rng = np.random.default_rng(0)
    a = _param(rng, (3, 4))
    b = _param(rng, (4,))
    err = grad_check(lambda: ag.sum_all(ag.mul(ag.add(a, b), ag.add(a, b))),
                     {"a": a, "b": b}, n_coords=16)
    assert err < 1e-6


def test_mul_grad():
    rng = np.random.default_rng(1)
    a = _param(rng, (2, 5))
    b = _param(rng, (2, 5))
    err = grad_check(lambda: ag.sum_all(ag.mul(a, b)), {"a": a, "b": b}, n_coords=20)
    assert err < 1e-6


def test_matmul_grad():
    rng = np.random.default_rng(2)
    a = _param(rng, (3, 4))
    b = _param(rng, (4, 2))
    err = grad_check(lambda: ag.sum_all(ag.matmul(a, b)), {"a": a, "b": b}, n_coords=20)
    assert err < 1e-6


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        ag.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_transpose_reshape_grad():
    rng = np.random.default_rng(3)
    a = _param(rng, (3, 4))
    err = grad_check(
        lambda: ag.sum_all(ag.mul(ag.reshape(ag.transpose(a), (2, 6)),
                                  ag.reshape(ag.transpose(a), (2, 6)))),
        {"a": a}, n_coords=12)
    assert err < 1e-6


def test_relu_grad_away_from_kink():
    rng = np.random.default_rng(4)
    a = Tensor(rng.standard_normal((4, 4)) + np.sign(rng.standard_normal((4, 4))) * 0.5,
               requires_grad=True)
    err = grad_check(lambda: ag.sum_all(ag.relu(a)), {"a": a}, n_coords=16)
    assert err < 1e-6


def test_gather_grad_accumulates_repeats():
    a = Tensor(np.arange(12, dtype=float).reshape(4, 3), requires_grad=True)
    idx = np.array([1, 1, 3])
    with Tape() as tape:
        out = ag.sum_all(ag.gather(a, idx))
    tape.backward(out)
    expect = np.zeros((4, 3))
    expect[1] = 2.0
    expect[3] = 1.0
    np.testing.assert_array_equal(a.grad, expect)


def test_gather_2d_index_shape():
    a = Tensor(np.arange(10, dtype=float).reshape(5, 2))
    out = ag.gather(a, np.array([[0, 1], [4, 4]]))
    assert out.shape == (2, 2, 2)


def test_sum_rows_stack_rows_grad():
    rng = np.random.default_rng(5)
    parts = [_param(rng, (4,)) for _ in range(3)]
    err = grad_check(
        lambda: ag.sum_all(ag.mul(ag.stack_rows(parts), ag.stack_rows(parts))),
        {f"p{i}": p for i, p in enumerate(parts)}, n_coords=12)
    assert err < 1e-6

    a = _param(rng, (3, 4))
    err = grad_check(lambda: ag.sum_all(ag.mul(ag.sum_rows(a), ag.sum_rows(a))),
                     {"a": a}, n_coords=12)
    assert err < 1e-6


def test_softmax_grad():
    rng = np.random.default_rng(6)
    a = _param(rng, (3, 5))
    w = Tensor(rng.standard_normal((3, 5)))
    err = grad_check(lambda: ag.sum_all(ag.mul(ag.softmax(a), w)), {"a": a}, n_coords=15)
    assert err < 1e-6


def test_log_grad_above_floor():
    a = Tensor(np.array([0.5, 1.0, 2.0]), requires_grad=True)
    err = grad_check(lambda: ag.sum_all(ag.log(a)), {"a": a}, n_coords=3)
    assert err < 1e-6


def test_log_floor_is_flat():
    a = Tensor(np.array([0.0, 1e-15]), requires_grad=True)
    with Tape() as tape:
        out = ag.sum_all(ag.log(a))
    tape.backward(out)
    np.testing.assert_array_equal(a.grad, np.zeros(2))
    assert out.item() == pytest.approx(2 * np.log(ag.LOG_FLOOR))


def test_layer_norm_grad():
    rng = np.random.default_rng(7)
    x = _param(rng, (4, 6))
    g = Tensor(rng.standard_normal(6) + 2.0, requires_grad=True)
    b = _param(rng, (6,))
    w = Tensor(rng.standard_normal((4, 6)))
    err = grad_check(lambda: ag.sum_all(ag.mul(ag.layer_norm(x, g, b), w)),
                     {"x": x, "g": g, "b": b}, n_coords=40)
    assert err < 1e-5


def test_layer_norm_hand_values():
    x = Tensor(np.array([[1.0, 3.0]]))
    g = Tensor(np.ones(2))
    b = Tensor(np.zeros(2))
    out = ag.layer_norm(x, g, b, eps=0.0).data
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-12)


def test_attention_grad_with_bias_and_mask():
    rng = np.random.default_rng(8)
    q = _param(rng, (3, 4))
    k = _param(rng, (5, 4))
    v = _param(rng, (5, 4))
    biases = [_param(rng, (3, 5)) for _ in range(2)]
    mask = np.zeros((3, 5))
    mask[0, 4] = -np.inf
    w = Tensor(rng.standard_normal((3, 4)))

    def f():
        out = ag.multi_head_attention(q, k, v, biases, n_heads=2, inv_scale=0.5, mask=mask)
        return ag.sum_all(ag.mul(out, w))

    params = {"q": q, "k": k, "v": v, "b0": biases[0], "b1": biases[1]}
    assert grad_check(f, params, n_coords=60) < 1e-5


def test_attention_rows_stochastic_and_mask_zeroes():
    rng = np.random.default_rng(9)
    q = Tensor(rng.standard_normal((3, 4)))
    k = Tensor(rng.standard_normal((5, 4)))
    v = Tensor(rng.standard_normal((5, 4)))
    mask = np.zeros((3, 5))
    mask[1, 2] = -np.inf
    sink = []
    ag.multi_head_attention(q, k, v, None, n_heads=2, inv_scale=0.5, mask=mask,
                            weights_out=sink)
    assert len(sink) == 2
    for A in sink:
        np.testing.assert_allclose(A.sum(axis=1), np.ones(3), atol=1e-12)
        assert A[1, 2] == 0.0


def test_attention_matches_manual_single_head():
    rng = np.random.default_rng(10)
    q = Tensor(rng.standard_normal((2, 3)))
    k = Tensor(rng.standard_normal((4, 3)))
    v = Tensor(rng.standard_normal((4, 3)))
    bias = Tensor(rng.standard_normal((2, 4)))
    inv_scale = 1.0 / np.sqrt(3.0)
    out = ag.multi_head_attention(q, k, v, [bias], n_heads=1, inv_scale=inv_scale)

    logits = (q.data @ k.data.T + bias.data) * inv_scale
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    A = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.data, A @ v.data, atol=1e-12)


def test_cross_entropy_hand_value_and_grad():
    p = Tensor(np.array([0.25, 0.5, 0.25]), requires_grad=True)
    with Tape() as tape:
        loss = ag.cross_entropy(p, 1, weight=2.0)
    assert loss.item() == pytest.approx(-2.0 * np.log(0.5))
    tape.backward(loss)
    np.testing.assert_allclose(p.grad, [0.0, -4.0, 0.0], atol=1e-12)


def test_weighted_nll_hand_value():
    probs = Tensor(np.array([[0.5, 0.5], [0.25, 0.75], [0.9, 0.1]]), requires_grad=True)
    loss = ag.weighted_nll(probs, [0, 1, 0], [1.0, 0.5, 0.0])
    expect = -np.log(0.5) - 0.5 * np.log(0.75)
    assert loss.item() == pytest.approx(expect)


def test_weighted_nll_zero_weight_rows_get_no_grad():
    probs = Tensor(np.array([[0.5, 0.5], [0.25, 0.75]]), requires_grad=True)
    with Tape() as tape:
        loss = ag.weighted_nll(probs, [0, 1], [1.0, 0.0])
    tape.backward(loss)
    np.testing.assert_array_equal(probs.grad[1], np.zeros(2))
    assert probs.grad[0, 0] != 0.0


def test_weighted_nll_all_ones_equals_ce_sum():
    rng = np.random.default_rng(11)
    raw = rng.random((4, 3)) + 0.1
    pd = raw / raw.sum(axis=1, keepdims=True)
    probs = Tensor(pd)
    targets = [2, 0, 1, 1]
    loss = ag.weighted_nll(probs, targets, np.ones(4))
    expect = sum(-np.log(pd[i, t]) for i, t in enumerate(targets))
    assert loss.item() == pytest.approx(expect)


# ------------------------------------------------------------ tape mechanics


def test_fanout_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape() as tape:
        y = ag.add(x, x)  # dy/dx = 2
    tape.backward(y)
    assert x.grad == pytest.approx(2.0)


def test_backward_twice_resets_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ag.sum_all(ag.mul(x, x))
    tape.backward(loss)
    first = x.grad.copy()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, first)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ag.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_no_grad_suspends_recording():
    x = Tensor(np.array(2.0), requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = ag.mul(x, x)
        z = ag.mul(x, x)
    assert not y.requires_grad
    assert len(tape.nodes) == 1
    tape.backward(z)
    assert x.grad == pytest.approx(4.0)


def test_recording_off_without_tape():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = ag.mul(x, x)
    assert not y.requires_grad


def test_backward_uses_values_from_op_time():
    # optimizers rebind .data between backward passes of one retained graph;
    # gradients must reflect the forward-time values
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    w = Tensor(np.array([[5.0]]), requires_grad=True)
    with Tape() as tape:
        loss = ag.sum_all(ag.matmul(x, w))
        tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(5.0)
        w.data = np.array([[100.0]])  # rebinding, as AdamW does
        tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(5.0)


def test_operator_sugar():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]))
    with Tape() as tape:
        out = ag.sum_all((a + b) * b - a)
    tape.backward(out)
    np.testing.assert_allclose(a.grad, b.data - 1.0)


# ------------------------------------------------------------- properties


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(n, m, seed):
    x = np.random.default_rng(seed).standard_normal((n, m)) * 5
    y = ag.softmax(Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=1), np.ones(n), atol=1e-12)
    assert (y >= 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.floats(-50, 50), st.integers(0, 2**31 - 1))
def test_softmax_shift_invariant(n, shift, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    a = ag.softmax(Tensor(x)).data
    b = ag.softmax(Tensor(x + shift)).data
    np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_add_grad_matches_fd_random_shapes(n, m, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((n, m)), requires_grad=True)
    b = Tensor(rng.standard_normal((m,)), requires_grad=True)
    err = grad_check(lambda: ag.sum_all(ag.mul(ag.add(a, b), ag.add(a, b))),
                     {"a": a, "b": b}, n_coords=8, seed=seed)
    assert err < 1e-5
