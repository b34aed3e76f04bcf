import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualnlg import _kernels_py, kernels
from dualnlg import tensor as T
from dualnlg.checkpoint import CheckpointError, load_params, save_params
from dualnlg.gradcheck import check_gradients
from dualnlg.nn import LSTMWeights, ParamStore, lstm_step
from dualnlg.optim import AdamState, adam_step, clip_grad_norm, lr_schedule
from dualnlg.tensor import Parameter, Tensor


def _brute_conv(x, w, s):
    """Direct triple loop; independent of im2col."""
    k, h, d = w.shape
    n = (x.shape[0] - h) // s + 1
    out = np.zeros((n, k))
    for t in range(n):
        for f in range(k):
            acc = 0.0
            for j in range(h):
                for c in range(d):
                    acc += x[t * s + j, c] * w[f, j, c]
            out[t, f] = acc
    return out


# conv ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "length,depth,width,filters,stride,expected",
    [(73, 100, 5, 300, 2, (35, 300)), (16, 600, 16, 100, 2, (1, 100)), (35, 300, 5, 600, 2, (16, 600))],
)
def test_conv_shapes_match_encoder_geometry(length, depth, width, filters, stride, expected):
    x = np.zeros((length, depth))
    w = np.zeros((filters, width, depth))
    assert T.conv1d_valid(x, w, stride).shape == expected


def test_conv_identity_tap():
    x = np.array([[1.0], [2.0], [3.0]])
    w = np.ones((1, 1, 1))
    np.testing.assert_array_equal(T.conv1d_valid(x, w, 1).data, x)


def test_conv_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(11, 3))
    w = rng.normal(size=(4, 3, 3))
    np.testing.assert_allclose(T.conv1d_valid(x, w, 2).data, _brute_conv(x, w, 2), atol=1e-12)


def test_conv_errors():
    with pytest.raises(ValueError):
        T.conv1d_valid(np.zeros((5, 3)), np.zeros((2, 2, 4)), 1)
    with pytest.raises(ValueError):
        T.conv1d_valid(np.zeros((2, 3)), np.zeros((2, 4, 3)), 1)
    with pytest.raises(ValueError):
        T.transposed_conv1d(np.zeros((2, 3)), np.zeros((2, 4, 3)), 1)


@pytest.mark.parametrize(
    "n_in,k,width,stride,depth,expected",
    [(1, 100, 16, 2, 600, (16, 600)), (16, 600, 5, 2, 300, (35, 300)), (35, 300, 5, 2, 100, (73, 100))],
)
def test_transposed_conv_shapes(n_in, k, width, stride, depth, expected):
    out = T.transposed_conv1d(np.zeros((n_in, k)), np.zeros((k, width, depth)), stride)
    assert out.shape == expected


@settings(max_examples=60, deadline=None)
@given(
    length=st.integers(1, 8),
    width=st.integers(1, 8),
    stride=st.integers(1, 4),
    depth=st.integers(1, 8),
    filters=st.integers(1, 8),
    seed=st.integers(0, 2**31 - 1),
)
def test_conv_deconv_adjoint(length, width, stride, depth, filters, seed):
    if width > length:
        length, width = width, length
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(length, depth))
    w = rng.normal(size=(filters, width, depth))
    n_out = (length - width) // stride + 1
    y = rng.normal(size=(n_out, filters))
    lhs = float(np.sum(T.conv1d_valid(x, w, stride).data * y))
    back = T.transposed_conv1d(y, w, stride).data
    # deconv output covers only the positions the conv reads
    covered = back.shape[0]
    assert covered == (n_out - 1) * stride + width <= length
    rhs = float(np.sum(x[:covered] * back))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=100, deadline=None)
@given(length=st.integers(1, 200), width=st.integers(1, 30), stride=st.integers(1, 5))
def test_shape_law(length, width, stride):
    if width > length:
        return
    n_out = T.conv1d_valid(np.zeros((length, 1)), np.zeros((1, width, 1)), stride).shape[0]
    assert n_out == (length - width) // stride + 1
    back = T.transposed_conv1d(np.zeros((n_out, 1)), np.zeros((1, width, 1)), stride).shape[0]
    if (length - width) % stride == 0:
        assert back == length


# kernels backends --------------------------------------------------------------


@pytest.mark.parametrize("mod", kernels.backends(), ids=lambda m: m.BACKEND)
def test_kernel_backends_agree(mod):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 17, 4))
    cols = mod.im2col(x, 5, 2)
    np.testing.assert_array_equal(cols, _kernels_py.im2col(x, 5, 2))
    np.testing.assert_allclose(mod.col2im(cols, 17, 2), _kernels_py.col2im(cols, 17, 2), atol=1e-13)
    z = rng.normal(size=(4, 12))
    c = rng.normal(size=(4, 3))
    fwd = mod.lstm_forward(z, c)
    ref = _kernels_py.lstm_forward(z, c)
    for a, b in zip(fwd, ref):
        np.testing.assert_allclose(a, b, atol=1e-14)
    dh, dc = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    for a, b in zip(mod.lstm_backward(dh, dc, c, fwd[2], fwd[3]), _kernels_py.lstm_backward(dh, dc, c, ref[2], ref[3])):
        np.testing.assert_allclose(a, b, atol=1e-14)
    idx = np.array([0, 2, 2, 1], dtype=np.int64)
    src = rng.normal(size=(4, 5))
    np.testing.assert_allclose(mod.scatter_add_rows(3, idx, src), _kernels_py.scatter_add_rows(3, idx, src), atol=1e-14)


# lstm --------------------------------------------------------------------------


def _lstm(d_in, hid, seed=0):
    store = ParamStore(seed)
    return store, LSTMWeights(store, "cell", d_in, hid)


def test_lstm_zero_weights_gives_zero_hidden():
    store, w = _lstm(3, 4)
    for p in store:
        p.data[...] = 0.0
    h, c = lstm_step(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4))), w)
    np.testing.assert_array_equal(h.data, 0.0)


def test_lstm_saturated_forget_gate_keeps_cell():
    store, w = _lstm(3, 4, seed=3)
    hid = 4
    w.b.data[:hid] = -50.0  # input gate closed
    w.b.data[hid : 2 * hid] = 50.0  # forget gate open
    w.w_x.data *= 0.1
    w.w_h.data *= 0.1
    rng = np.random.default_rng(0)
    c_prev = rng.normal(size=(2, hid))
    h, c = lstm_step(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, hid))), Tensor(c_prev), w)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-9)


def test_lstm_single_unit_hand_calculation():
    store, w = _lstm(1, 1)
    w.w_x.data[:] = [[0.1, 0.2, 0.3, 0.4]]
    w.w_h.data[:] = [[-0.5, 0.6, -0.7, 0.8]]
    w.b.data[:] = [0.01, 0.02, 0.03, 0.04]
    x, hp, cp = 0.5, -0.3, 0.2

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    i = sig(0.1 * x - 0.5 * hp + 0.01)
    f = sig(0.2 * x + 0.6 * hp + 0.02)
    o = sig(0.3 * x - 0.7 * hp + 0.03)
    g = math.tanh(0.4 * x + 0.8 * hp + 0.04)
    c_exp = f * cp + i * g
    h_exp = o * math.tanh(c_exp)
    h, c = lstm_step(Tensor([[x]]), Tensor([[hp]]), Tensor([[cp]]), w)
    assert abs(c.item() - c_exp) < 1e-12
    assert abs(h.item() - h_exp) < 1e-12


# backward ----------------------------------------------------------------------


def test_backward_sum():
    p = Parameter([1.0, 2.0, 3.0], "p")
    T.backward(p.sum())
    np.testing.assert_array_equal(p.grad, [1.0, 1.0, 1.0])


def test_backward_square():
    p = Parameter([1.0, 2.0, 3.0], "p")
    T.backward((p * p).sum())
    np.testing.assert_array_equal(p.grad, [2.0, 4.0, 6.0])


def test_backward_unreachable_param_is_zero():
    p, q = Parameter([1.0], "p"), Parameter([5.0], "q")
    T.backward((p * 3.0).sum())
    np.testing.assert_array_equal(q.grad, [0.0])


def test_backward_rejects_non_scalar():
    p = Parameter([1.0, 2.0], "p")
    with pytest.raises(ValueError):
        T.backward(p * 2.0)


def test_backward_rejects_nondifferentiable_path():
    p = Parameter([[1.0, 3.0, 2.0]], "p")
    with pytest.raises(T.NonDifferentiableError):
        T.backward((p.argmax(axis=-1) * 1.0).sum())


def test_no_grad_records_nothing():
    p = Parameter([1.0, 2.0], "p")
    with T.no_grad():
        y = (p * p).sum()
    assert not y.requires_grad


# finite differences for every op ----------------------------------------------------


def _rand_param(rng, shape, name, scale=1.0):
    return Parameter(rng.normal(size=shape) * scale, name)


def _op_cases():
    """(name, builder) pairs; builder(rng) -> (loss_fn, params)."""

    def elementwise(fn):
        def build(rng):
            a = _rand_param(rng, (3, 4), "a")
            wts = rng.normal(size=(3, 4))
            return (lambda: (fn(a) * wts).sum()), [a]

        return build

    def binary(fn):
        def build(rng):
            a = _rand_param(rng, (2, 3), "a")
            b = _rand_param(rng, (3,), "b")
            wts = rng.normal(size=(2, 3))
            return (lambda: (fn(a, b) * wts).sum()), [a, b]

        return build

    def conv(rng):
        x = _rand_param(rng, (2, 6, 3), "x")
        w = _rand_param(rng, (4, 3, 3), "w")
        wts = rng.normal(size=(2, 2, 4))
        return (lambda: (T.conv1d_valid(x, w, 2) * wts).sum()), [x, w]

    def deconv(rng):
        x = _rand_param(rng, (2, 3, 4), "x")
        w = _rand_param(rng, (4, 3, 2), "w")
        wts = rng.normal(size=(2, 7, 2))
        return (lambda: (T.transposed_conv1d(x, w, 2) * wts).sum()), [x, w]

    def matmul(rng):
        a = _rand_param(rng, (2, 3, 4), "a")
        b = _rand_param(rng, (4, 5), "b")
        wts = rng.normal(size=(2, 3, 5))
        return (lambda: ((a @ b) * wts).sum()), [a, b]

    def lstm(rng):
        z = _rand_param(rng, (2, 12), "z")
        c = _rand_param(rng, (2, 3), "c")
        w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))

        def loss():
            h, c2 = T.lstm_cell(z, c)
            return (h * w1).sum() + (c2 * w2).sum()

        return loss, [z, c]

    def cross_entropy(rng):
        x = _rand_param(rng, (2, 3, 5), "x")
        tgt = rng.integers(0, 5, size=(2, 3))
        mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=float)
        return (lambda: T.cross_entropy(x, tgt, mask)), [x]

    def log_softmax(rng):
        x = _rand_param(rng, (3, 4), "x")
        wts = rng.normal(size=(3, 4))
        return (lambda: (T.log_softmax(x) * wts).sum()), [x]

    def embed(rng):
        w = _rand_param(rng, (5, 3), "w")
        ids = np.array([[1, 2, 2], [0, 4, 1]])
        wts = rng.normal(size=(2, 3, 3))
        return (lambda: (T.embedding(w, ids) * wts).sum()), [w]

    def shape_ops(rng):
        a = _rand_param(rng, (2, 3), "a")
        b = _rand_param(rng, (2, 2), "b")
        wts = rng.normal(size=(5, 2))

        def loss():
            cat = T.concat([a, b], axis=1)  # (2, 5)
            st_ = T.stack([cat[0], cat[1]], axis=1)  # (5, 2)
            return (st_.reshape(10).reshape(5, 2) * wts).sum() + cat.mean()

        return loss, [a, b]

    def gather(rng):
        s = _rand_param(rng, (3, 4, 2), "s")
        wts = rng.normal(size=(3, 2))
        return (lambda: (T.gather_steps(s, [3, 0, 2]) * wts).sum()), [s]

    return [
        ("add", binary(lambda a, b: a + b)),
        ("sub", binary(lambda a, b: a - b)),
        ("mul", binary(lambda a, b: a * b)),
        ("relu", elementwise(T.relu)),
        ("sigmoid", elementwise(T.sigmoid)),
        ("tanh", elementwise(T.tanh)),
        ("exp", elementwise(T.exp)),
        ("expm1", elementwise(T.expm1)),
        ("log", elementwise(lambda a: T.log(T.exp(a) + 1.0))),
        ("clamp", elementwise(lambda a: T.clamp(a, -0.5, 0.5))),
        ("sum_axis", elementwise(lambda a: T.tsum(a, axis=1, keepdims=True) * a)),
        ("matmul", matmul),
        ("conv1d", conv),
        ("transposed_conv1d", deconv),
        ("lstm_cell", lstm),
        ("cross_entropy", cross_entropy),
        ("log_softmax", log_softmax),
        ("embedding", embed),
        ("shape_ops", shape_ops),
        ("gather_steps", gather),
    ]


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name,build", _op_cases(), ids=[c[0] for c in _op_cases()])
def test_op_gradients_match_finite_differences(name, build, seed):
    loss_fn, params = build(np.random.default_rng(seed))
    errors = check_gradients(loss_fn, params, eps=1e-5, max_entries=50)
    assert max(errors.values()) < 1e-4, errors


# optimiser -------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = Parameter([1.0, -2.0], "p")
    state = AdamState()
    for _ in range(5):
        adam_step([p], state, 0.001)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.t == 5


def test_adam_first_step():
    p = Parameter([0.0], "p")
    p.grad[:] = 1.0
    adam_step([p], AdamState(), 0.001)
    assert p.data[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-15, abs=0)
    np.testing.assert_array_equal(p.grad, 0.0)


def test_adam_symmetry():
    a, b = Parameter([0.3], "a"), Parameter([0.3], "b")
    state = AdamState()
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.normal()
        a.grad[:] = g
        b.grad[:] = g
        adam_step([a, b], state, 0.01)
    assert a.data[0] == b.data[0]


def test_adam_nan_names_parameter():
    p = Parameter([1.0], "decoder.w_out")
    p.grad[:] = np.nan
    with pytest.raises(FloatingPointError, match="decoder.w_out"):
        adam_step([p], AdamState(), 0.001)


def test_clip_grad_norm():
    a, b = Parameter([0.0, 0.0], "a"), Parameter([0.0], "b")
    a.grad[:] = [3.0, 4.0]
    b.grad[:] = [12.0]
    norm = clip_grad_norm([a, b], 5.0)
    assert norm == pytest.approx(13.0)
    assert math.sqrt(float((a.grad**2).sum() + (b.grad**2).sum())) == pytest.approx(5.0)


@pytest.mark.parametrize("epoch,lr", [(1, 0.001), (3, 0.001), (5, 0.001), (6, 0.00095), (7, 0.0009025)])
def test_lr_schedule(epoch, lr):
    assert lr_schedule(epoch) == pytest.approx(lr, rel=1e-12)


def test_lr_schedule_rejects_epoch_zero():
    with pytest.raises(ValueError):
        lr_schedule(0)


# dropout ---------------------------------------------------------------------------


def test_dropout_identity_cases():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(T.dropout(x, 1.0, rng).data, x.data)
    np.testing.assert_array_equal(T.dropout(x, 0.7, rng, train=False).data, x.data)


def test_dropout_preserves_mean():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(1.0, 2.0, size=10**6))
    out = T.dropout(x, 0.7, np.random.default_rng(1))
    assert abs(out.data.mean() - x.data.mean()) / x.data.mean() < 0.01


@pytest.mark.parametrize("keep", [0.0, -0.1, 1.5])
def test_dropout_rejects_bad_keep(keep):
    with pytest.raises(ValueError):
        T.dropout(Tensor([1.0]), keep, np.random.default_rng(0))


# checkpoints -------------------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"b": rng.normal(size=(3, 4)), "a": np.array([np.pi, -0.0, 1e-300]), "s": np.array(2.5)}
    path = tmp_path / "ck.bin"
    save_params(path, arrays, meta={"kind": "test"})
    loaded, meta = load_params(path)
    assert list(loaded) == ["b", "a", "s"]
    assert meta == {"kind": "test"}
    for k in arrays:
        assert loaded[k].tobytes() == np.asarray(arrays[k], dtype=np.float64).tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_params(path)
