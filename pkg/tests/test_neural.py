"""
Tests for the autodiff core, layers, Adam and checkpoint files
"""

import math
import struct

import numpy as np
import pytest

from uavmec.exceptions import CheckpointError, NumericalError
from uavmec.neural import (
    LSTM_GATES,
    Adam,
    ParamSet,
    Tensor,
    adam_step,
    dense_forward,
    init_dense,
    init_lstm,
    load_tensors,
    lstm_step,
    no_grad,
    relu,
    save_tensors,
)

STEP = 1e-5


def _close(analytic, numeric):
    return abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-8


def gradient_check(params, loss_fn, rng, per_param=6):
    """Compare backward() with central differences on a sample of coordinates."""
    params.zero_grad()
    loss_fn().backward()
    grads = {name: g.copy() for name, g in params.grads().items()}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        for i in picks:
            original = flat[i]
            with no_grad():
                flat[i] = original + STEP
                up = loss_fn().item()
                flat[i] = original - STEP
                down = loss_fn().item()
            flat[i] = original
            numeric = (up - down) / (2 * STEP)
            assert _close(grads[name].reshape(-1)[i], numeric), (name, i)


def _zero_lstm(n_in, hidden):
    values = {}
    for gate in LSTM_GATES:
        values[f"lstm.W_{gate}"] = np.zeros((n_in, hidden))
        values[f"lstm.U_{gate}"] = np.zeros((hidden, hidden))
        values[f"lstm.b_{gate}"] = np.zeros((1, hidden))
    return values


class TestDense:
    """Test dense layers."""

    def test_identity(self):
        """Test identity weights and zero bias pass the input through."""
        x = np.array([[1.0, -2.0, 3.0]])
        y = dense_forward(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
        assert np.array_equal(y.data, x)

    def test_zero_input(self):
        """Test zero input returns the bias."""
        b = np.array([[0.5, -1.5]])
        y = dense_forward(Tensor(np.zeros((1, 4))), Tensor(np.ones((4, 2))), Tensor(b))
        assert np.array_equal(y.data, b)

    def test_matches_naive_multiply(self, rng):
        """Test a random 3x4 layer against explicit loops."""
        x, w, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
        y = dense_forward(Tensor(x), Tensor(w), Tensor(b)).data
        for r in range(2):
            for c in range(4):
                expected = sum(x[r, k] * w[k, c] for k in range(3)) + b[0, c]
                assert y[r, c] == pytest.approx(expected)

    def test_shape_mismatch(self):
        """Test incompatible shapes raise."""
        with pytest.raises(ValueError):
            dense_forward(Tensor(np.zeros((1, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))

    def test_gradients(self, rng):
        """Test dense layer gradients against finite differences."""
        params = ParamSet(init_dense(rng, 5, 3, "d"))
        params["d.b"].data[:] = rng.normal(size=(1, 3))
        x = rng.normal(size=(4, 5))
        target = rng.normal(size=(4, 3))

        def loss():
            hidden = relu(dense_forward(Tensor(x), params["d.W"], params["d.b"]))
            return (hidden - target).square().sum()

        gradient_check(params, loss, rng)


class TestRelu:
    """Test the ReLU activation."""

    def test_values(self):
        """Test max(0, x) elementwise."""
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_identity_on_non_negative(self):
        """Test ReLU leaves non-negative inputs alone."""
        x = np.array([0.0, 0.5, 7.0])
        assert np.array_equal(relu(Tensor(x)).data, x)

    def test_subgradient(self):
        """Test the derivative is 0 for x <= 0 and 1 for x > 0."""
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        relu(x).sum().backward()
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


class TestLstm:
    """Test the LSTM cell."""

    def test_zero_weights(self):
        """Test that all-zero parameters halve the cell state."""
        params = ParamSet(_zero_lstm(2, 3))
        c = np.array([[0.4, -1.0, 2.0]])
        x, h = Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3)))
        h_next, c_next = lstm_step(x, h, Tensor(c), params)
        assert np.allclose(c_next.data, 0.5 * c)
        assert np.allclose(h_next.data, 0.5 * np.tanh(0.5 * c))

    def test_scalar_cell_by_hand(self):
        """Test a one-unit cell with a saturated forget gate against scalar arithmetic."""
        values = _zero_lstm(1, 1)
        values["lstm.b_f"][:] = 30.0
        values["lstm.W_g"][:] = 2.0
        values["lstm.U_o"][:] = -0.5
        params = ParamSet(values)
        x, h, c = 0.3, 0.2, 0.7

        def sigmoid(z):
            return 1.0 / (1.0 + math.exp(-z))

        f = sigmoid(30.0)
        i = 0.5
        o = sigmoid(-0.5 * h)
        g = math.tanh(2.0 * x)
        c_expected = f * c + i * g
        h_expected = o * math.tanh(c_expected)
        h_next, c_next = lstm_step(Tensor([[x]]), Tensor([[h]]), Tensor([[c]]), params)
        assert c_next.data[0, 0] == pytest.approx(c_expected)
        assert h_next.data[0, 0] == pytest.approx(h_expected)

    def test_state_shapes(self, rng):
        """Test hidden and cell shapes are kept across steps."""
        params = ParamSet(init_lstm(rng, 3, 4))
        h, c = Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))
        for _ in range(3):
            h, c = lstm_step(Tensor(rng.normal(size=(2, 3))), h, c, params)
            assert h.shape == (2, 4) and c.shape == (2, 4)

    def test_mismatched_state(self, rng):
        """Test hidden and cell of different shapes raise."""
        params = ParamSet(init_lstm(rng, 3, 4))
        with pytest.raises(ValueError):
            lstm_step(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((2, 4)), params)

    def test_forget_bias_init(self, rng):
        """Test the forget gate starts with bias 1 and the others with 0."""
        values = init_lstm(rng, 3, 4)
        assert np.all(values["lstm.b_f"] == 1.0)
        assert np.all(values["lstm.b_i"] == 0.0)

    def test_unrolled_gradients(self, rng):
        """Test gradients through a three-step unroll against finite differences."""
        params = ParamSet(init_lstm(rng, 3, 4))
        xs = rng.normal(size=(3, 2, 3))
        weights = rng.normal(size=(2, 4))

        def loss():
            h, c = Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))
            for x in xs:
                h, c = lstm_step(Tensor(x), h, c, params)
            return (h * weights).sum() + c.square().sum()

        gradient_check(params, loss, rng)


class TestBackward:
    """Test reverse-mode differentiation."""

    def test_linear_least_squares(self, rng):
        """Test the closed-form gradient of half the squared residual."""
        x, y = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        ((Tensor(x) @ w - y).square().sum() * 0.5).backward()
        assert np.allclose(w.grad, x.T @ (x @ w.data - y))

    def test_reused_parameter_sums(self):
        """Test that a parameter used twice accumulates both contributions."""
        w = Tensor([2.0], requires_grad=True)
        (w * 3.0 + w * 5.0).sum().backward()
        assert np.array_equal(w.grad, [8.0])

    def test_two_step_unroll_sums_per_step(self, rng):
        """Test that a shared LSTM weight's gradient is the sum over its time steps."""
        params = ParamSet(init_lstm(rng, 2, 2))
        x1, x2 = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))

        def run(split):
            # ``split`` supplies the parameters of the second step
            h, c = Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2)))
            h, c = lstm_step(Tensor(x1), h, c, params)
            h, c = lstm_step(Tensor(x2), h, c, split)
            return h.sum()

        params.zero_grad()
        run(params).backward()
        shared = params["lstm.W_g"].grad.copy()

        second = ParamSet(params.values())
        params.zero_grad()
        run(second).backward()
        assert np.allclose(shared, params["lstm.W_g"].grad + second["lstm.W_g"].grad)

    def test_sum_axis_and_pick(self):
        """Test gradients of row sums and row-wise gathers."""
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        (x.sum(axis=1) * Tensor([1.0, 2.0])).sum().backward()
        assert np.array_equal(x.grad, [[1, 1, 1], [2, 2, 2]])
        y = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        picked = y.pick([2, 0])
        assert np.array_equal(picked.data, [2.0, 3.0])
        picked.sum().backward()
        assert np.array_equal(y.grad, [[0, 0, 1], [1, 0, 0]])

    def test_broadcast_bias(self):
        """Test that a broadcast bias receives the summed gradient."""
        b = Tensor(np.zeros((1, 3)), requires_grad=True)
        (Tensor(np.ones((4, 3))) + b).sum().backward()
        assert np.array_equal(b.grad, [[4.0, 4.0, 4.0]])

    def test_non_finite_forward(self):
        """Test that overflow raises instead of propagating."""
        with pytest.raises(NumericalError):
            Tensor([1e308]) * 10.0

    def test_stable_sigmoid(self):
        """Test the sigmoid of large magnitudes stays finite."""
        out = Tensor([-1000.0, 1000.0]).sigmoid().data
        assert np.array_equal(out, [0.0, 1.0])

    def test_no_grad(self):
        """Test that no graph is recorded inside no_grad."""
        w = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = w * 2.0
        assert not out.requires_grad
        assert Tensor.grad_enabled

    def test_backward_requires_graph(self):
        """Test backward on a constant raises."""
        with pytest.raises(RuntimeError):
            Tensor([1.0]).backward()


class TestParamSet:
    """Test named parameter collections."""

    def test_sorted_names(self):
        """Test iteration in name order."""
        params = ParamSet({"b": np.zeros(1), "a": np.zeros(2)})
        assert params.names() == ["a", "b"]
        assert params.num_values() == 3

    def test_copy_is_independent(self):
        """Test that copies do not share storage."""
        params = ParamSet({"w": np.ones(2)})
        clone = params.copy()
        clone["w"].data[0] = 5.0
        assert params["w"].data[0] == 1.0

    def test_load_values_checks(self):
        """Test name and shape mismatches raise."""
        params = ParamSet({"w": np.ones(2)})
        with pytest.raises(ValueError):
            params.load_values({"v": np.ones(2)})
        with pytest.raises(ValueError):
            params.load_values({"w": np.ones(3)})


class TestAdam:
    """Test the Adam optimizer."""

    def test_first_step_magnitude(self):
        """Test the bias-corrected first step moves each coordinate by about lr."""
        params = ParamSet({"w": np.zeros(3)})
        optimizer = Adam(params, lr=0.01)
        adam_step(params, optimizer, {"w": np.array([0.5, -2.0, 1e-3])})
        assert np.allclose(params["w"].data, [-0.01, 0.01, -0.01], rtol=1e-4)
        assert optimizer.t == 1

    def test_zero_gradient(self):
        """Test that a zero gradient leaves parameters unchanged."""
        params = ParamSet({"w": np.array([1.0, -1.0])})
        optimizer = Adam(params)
        optimizer.step({"w": np.zeros(2)})
        assert np.array_equal(params["w"].data, [1.0, -1.0])

    def test_deterministic(self, rng):
        """Test that identical inputs give identical parameters after 100 steps."""
        grads = [rng.normal(size=4) for _ in range(100)]

        def run():
            params = ParamSet({"w": np.linspace(0.0, 1.0, 4)})
            optimizer = Adam(params)
            for g in grads:
                optimizer.step({"w": g})
            return params["w"].data

        assert np.array_equal(run(), run())

    def test_state_roundtrip(self):
        """Test that saved moments restore the optimizer exactly."""
        params = ParamSet({"w": np.zeros(2)})
        optimizer = Adam(params)
        optimizer.step({"w": np.array([1.0, 2.0])})
        other = Adam(ParamSet({"w": np.zeros(2)}))
        other.load_state(optimizer.state(), optimizer.t)
        assert other.t == 1
        assert np.array_equal(other.m["w"], optimizer.m["w"])

    def test_foreign_params(self):
        """Test the functional step refuses another parameter set."""
        optimizer = Adam(ParamSet({"w": np.zeros(1)}))
        with pytest.raises(ValueError):
            adam_step(ParamSet({"w": np.zeros(1)}), optimizer, {"w": np.zeros(1)})


class TestCheckpointFile:
    """Test the named-tensor checkpoint format."""

    def test_save_and_load(self, tmp_path):
        """Test tensors and metadata survive a save and load."""
        tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.array(2.5), "c": np.zeros(0)}
        path = tmp_path / "t.ckpt"
        save_tensors(str(path), tensors, {"note": "x"})
        loaded, metadata = load_tensors(str(path))
        assert metadata == {"note": "x"}
        assert sorted(loaded) == ["a", "b", "c"]
        assert np.array_equal(loaded["b"], tensors["b"])
        assert loaded["a"].shape == ()

    def test_scalar_has_no_dims(self, tmp_path):
        """Test a 0-d tensor is written with ndim 0 and a single value."""
        path = tmp_path / "s.ckpt"
        save_tensors(str(path), {"s": np.array(4.0)}, {})
        blob = path.read_bytes()
        assert len(blob) == 30
        assert blob[21] == 0
        assert struct.unpack("<d", blob[22:30]) == (4.0,)

    def test_byte_layout(self, tmp_path):
        """Test the documented little-endian layout."""
        path = tmp_path / "t.ckpt"
        save_tensors(str(path), {"w": np.array([[1.0, 2.0]])}, {})
        blob = path.read_bytes()
        assert blob[:4] == b"UMCK"
        version, header_len = struct.unpack("<II", blob[4:12])
        assert version == 1 and blob[12 : 12 + header_len] == b"{}"
        offset = 12 + header_len
        assert struct.unpack("<I", blob[offset : offset + 4]) == (1,)
        assert struct.unpack("<H", blob[offset + 4 : offset + 6]) == (1,)
        assert blob[offset + 6 : offset + 7] == b"w"
        assert struct.unpack("<B2I", blob[offset + 7 : offset + 16]) == (2, 1, 2)
        assert struct.unpack("<2d", blob[offset + 16 :]) == (1.0, 2.0)

    def test_truncated(self, tmp_path):
        """Test a cut-off file raises."""
        path = tmp_path / "t.ckpt"
        save_tensors(str(path), {"w": np.ones(4)})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_tensors(str(path))

    def test_trailing_bytes(self, tmp_path):
        """Test extra bytes after the last tensor raise."""
        path = tmp_path / "t.ckpt"
        save_tensors(str(path), {"w": np.ones(4)})
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(CheckpointError, match="trailing"):
            load_tensors(str(path))

    def test_bad_magic(self, tmp_path):
        """Test foreign files are rejected."""
        path = tmp_path / "t.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(CheckpointError, match="not a uavmec checkpoint"):
            load_tensors(str(path))

    def test_missing(self, tmp_path):
        """Test IO errors are wrapped."""
        with pytest.raises(CheckpointError, match="Failed to load checkpoint"):
            load_tensors(str(tmp_path / "missing.ckpt"))
