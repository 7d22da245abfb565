"""
Minimal dense numeric core with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Each differentiable operation is a
``Function`` that records its inputs while gradients are enabled; calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order, so a parameter reused across time steps accumulates one gradient
contribution per use. Non-finite values raise ``NumericalError`` in both
directions.
"""

import json
import logging
import struct
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import CheckpointError, NumericalError

logger = logging.getLogger(__name__)


def _check_finite(values: np.ndarray, where: str):
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values in {where}")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """One recorded operation: ``forward`` on arrays, ``backward`` returns input gradients."""

    inputs: Tuple["Tensor", ...] = ()

    def __call__(self, *args) -> "Tensor":
        tensors = tuple(as_tensor(a) for a in args)
        out = Tensor(self.forward(*(t.data for t in tensors)))
        _check_finite(out.data, f"{type(self).__name__} forward")
        if Tensor.grad_enabled and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._fn = self
            self.inputs = tensors
        return out

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class AddFn(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class SubFn(Function):
    def forward(self, x, y):
        return x - y

    def backward(self, grad):
        return grad, -grad


class MulFn(Function):
    def forward(self, x, y):
        return x * y

    def backward(self, grad):
        x, y = (t.data for t in self.inputs)
        return grad * y, grad * x


class NegFn(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class MatMulFn(Function):
    def forward(self, x, y):
        return x @ y

    def backward(self, grad):
        x, y = (t.data for t in self.inputs)
        return grad @ y.T, x.T @ grad


class SumFn(Function):
    def __init__(self, axis: Optional[int] = None):
        self.axis = axis

    def forward(self, x):
        self.shape = x.shape
        return np.sum(x, axis=self.axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class ReshapeFn(Function):
    def __init__(self, shape: Tuple[int, ...]):
        self.shape = shape

    def forward(self, x):
        self.original = x.shape
        return x.reshape(self.shape)

    def backward(self, grad):
        return (grad.reshape(self.original),)


class SigmoidFn(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class TanhFn(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class ReluFn(Function):
    def forward(self, x):
        # derivative at exactly 0 is 0
        self.active = x > 0
        return np.where(self.active, x, 0.0)

    def backward(self, grad):
        return (grad * self.active,)


class SquareFn(Function):
    def forward(self, x):
        return x * x

    def backward(self, grad):
        return (2.0 * grad * self.inputs[0].data,)


class PickFn(Function):
    """Row-wise gather: out[i] = x[i, index[i]]."""

    def __init__(self, index: np.ndarray):
        self.index = np.asarray(index, dtype=int)

    def forward(self, x):
        self.shape = x.shape
        return x[np.arange(x.shape[0]), self.index]

    def backward(self, grad):
        out = np.zeros(self.shape)
        out[np.arange(self.shape[0]), self.index] = grad
        return (out,)


class no_grad:
    """Context manager (and decorator) that stops graph recording."""

    def __enter__(self):
        self._previous = Tensor.grad_enabled
        Tensor.grad_enabled = False

    def __exit__(self, *exc_info):
        Tensor.grad_enabled = self._previous

    def __call__(self, func):
        def wrapper(*args, **kwargs):
            with no_grad():
                return func(*args, **kwargs)

        return wrapper


class Tensor:
    """A float64 array that may take part in gradient computation."""

    grad_enabled = True

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._fn: Optional[Function] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return AddFn()(self, other)

    def __radd__(self, other):
        return AddFn()(other, self)

    def __sub__(self, other):
        return SubFn()(self, other)

    def __rsub__(self, other):
        return SubFn()(other, self)

    def __mul__(self, other):
        return MulFn()(self, other)

    def __rmul__(self, other):
        return MulFn()(other, self)

    def __neg__(self):
        return NegFn()(self)

    def __matmul__(self, other):
        return MatMulFn()(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return SumFn(axis)(self)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return ReshapeFn(tuple(shape))(self)

    def sigmoid(self) -> "Tensor":
        return SigmoidFn()(self)

    def tanh(self) -> "Tensor":
        return TanhFn()(self)

    def relu(self) -> "Tensor":
        return ReluFn()(self)

    def square(self) -> "Tensor":
        return SquareFn()(self)

    def pick(self, index) -> "Tensor":
        return PickFn(index)(self)

    def item(self) -> float:
        return float(self.data)

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._fn is not None:
                for parent in node._fn.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d(self)/d(leaf) into every leaf tensor's ``grad``."""
        if not self.requires_grad:
            raise RuntimeError("tensor does not require gradients")
        if grad is None:
            grad = np.ones_like(self.data)

        pending: Dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self._topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._fn.inputs, node._fn.backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = unbroadcast(np.asarray(parent_grad), parent.shape)
                _check_finite(parent_grad, f"{type(node._fn).__name__} backward")
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + parent_grad
                else:
                    pending[id(parent)] = parent_grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def relu(x: Tensor) -> Tensor:
    return as_tensor(x).relu()


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x W + b."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense input width {x.shape[-1]} does not match weight {weight.shape}")
    return x @ weight + bias


LSTM_GATES = ("i", "f", "o", "g")


def lstm_step(
    x: Tensor, h: Tensor, c: Tensor, params: "ParamSet", prefix: str = "lstm"
) -> Tuple[Tensor, Tensor]:
    """One LSTM step with separate input (W), recurrent (U) and bias (b) terms per gate."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    if h.shape != c.shape:
        raise ValueError(f"hidden {h.shape} and cell {c.shape} shapes differ")

    def affine(gate: str) -> Tensor:
        return (
            x @ params[f"{prefix}.W_{gate}"]
            + h @ params[f"{prefix}.U_{gate}"]
            + params[f"{prefix}.b_{gate}"]
        )

    i = affine("i").sigmoid()
    f = affine("f").sigmoid()
    o = affine("o").sigmoid()
    g = affine("g").tanh()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_dense(
    rng: np.random.Generator, n_in: int, n_out: int, prefix: str
) -> Dict[str, np.ndarray]:
    return {f"{prefix}.W": glorot_uniform(rng, n_in, n_out), f"{prefix}.b": np.zeros((1, n_out))}


def init_lstm(
    rng: np.random.Generator, n_in: int, hidden: int, prefix: str = "lstm"
) -> Dict[str, np.ndarray]:
    """Glorot-uniform gate matrices, zero biases except a forget-gate bias of 1."""
    values = {}
    for gate in LSTM_GATES:
        values[f"{prefix}.W_{gate}"] = glorot_uniform(rng, n_in, hidden)
        values[f"{prefix}.U_{gate}"] = glorot_uniform(rng, hidden, hidden)
        values[f"{prefix}.b_{gate}"] = np.full((1, hidden), 1.0 if gate == "f" else 0.0)
    return values


class ParamSet:
    """Named parameter tensors, iterated in name order."""

    def __init__(self, values: Dict[str, np.ndarray]):
        self._params: Dict[str, Tensor] = {
            name: Tensor(np.array(values[name], dtype=np.float64), requires_grad=True)
            for name in sorted(values)
        }

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        """Gradient per parameter; zeros for parameters the last pass did not reach."""
        return {
            name: np.zeros_like(p.data) if p.grad is None else p.grad
            for name, p in self._params.items()
        }

    def values(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_values(self, values: Dict[str, np.ndarray]):
        if sorted(values) != self.names():
            raise ValueError("parameter names do not match")
        for name, p in self._params.items():
            if values[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {values[name].shape} vs {p.shape}")
            p.data = np.array(values[name], dtype=np.float64)

    def copy(self) -> "ParamSet":
        return ParamSet(self.values())

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())


class Adam:
    """Adam with bias correction."""

    def __init__(
        self,
        params: ParamSet,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: Optional[Dict[str, np.ndarray]] = None):
        """Apply one update from ``grads`` (default: the parameters' own gradients)."""
        grads = self.params.grads() if grads is None else grads
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> Dict[str, np.ndarray]:
        out = {f"adam.m.{name}": m.copy() for name, m in self.m.items()}
        out.update({f"adam.v.{name}": v.copy() for name, v in self.v.items()})
        return out

    def load_state(self, values: Dict[str, np.ndarray], step: int):
        for name in self.m:
            self.m[name] = np.array(values[f"adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(values[f"adam.v.{name}"], dtype=np.float64)
        self.t = step


def adam_step(params: ParamSet, optimizer: Adam, grads: Optional[Dict[str, np.ndarray]] = None):
    """Functional alias for :meth:`Adam.step` on ``params``."""
    if optimizer.params is not params:
        raise ValueError("optimizer was built for another parameter set")
    optimizer.step(grads)


# Checkpoint layout, little-endian:
#   b"UMCK" | u32 version | u32 header length | JSON header | u32 tensor count
#   per tensor: u16 name length | name | u8 ndim | u32 * ndim dims | f64 data
CHECKPOINT_MAGIC = b"UMCK"
CHECKPOINT_VERSION = 1


def save_tensors(path: str, tensors: Dict[str, np.ndarray], metadata: Optional[dict] = None):
    header = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(header)),
        header,
        struct.pack("<I", len(tensors)),
    ]
    for name in sorted(tensors):
        array = np.asarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes(order="C"))
    try:
        with open(path, "wb") as f:
            f.write(b"".join(chunks))
    except OSError as e:
        raise CheckpointError(f"Failed to save checkpoint '{path}': {e}") from e


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"checkpoint '{self.path}' is truncated")
        chunk = self.blob[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_tensors(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint written by :func:`save_tensors`; returns (tensors, metadata)."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Failed to load checkpoint '{path}': {e}") from e

    reader = _Reader(blob, path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"'{path}' is not a uavmec checkpoint")
    version, header_len = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in '{path}'")
    try:
        metadata = json.loads(reader.take(header_len).decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"corrupt checkpoint header in '{path}': {e}") from e

    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(8 * size), dtype="<f8")
        tensors[name] = data.reshape(shape).astype(np.float64)
    if reader.offset != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint '{path}'")
    return tensors, metadata
