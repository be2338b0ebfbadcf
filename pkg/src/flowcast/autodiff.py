"""Dense float64 tensors with reverse-mode differentiation.

Provides exactly the primitives the forecasting model needs (matmul,
temporal convolution, sigmoid, ReLU, Hadamard product, broadcast add,
batch normalization, MSE) plus an RMSprop optimizer, finite-difference
helpers for tests, and a binary checkpoint format.

Every op records its parents and a closure computing parent gradients;
``backward`` replays the graph in reverse topological order. Gradients
accumulate additively into ``Tensor.grad`` until ``zero_grad``.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple[Tensor, ...], backprop) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = parents
        out._backprop = backprop
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backprop(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backprop)


def hadamard(a, b) -> Tensor:
    """Elementwise product (broadcasting allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"hadamard: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backprop(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backprop)


def matmul(a, b) -> Tensor:
    """Batched matrix product of a (..., p, q) with a 2-D b (q, r)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got shape {b.data.shape}")
    if a.data.ndim < 2 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree for shapes {a.data.shape} and {b.data.shape}")
    data = a.data @ b.data

    def backprop(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            q, r = b.data.shape
            gb = a.data.reshape(-1, q).T @ g.reshape(-1, r)
        return ga, gb

    return _result(data, (a, b), backprop)


def temporal_conv1d(x, w, b) -> Tensor:
    """Valid 1-D convolution along the time axis, shared across nodes.

    x: (batch, c_in, t, nodes); w: (c_out, c_in, k); b: (c_out).
    Output time length is t - k + 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 3 or b.data.ndim != 1:
        raise ShapeError(
            f"temporal_conv1d: need x (batch,c_in,t,nodes), w (c_out,c_in,k), b (c_out); "
            f"got {x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[1] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"temporal_conv1d: channel mismatch between {x.data.shape}, {w.data.shape}, {b.data.shape}")
    t_in, k = x.data.shape[2], w.data.shape[2]
    if t_in < k:
        raise ShapeError(f"temporal_conv1d: time length {t_in} shorter than kernel {k}")
    data = _kernels.conv1d_forward(x.data, w.data, b.data)

    def backprop(g):
        g = np.ascontiguousarray(g)
        gx = _kernels.conv1d_grad_input(g, w.data, t_in) if x.requires_grad else None
        gw = gb = None
        if w.requires_grad or b.requires_grad:
            gw, gb = _kernels.conv1d_grad_weights(x.data, g)
        return gx, gw, gb

    return _result(data, (x, w, b), backprop)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])  # split form avoids overflow for large |v|
    out[~pos] = ev / (1.0 + ev)

    def backprop(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), backprop)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # subgradient at 0 is 0
    data = np.where(mask, x.data, 0.0)

    def backprop(g):
        return (g * mask,)

    return _result(data, (x,), backprop)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of a (batch, c, t, nodes) tensor.

    Training mode normalizes with the batch's biased statistics and
    updates the running arrays in place; eval mode uses the running
    statistics and touches nothing.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm: expected 4-D input, got shape {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backprop(g):
        gxh = g * gamma.data[None, :, None, None]
        if x.requires_grad:
            if training:
                gx = (
                    gxh
                    - gxh.mean(axis=axes, keepdims=True)
                    - xhat * (gxh * xhat).mean(axis=axes, keepdims=True)
                ) * inv[None, :, None, None]
            else:
                gx = gxh * inv[None, :, None, None]
        else:
            gx = None
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        return gx, gg, gb

    return _result(data, (x, gamma, beta), backprop)


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    data = np.asarray((diff * diff).mean())
    scale = 2.0 / diff.size

    def backprop(g):
        gd = g * scale * diff
        gp = gd if pred.requires_grad else None
        gt = -gd if target.requires_grad else None
        return gp, gt

    return _result(data, (pred, target), backprop)


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    data = np.asarray(x.data.sum())

    def backprop(g):
        return (np.full_like(x.data, float(g)),)

    return _result(data, (x,), backprop)


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.data.shape}")
    data = np.ascontiguousarray(np.transpose(x.data, axes))
    inv = np.argsort(axes)

    def backprop(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _result(data, (x,), backprop)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backprop(g):
        return (g.reshape(x.data.shape),)

    return _result(data, (x,), backprop)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every reachable requires_grad tensor."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backprop is None:
            continue
        for parent, pg in zip(node._parents, node._backprop(g)):
            if pg is None or not (parent.requires_grad or parent._parents):
                continue
            if id(parent) in grads:
                # out-of-place: pg may alias g or another parent's grad
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


class RMSprop:
    """Root-mean-square gradient scaling: s <- rho*s + (1-rho)*g^2, p -= lr*g/(sqrt(s)+eps)."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4, rho: float = 0.99, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.state):
            if p.grad is None:
                continue
            g = p.grad
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.data -= self.lr * g / (np.sqrt(s) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# finite-difference helpers (used by the test suite)

def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.array(x, dtype=np.float64)  # private copy; perturbed in place below
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# checkpoint format: magic "CNW1", then per array:
#   u32 name length, name bytes (utf-8), u32 rank, u32 dims..., f64 payload
# all little-endian, arrays in insertion order, read until EOF.

CHECKPOINT_MAGIC = b"CNW1"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise ValueError(f"{path}: truncated checkpoint")
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            payload = fh.read(8 * count)
            if len(payload) < 8 * count:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return arrays
