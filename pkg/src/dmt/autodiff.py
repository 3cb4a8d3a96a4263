"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a node on a global tape while gradients are
enabled; ``backward(loss)`` walks the tape in reverse execution order
(a valid reverse topological order), accumulates gradients with ``+=``
into every tensor that requires them, and consumes the tape.

Masked attention positions are represented by additive -inf before
softmax, so -inf values are legitimate in pre-softmax scores; NaN is
never legitimate and can be trapped with ``set_check_finite(True)``.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor", "RngState", "fan_seed", "no_grad", "backward", "zero_grad",
    "add", "sub", "mul", "matmul", "reduce_sum", "reduce_mean",
    "softmax", "log_softmax", "sigmoid", "tanh", "relu", "layer_norm",
    "embedding", "conv1d", "glu", "dropout", "concat", "slice_axis",
    "transpose", "reshape", "gather_last", "select_time", "gather_time",
    "fault_count", "reset_faults", "set_check_finite", "tape_size",
]

NEG_INF = float("-inf")

# ---------------------------------------------------------------------------
# deterministic counter-based RNG


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def fan_seed(seed: int, label: str) -> int:
    """Derive a stream seed from a master seed and a stage label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (int(seed) ^ int.from_bytes(digest[:8], "little")) & 0x7FFFFFFFFFFFFFFF

class RngState:
    """Counter-based random stream: a 64-bit seed plus a position.

    The i-th draw is a pure function of (seed, i), so the same seed and
    call sequence always reproduce the same values, on any platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.position = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.position, self.position + n, dtype=np.uint64)
        self.position += int(n)
        with np.errstate(over="ignore"):
            return _mix64((np.uint64(self.seed) + (idx + np.uint64(1)) * _GOLDEN) & _M64)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # Box-Muller; u1 in (0, 1] so log never sees zero
        u1 = (self._raw(m).astype(np.float64) + 1.0) * (2.0 ** -64)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        out = std * z
        return out.reshape(shape) if shape else out[0]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform((n,)) if n else np.zeros(0)
        return np.argsort(keys, kind="stable")

    def shuffle(self, items: list) -> list:
        return [items[i] for i in self.permutation(len(items))]


# ---------------------------------------------------------------------------
# tensor and tape


class Tensor:
    """Row-major float64 array with optional gradient accumulation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_TAPE: list = []
_GRAD_ENABLED = True
_CHECK_FINITE = False
_FAULTS = 0


def tape_size() -> int:
    return len(_TAPE)


def fault_count() -> int:
    return _FAULTS


def reset_faults():
    global _FAULTS
    _FAULTS = 0


def set_check_finite(flag: bool):
    """When on, any op producing NaN raises immediately (debug aid)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, vjp) -> Tensor:
    """Wrap an op result; record it on the tape when gradients flow."""
    if _CHECK_FINITE and np.isnan(data).any():
        raise FloatingPointError("NaN produced by forward op")
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _TAPE.append(_Node(inputs, out, vjp))
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into t.grad for every tensor requiring grad.

    The tape is consumed: a second backward needs a fresh forward pass.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    try:
        for node in reversed(_TAPE):
            g = node.output.grad
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    # copy: vjp results may alias buffers shared with
                    # sibling gradients (e.g. concat's split views)
                    t.grad = np.array(gi)
                else:
                    t.grad += gi
    finally:
        _TAPE.clear()


def zero_grad(params):
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes.

    The common projection case (stacked activations times a 2-D weight)
    runs as a single flattened GEMM in both directions; everything else
    takes the generic batched path.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        k, n = b.shape
        data = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))

        def vjp(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ g2
            return ga, gb

        return _make(data, (a, b), vjp)

    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.ascontiguousarray(np.swapaxes(b.data, -1, -2)))
        gb = np.matmul(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), vjp)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(data, (x,), vjp)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                    np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), vjp)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _make(data, (x,), vjp)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _make(data, (x,), vjp)


def _guarded_max(d: np.ndarray, axis: int):
    """Row max with -inf rows replaced by 0 so exp() stays NaN-free.

    Returns (max, all_masked_row_selector); fully masked rows are counted
    as faults by the callers.
    """
    m = d.max(axis=axis, keepdims=True)
    dead = ~np.isfinite(m) & (m < 0)
    if dead.any():
        m = np.where(dead, 0.0, m)
    return m, dead


def softmax(x, axis: int = -1) -> Tensor:
    """Exponentials normalized along axis, max-subtracted for stability.

    -inf inputs yield exact zeros; a fully masked row comes out all-zero
    and increments the fault counter.
    """
    global _FAULTS
    x = _as_tensor(x)
    m, dead = _guarded_max(x.data, axis)
    if dead.any():
        _FAULTS += int(dead.sum())
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = e / np.where(s == 0.0, 1.0, s)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    global _FAULTS
    x = _as_tensor(x)
    m, dead = _guarded_max(x.data, axis)
    if dead.any():
        _FAULTS += int(dead.sum())
    z = x.data - m
    e = np.exp(z)
    s = e.sum(axis=axis, keepdims=True)
    safe_s = np.where(s == 0.0, 1.0, s)
    with np.errstate(divide="ignore"):
        data = z - np.log(safe_s)
    probs = e / safe_s

    def vjp(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(data, (x,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize the last dimension, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def vjp(g):
        dims = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=dims)
        g_beta = g.sum(axis=dims)
        gx_hat = g * gamma.data
        gx = inv / d * (d * gx_hat
                        - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return gx, g_gamma, g_beta

    return _make(data, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# lookup / structural ops


def embedding(table, ids) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]; backward scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {table.shape[0]}): "
            f"min={ids.min()} max={ids.max()}")
    data = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(data, (table,), vjp)


def gather_last(x, ids) -> Tensor:
    """Pick one entry along the last axis per position: out[...] = x[..., ids[...]]."""
    x = _as_tensor(x)
    ids = np.asarray(ids)
    if ids.shape != x.shape[:-1]:
        raise ShapeError(f"gather_last: index shape {ids.shape} != {x.shape[:-1]}")
    idx = np.expand_dims(ids, -1)
    data = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, -1), axis=-1)
        return (gx,)

    return _make(data, (x,), vjp)


def select_time(x, idx) -> Tensor:
    """out[b] = x[b, idx[b]] for a [B, T, ...] tensor."""
    x = _as_tensor(x)
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make(data, (x,), vjp)


def gather_time(x, perm) -> Tensor:
    """out[b, t] = x[b, perm[b, t]]; used for per-sentence time reversal."""
    x = _as_tensor(x)
    perm = np.asarray(perm)
    rows = np.arange(x.shape[0])[:, None]
    data = x.data[rows, perm]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, perm), g)
        return (gx,)

    return _make(data, (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def vjp(g):
        splits = np.cumsum(sizes[:-1])
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, stop)
    key = tuple(key)
    data = x.data[key]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _make(data, (x,), vjp)


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    axes_ = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    data = np.transpose(x.data, axes_)
    inverse = tuple(np.argsort(axes_))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(data, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), vjp)


# ---------------------------------------------------------------------------
# model-specific ops


def conv1d(x, kernel, pad_mode: str = "same") -> Tensor:
    """Temporal convolution of x[B, T, Cin] with kernel[K, Cin, Cout].

    "same" pads both sides (odd K required); "causal" pads left only, so
    output t never sees inputs beyond t.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise ShapeError(f"conv1d: shapes {x.shape} x {kernel.shape}")
    k = kernel.shape[0]
    if pad_mode == "same":
        if k % 2 == 0:
            raise ShapeError("conv1d: same-padding requires odd kernel width")
        left, right = k // 2, k // 2
    elif pad_mode == "causal":
        left, right = k - 1, 0
    else:
        raise ShapeError(f"conv1d: unknown pad_mode {pad_mode!r}")
    t = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    data = np.zeros((x.shape[0], t, kernel.shape[2]))
    for j in range(k):
        data += np.matmul(xp[:, j:j + t, :], kernel.data[j])

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        flat_g = g.reshape(-1, g.shape[-1])
        for j in range(k):
            window = xp[:, j:j + t, :]
            gk[j] = window.reshape(-1, window.shape[-1]).T @ flat_g
            gxp[:, j:j + t, :] += np.matmul(g, kernel.data[j].T)
        gx = gxp[:, left:left + t, :]
        return gx, gk

    return _make(data, (x, kernel), vjp)


def glu(x, axis: int = -1) -> Tensor:
    """Gated linear unit: first half of axis times sigmoid of second half."""
    x = _as_tensor(x)
    n = x.shape[axis]
    if n % 2 != 0:
        raise ShapeError(f"glu: axis extent {n} is odd")
    half = n // 2
    key_a = [slice(None)] * x.ndim
    key_b = [slice(None)] * x.ndim
    key_a[axis] = slice(0, half)
    key_b[axis] = slice(half, n)
    key_a, key_b = tuple(key_a), tuple(key_b)
    a = x.data[key_a]
    b = x.data[key_b]
    sig = np.where(b >= 0, 1.0 / (1.0 + np.exp(-np.abs(b))),
                   np.exp(-np.abs(b)) / (1.0 + np.exp(-np.abs(b))))
    data = a * sig

    def vjp(g):
        gx = np.empty_like(x.data)
        gx[key_a] = g * sig
        gx[key_b] = g * a * sig * (1.0 - sig)
        return (gx,)

    return _make(data, (x,), vjp)


def dropout(x, p: float, rng: RngState = None, training: bool = False) -> Tensor:
    """Zero entries with probability p and rescale survivors by 1/(1-p).

    Identity (the same tensor) outside training or at p == 0.
    """
    x = _as_tensor(x)
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout: p={p} outside [0, 1)")
    if rng is None:
        raise ShapeError("dropout: training mode needs an RngState")
    keep = (rng.uniform(x.shape) >= p) / (1.0 - p)
    data = x.data * keep

    def vjp(g):
        return (g * keep,)

    return _make(data, (x,), vjp)
