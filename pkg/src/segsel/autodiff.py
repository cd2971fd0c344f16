"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every forward op returns a :class:`Tensor` holding its value plus a closure
that maps the upstream gradient to gradients for its parents.  ``backward``
walks the recorded graph once; there is no graph caching.  Non-finite values
anywhere in a forward or backward pass raise immediately.
"""

from __future__ import annotations

import math

import numpy as np

BCE_EPS = 1e-7
LOG_PROB_FLOOR = 1e-8

_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf validation (on by default)."""
    global _finite_checks
    _finite_checks = bool(enabled)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if _finite_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {where}")


class Tensor:
    """A float64 array with an optional record of how it was computed.

    Leaf tensors (inputs, parameters) have no parents.  Parameters are leaves
    whose ``grad`` buffer is pre-allocated so that ``backward`` can accumulate
    into it; plain constants get a buffer lazily and are normally ignored.
    """

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, _parents=(), _bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor value")
        self.grad = None
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, leaf={self._bwd is None})"


def parameter(data) -> Tensor:
    """Leaf tensor with a zeroed gradient buffer of the same shape."""
    t = Tensor(np.array(data, dtype=np.float64))
    t.grad = np.zeros_like(t.data)
    return t


class ParamStore:
    """Ordered map of unique names to parameter tensors.

    Each value tensor carries a same-shape gradient buffer (``tensor.grad``).
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = parameter(data)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def tensors(self):
        return list(self._entries.values())

    def items(self):
        return list(self._entries.items())

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._entries):
            missing = set(self._entries) ^ set(state)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, arr in state.items():
            t = self._entries[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: "
                                 f"{arr.shape} vs {t.data.shape}")
            t.data[...] = arr


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable gradient buffer.

    Requires a scalar loss produced by recorded forward ops.  Leaves that are
    unreachable keep whatever is in their buffer (zero right after
    ``zero_grad``).
    """
    if loss._bwd is None:
        raise RuntimeError("backward called on a leaf: no recorded forward pass")
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    # Iterative topological order over the recorded graph.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in seen and p._bwd is not None:
                stack.append((p, False))

    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        grads = node._bwd(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None:
                continue
            _check_finite(g, "gradient")
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def sub_const(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data - c, (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def mean_scalars(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("mean_scalars: empty input")
    n = len(parts)
    data = sum(p.item() for p in parts) / n
    return Tensor(data, tuple(parts), lambda g: tuple(g / n for _ in parts))


def pick(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 1:
        raise ValueError(f"pick expects a vector, got shape {x.data.shape}")

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[i] = g
        return (dx,)

    return Tensor(x.data[i], (x,), bwd)


def log_clamped(x: Tensor, floor: float = LOG_PROB_FLOOR) -> Tensor:
    clamped = np.maximum(x.data, floor)
    passthrough = x.data >= floor

    def bwd(g):
        return (g * passthrough / clamped,)

    return Tensor(np.log(clamped), (x,), bwd)


def mean_columns(x: Tensor, cols) -> Tensor:
    """Mean over the given column indices of a (D, T) tensor.

    An empty selection yields the zero vector (gradient flows nowhere).
    """
    if x.data.ndim != 2:
        raise ValueError(f"mean_columns expects a 2-d tensor, got shape {x.data.shape}")
    cols = list(cols)
    if not cols:
        return Tensor(np.zeros(x.data.shape[0]), (x,), lambda g: (np.zeros_like(x.data),))

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, cols] = g[:, None] / len(cols)
        return (dx,)

    return Tensor(x.data[:, cols].mean(axis=1), (x,), bwd)


# ---------------------------------------------------------------------------
# layers


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """weights @ x + bias for a vector input."""
    if x.data.ndim != 1:
        raise ValueError(f"dense: input must be a vector, got shape {x.data.shape}")
    if weights.data.ndim != 2:
        raise ValueError(f"dense: weights must be 2-d, got shape {weights.data.shape}")
    m, n = weights.data.shape
    if x.data.shape[0] != n:
        raise ValueError(f"dense: input size {x.data.shape[0]} != weight columns {n}")
    if bias.data.shape != (m,):
        raise ValueError(f"dense: bias shape {bias.data.shape} != ({m},)")

    def bwd(g):
        return (weights.data.T @ g, np.outer(g, x.data), g)

    return Tensor(weights.data @ x.data + bias.data, (x, weights, bias), bwd)


def conv1d_forward(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid (no padding) correlation of (Cin, L) input with (Cout, Cin, K) kernels."""
    if x.data.ndim != 2:
        raise ValueError(f"conv1d: input must be 2-d (Cin, L), got shape {x.data.shape}")
    if kernels.data.ndim != 3:
        raise ValueError(f"conv1d: kernels must be 3-d (Cout, Cin, K), got shape {kernels.data.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"conv1d: stride must be a positive int, got {stride!r}")
    cin, length = x.data.shape
    cout, kcin, ksize = kernels.data.shape
    if kcin != cin:
        raise ValueError(f"conv1d: input has Cin={cin} but kernels expect Cin={kcin}")
    if length < ksize:
        raise ValueError(f"conv1d: input length L={length} shorter than kernel K={ksize}")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, ksize, axis=1)[:, ::stride, :]
    out_len = windows.shape[1]

    def bwd(g):
        dk = np.einsum("ol,clk->ock", g, windows)
        dx = np.zeros_like(x.data)
        for k in range(ksize):
            dx[:, k:k + stride * (out_len - 1) + 1:stride] += np.einsum(
                "ol,oc->cl", g, kernels.data[:, :, k])
        return (dx, dk)

    return Tensor(np.einsum("ock,clk->ol", kernels.data, windows), (x, kernels), bwd)


def temporal_conv(x: Tensor, kernels: Tensor) -> Tensor:
    """Stride-1 correlation of a shared (F, K) kernel bank with every channel.

    Input (C, L) maps to (C*F, L-K+1), channel-major (row c*F+f is channel c
    filtered by kernel f).
    """
    if x.data.ndim != 2:
        raise ValueError(f"temporal_conv: input must be 2-d (C, L), got shape {x.data.shape}")
    if kernels.data.ndim != 2:
        raise ValueError(f"temporal_conv: kernels must be 2-d (F, K), got shape {kernels.data.shape}")
    c, length = x.data.shape
    nf, ksize = kernels.data.shape
    if length < ksize:
        raise ValueError(f"temporal_conv: input length L={length} shorter than kernel K={ksize}")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, ksize, axis=1)
    out_len = windows.shape[1]
    out = np.einsum("fk,clk->cfl", kernels.data, windows).reshape(c * nf, out_len)

    def bwd(g):
        g3 = g.reshape(c, nf, out_len)
        dk = np.einsum("cfl,clk->fk", g3, windows)
        dx = np.zeros_like(x.data)
        for k in range(ksize):
            dx[:, k:k + out_len] += np.einsum("cfl,f->cl", g3, kernels.data[:, k])
        return (dx, dk)

    return Tensor(out, (x, kernels), bwd)


def add_bias_rows(x: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or bias.data.shape != (x.data.shape[0],):
        raise ValueError(f"add_bias_rows: bias shape {bias.data.shape} does not match "
                         f"rows of input {x.data.shape}")
    return Tensor(x.data + bias.data[:, None], (x, bias),
                  lambda g: (g, g.sum(axis=1)))


def avg_pool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping mean pooling along the second axis (window == stride)."""
    if x.data.ndim != 2:
        raise ValueError(f"avg_pool1d: input must be 2-d, got shape {x.data.shape}")
    if not isinstance(width, int) or width < 1:
        raise ValueError(f"avg_pool1d: width must be a positive int, got {width!r}")
    rows, length = x.data.shape
    out_len = length // width
    if out_len < 1:
        raise ValueError(f"avg_pool1d: length {length} shorter than window {width}")

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, :out_len * width] = np.repeat(g / width, width, axis=1)
        return (dx,)

    pooled = x.data[:, :out_len * width].reshape(rows, out_len, width).mean(axis=2)
    return Tensor(pooled, (x,), bwd)


# ---------------------------------------------------------------------------
# activations


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    y = np.where(x.data > 0, x.data, neg)
    return Tensor(y, (x,), lambda g: (g * np.where(x.data > 0, 1.0, y + alpha),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    y = np.where(x.data > 0, x.data, slope * x.data)
    return Tensor(y, (x,), lambda g: (g * np.where(x.data > 0, 1.0, slope),))


def square(x: Tensor) -> Tensor:
    return Tensor(x.data * x.data, (x,), lambda g: (g * 2.0 * x.data,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_np(x.data)
    return Tensor(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid_np(z):
    out = np.empty_like(np.asarray(z, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise ValueError(f"softmax requires a vector input, got shape {x.data.shape}")
    e = np.exp(x.data - x.data.max())
    y = e / e.sum()

    def bwd(g):
        return (y * (g - np.dot(g, y)),)

    return Tensor(y, (x,), bwd)


ACTIVATIONS = {
    "elu": elu,
    "leaky_relu": leaky_relu,
    "square": square,
    "softmax": softmax,
    "sigmoid": sigmoid,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}")
    return fn(x)


# ---------------------------------------------------------------------------
# losses


def bce_value(predicted: float, label: int) -> float:
    """Binary cross-entropy of a clamped probability against a 0/1 label."""
    p = min(max(float(predicted), BCE_EPS), 1.0 - BCE_EPS)
    y = float(label)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def bce_loss(predicted: Tensor, label: int) -> Tensor:
    """BCE node; the probability is clamped to [eps, 1-eps] before the log."""
    if predicted.data.shape != ():
        raise ValueError(f"bce_loss expects a scalar probability, got shape {predicted.data.shape}")
    p_raw = float(predicted.data)
    p = min(max(p_raw, BCE_EPS), 1.0 - BCE_EPS)
    y = float(label)
    inside = BCE_EPS <= p_raw <= 1.0 - BCE_EPS

    def bwd(g):
        d = (p - y) / (p * (1.0 - p)) if inside else 0.0
        return (g * d,)

    return Tensor(bce_value(p_raw, label), (predicted,), bwd)


def elastic_net_penalty(params, l1: float, l2: float) -> Tensor:
    """l1*sum|w| + l2*sum(w^2) over every tensor in a ParamStore (or list)."""
    if l1 < 0 or l2 < 0:
        raise ValueError("elastic net coefficients must be non-negative")
    tensors = params.tensors() if isinstance(params, ParamStore) else list(params)
    total = 0.0
    for t in tensors:
        total += l1 * np.abs(t.data).sum() + l2 * (t.data * t.data).sum()

    def bwd(g):
        return tuple(g * (l1 * np.sign(t.data) + 2.0 * l2 * t.data) for t in tensors)

    return Tensor(total, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# initialization and optimizer


def xavier_init(shape, seed) -> np.ndarray:
    """Uniform Xavier/Glorot sample in +-sqrt(6/(fan_in+fan_out)).

    2-d shapes are read as dense (out, in); 3-d as conv (Cout, Cin, K).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_in, fan_out = shape[1], shape[0]
    elif len(shape) == 3:
        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
    else:
        raise ValueError(f"xavier_init needs >= 2 fan dimensions (2-d or 3-d shape), got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class OptimizerState:
    """RMSProp state for one ParamStore: squared-gradient accumulators + live lr."""

    def __init__(self, store: ParamStore, lr: float, decay: float = 0.9, eps: float = 1e-8):
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {decay}")
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.lr = float(lr)
        self.decay = float(decay)
        self.eps = float(eps)
        self.acc = {name: np.zeros_like(t.data) for name, t in store.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: a.copy() for name, a in self.acc.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            self.acc[name][...] = arr


def rmsprop_step(store: ParamStore, opt: OptimizerState) -> None:
    """acc <- decay*acc + (1-decay)*g^2; w <- w - lr*g/(sqrt(acc)+eps)."""
    for name, t in store.items():
        g = t.grad
        acc = opt.acc[name]
        acc *= opt.decay
        acc += (1.0 - opt.decay) * g * g
        t.data -= opt.lr * g / (np.sqrt(acc) + opt.eps)
        _check_finite(t.data, f"parameter {name!r} after update")
