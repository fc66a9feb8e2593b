"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it; calling
:func:`backward` walks the recorded nodes in reverse and accumulates gradients
into every leaf tensor that has ``requires_grad`` set. Outside a tape the same
operations run in plain inference mode and record nothing.

Convolutions use the cross-correlation orientation (the kernel is not
flipped), matching most deep-learning frameworks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Tape",
    "Node",
    "backward",
    "add",
    "scale",
    "conv2d",
    "conv2d_transpose",
    "relu",
    "sigmoid",
    "affine",
    "global_avg_pool",
    "softmax_cross_entropy",
    "mse",
    "AdamState",
    "adam_step",
    "Adam",
]


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, self.dtype)))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("only scalar multiplication is supported")
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    ctx: dict = field(default_factory=dict)


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes are confined to the thread that entered
    them. A tape can be consumed by :func:`backward` once, after which it
    must be :meth:`reset` before recording again.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


def _emit(op: str, inputs: tuple, out_data: np.ndarray, backward_fn, **ctx) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape.consumed:
            raise RuntimeError("tape was already consumed by backward(); call reset() first")
        out.requires_grad = True
        tape.nodes.append(Node(op, inputs, out, backward_fn, ctx))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` on ``tape``.

    Gradients are summed when a tensor feeds several nodes, and added to any
    gradient already present on a leaf.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise RuntimeError("tape was already consumed by backward(); call reset() first")
    if not any(node.output is loss for node in tape.nodes):
        raise ValueError("loss was not produced on this tape")

    produced = {id(node.output) for node in tape.nodes}
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = pending[key]
        _check_finite(g, "backward")
        t.grad = g.astype(t.dtype, copy=False) if t.grad is None else t.grad + g
    tape.consumed = True


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        if b.size == 1:
            return _emit("add", (a, b), a.data + b.data.reshape(()),
                         lambda g: (g, np.asarray(g.sum()).reshape(b.shape)))
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,), factor=c)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the gradient at exactly 0 is taken as 0."""
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype, copy=False),
                 lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------- convolution


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (N, C, oh, ow, kh, kw) strided view, no copy
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _corr(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh, ow = _conv_out(h, kh, stride, padding), _conv_out(wd, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _windows(xp, kh, kw, stride, oh, ow).transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    return out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def _corr_input_grad(g: np.ndarray, w: np.ndarray, in_hw: tuple, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_corr` with respect to its input."""
    n, o, oh, ow = g.shape
    _, c, kh, kw = w.shape
    h, wd = in_hw
    cols = (g.transpose(0, 2, 3, 1).reshape(-1, o) @ w.reshape(o, -1)).reshape(n, oh, ow, c, kh, kw)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)
    hp, wp = h + 2 * padding, wd + 2 * padding
    dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return dxp[:, :, padding : padding + h, padding : padding + wd]


def _corr_weight_grad(x: np.ndarray, g: np.ndarray, w_shape: tuple, stride: int, padding: int) -> np.ndarray:
    n, c, _, _ = x.shape
    _, o, oh, ow = g.shape
    kh, kw = w_shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _windows(xp, kh, kw, stride, oh, ow).transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return (g.transpose(1, 0, 2, 3).reshape(o, -1) @ cols).reshape(w_shape)


def _check_conv_args(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int, padding: int, in_axis: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"expected 4-D input and kernel, got {x.shape} and {w.shape}")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    if x.shape[1] != w.shape[in_axis]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[in_axis]}")
    if b is not None and b.shape != (w.shape[1 - in_axis],):
        raise ValueError(f"bias shape {b.shape} does not match kernel {w.shape}")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``w[O,C,kH,kW]``, zero padded."""
    _check_conv_args(x, w, b, stride, padding, in_axis=1)
    kh, kw = w.shape[2:]
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise ValueError(f"kernel {w.shape[2:]} larger than padded input {x.shape[2:]}")
    out = _corr(x.data, w.data, stride, padding)
    if b is not None:
        out = out + b.data[:, None, None]

    def grad_fn(g):
        dx = _corr_input_grad(g, w.data, x.shape[2:], stride, padding) if x.requires_grad else None
        dw = _corr_weight_grad(x.data, g, w.shape, stride, padding) if w.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return dx, dw, db

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", inputs, out, grad_fn, stride=stride, padding=padding)


def conv2d_transpose(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x[N,C,H,W]`` with ``w[C,O,kH,kW]``.

    Output extent is ``(H - 1) * stride - 2 * padding + kH``; the operator is
    the exact adjoint of :func:`conv2d` with the same kernel and settings.
    """
    _check_conv_args(x, w, b, stride, padding, in_axis=0)
    kh, kw = w.shape[2:]
    oh = (x.shape[2] - 1) * stride - 2 * padding + kh
    ow = (x.shape[3] - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ValueError("transposed convolution output would be empty")
    out = _corr_input_grad(x.data, w.data, (oh, ow), stride, padding)
    if b is not None:
        out = out + b.data[:, None, None]

    def grad_fn(g):
        dx = _corr(g, w.data, stride, padding) if x.requires_grad else None
        dw = _corr_weight_grad(g, x.data, w.shape, stride, padding) if w.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return dx, dw, db

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d_transpose", inputs, out, grad_fn, stride=stride, padding=padding)


# ---------------------------------------------------------------- heads, losses


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w.T + b`` for ``x[N,F]``, ``w[G,F]``, ``b[G]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    out = x.data @ w.data.T + b.data

    def grad_fn(g):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return _emit("affine", (x, w, b), out, grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects N,C,H,W, got {x.shape}")
    h, w = x.shape[2:]

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),)

    return _emit("global_avg_pool", (x,), x.data.mean(axis=(2, 3)), grad_fn)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _emit("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), grad_fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def grad_fn(g):
        ga = diff * (2.0 * g / n)
        return ga, -ga

    return _emit("mse", (a, b), np.asarray((diff * diff).mean(), dtype=a.dtype), grad_fn)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape}, {g.shape}, {m.shape}")
        _check_finite(g, "gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Adam over a list of tensors, reading their ``.grad`` buffers."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)
