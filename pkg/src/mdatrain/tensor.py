"""Dense tensors with reverse-mode automatic differentiation.

Just enough of an autodiff engine for small convolutional and fully
connected classifiers: matmul, 3x3 conv (zero "same" padding, stride 1 or 2),
relu, 2x2 average pooling, bias add, flatten, softmax, elementwise
add/mul/scale and sum/mean reductions.

Forward ops execute eagerly on numpy arrays. While an :class:`AdjointTape`
is active, every op whose inputs touch the gradient path appends a node with
its backward rule; :func:`backward` replays the tape in exact reverse order.
Reductions and accumulations run in fixed left-to-right order, so results
are bit-reproducible. 32-bit floats are the training default; pass
``dtype=np.float64`` when building leaf tensors for tight gradient checks.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, SizeError

DEFAULT_DTYPE = np.float32
LOG_EPS = 1e-12  # log is always computed as log(max(p, LOG_EPS))

_ids = itertools.count()


class Tensor:
    """A dense n-d array, optionally participating in gradient computation.

    ``requires_grad`` marks leaves (parameters); intermediates produced by
    ops keep it False and receive adjoints only transiently during backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "tid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":  # non-float input defaults to float32
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.tid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """A view of the same values severed from the gradient path."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def tensor_new(shape: Sequence[int], data: Sequence[float], requires_grad: bool = False,
               dtype=None) -> Tensor:
    """Build a tensor from an explicit shape and flat row-major data list."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise SizeError(f"all dimensions must be >= 1, got {shape}")
    flat = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE).ravel()
    n = int(np.prod(shape))
    if flat.size != n:
        raise SizeError(f"data length {flat.size} does not match shape {shape} (= {n})")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad, dtype=flat.dtype)


class _Node:
    __slots__ = ("out_id", "inputs", "backward")

    def __init__(self, out_id, inputs, backward):
        self.out_id = out_id
        self.inputs = inputs          # list[Tensor]
        self.backward = backward     # grad_out -> list[Optional[np.ndarray]]


class AdjointTape:
    """Ordered record of executed primitives for one backward pass.

    Usable as a context manager; ops record onto the innermost active tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._on_path: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def watches(self, t: Tensor) -> bool:
        return t.requires_grad or t.tid in self._on_path

    def record(self, out: Tensor, inputs: list, backward: Callable):
        for t in inputs:
            if t.requires_grad:
                self._leaves.setdefault(t.tid, t)
        self._on_path.add(out.tid)
        self.nodes.append(_Node(out.tid, inputs, backward))


_TAPES: list[AdjointTape] = []


def _active_tape() -> Optional[AdjointTape]:
    return _TAPES[-1] if _TAPES else None


def record_op(out: Tensor, inputs: list, backward: Callable) -> Tensor:
    """Attach a backward rule to `out` if a tape is active and relevant."""
    tape = _active_tape()
    if tape is not None and any(tape.watches(t) for t in inputs):
        tape.record(out, inputs, backward)
    return out


def backward(root: Tensor, tape: AdjointTape):
    """Populate .grad on every requires_grad tensor the tape touched.

    Leaves never reached from `root` get a zero gradient of their shape.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    adj: dict[int, np.ndarray] = {root.tid: np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = adj.pop(node.out_id, None)
        if g is None:
            continue
        parts = node.backward(g)
        for t, part in zip(node.inputs, parts):
            if part is None:
                continue
            acc = adj.get(t.tid)
            adj[t.tid] = part if acc is None else acc + part
    for tid, leaf in tape._leaves.items():
        g = adj.get(tid)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise SizeError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise SizeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        return [g @ b.data.T, a.data.T @ g]

    return record_op(out, [a, b], back)


def _same_pad(h: int, stride: int) -> tuple[int, int]:
    # TF-style SAME for kernel 3: output ceil(h/stride)
    out = -(-h // stride)
    total = max((out - 1) * stride + 3 - h, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero "same" padding, stride 1 or 2."""
    if stride not in (1, 2):
        raise ContractError(f"stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise SizeError("conv2d expects input [B,C,H,W] and kernel [F,C,3,3]")
    if k.shape[2:] != (3, 3):
        raise SizeError(f"kernel spatial size must be 3x3, got {k.shape[2:]}")
    if x.shape[1] != k.shape[1]:
        raise SizeError(f"channel mismatch: input {x.shape[1]} vs kernel {k.shape[1]}")
    B, C, H, W = x.shape
    F = k.shape[0]
    ph0, ph1 = _same_pad(H, stride)
    pw0, pw1 = _same_pad(W, stride)
    OH, OW = -(-H // stride), -(-W // stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))

    # im2col via the nine kernel offsets: col[B,OH,OW,C,3,3]
    col = np.empty((B, OH, OW, C, 3, 3), dtype=x.data.dtype)
    for ki in range(3):
        for kj in range(3):
            col[..., ki, kj] = xp[:, :, ki:ki + stride * OH:stride,
                                  kj:kj + stride * OW:stride].transpose(0, 2, 3, 1)
    col2 = col.reshape(B * OH * OW, C * 9)
    kmat = k.data.reshape(F, C * 9).T
    out_data = (col2 @ kmat).reshape(B, OH, OW, F).transpose(0, 3, 1, 2)
    out = Tensor(np.ascontiguousarray(out_data))

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * OH * OW, F)
        dk = (col2.T @ g2).T.reshape(F, C, 3, 3)
        dcol = (g2 @ kmat.T).reshape(B, OH, OW, C, 3, 3)
        dxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                dxp[:, :, ki:ki + stride * OH:stride, kj:kj + stride * OW:stride] += \
                    dcol[..., ki, kj].transpose(0, 3, 1, 2)
        dx = dxp[:, :, ph0:ph0 + H, pw0:pw0 + W]
        return [dx, dk]

    return record_op(out, [x, k], back)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def back(g):
        return [g * (x.data > 0)]

    return record_op(out, [x], back)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    if x.data.ndim != 4:
        raise SizeError("avg_pool2 expects [B,C,H,W]")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise SizeError(f"avg_pool2 needs even spatial dims, got {H}x{W}")
    out = Tensor(x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5)))

    def back(g):
        dx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / x.data.dtype.type(4)
        return [dx]

    return record_op(out, [x], back)


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-d bias along `axis` (the only broadcast the engine allows)."""
    if b.data.ndim != 1:
        raise SizeError("bias must be rank 1")
    axis = axis % x.data.ndim
    if x.shape[axis] != b.shape[0]:
        raise SizeError(f"bias length {b.shape[0]} vs axis size {x.shape[axis]}")
    bshape = [1] * x.data.ndim
    bshape[axis] = b.shape[0]
    out = Tensor(x.data + b.data.reshape(bshape))
    other_axes = tuple(i for i in range(x.data.ndim) if i != axis)

    def back(g):
        return [g, g.sum(axis=other_axes)]

    return record_op(out, [x, b], back)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    B = x.shape[0]
    out = Tensor(x.data.reshape(B, -1))

    def back(g):
        return [g.reshape(x.shape)]

    return record_op(out, [x], back)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, max-subtracted for stability."""
    if x.shape[-1] < 2:
        raise ContractError("softmax needs at least 2 classes")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return [s * (g - dot)]

    return record_op(out, [x], back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise SizeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def back(g):
        return [g, g]

    return record_op(out, [a, b], back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise SizeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def back(g):
        return [g * b.data, g * a.data]

    return record_op(out, [a, b], back)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * x.data.dtype.type(c))

    def back(g):
        return [g * x.data.dtype.type(c)]

    return record_op(out, [x], back)


def safe_log(x: Tensor) -> Tensor:
    """log(max(x, 1e-12)); the clamp's subgradient is zero."""
    clipped = np.maximum(x.data, LOG_EPS)
    out = Tensor(np.log(clipped))

    def back(g):
        return [g * (x.data > LOG_EPS) / clipped]

    return record_op(out, [x], back)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(dtype=x.data.dtype).reshape(()))

    def back(g):
        return [np.full_like(x.data, g)]

    return record_op(out, [x], back)


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean(dtype=x.data.dtype).reshape(()))

    def back(g):
        return [np.full_like(x.data, g / x.size)]

    return record_op(out, [x], back)


# ---------------------------------------------------------------------------
# finite differences (the test oracle; independent of the tape machinery)
# ---------------------------------------------------------------------------

def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float], param: Tensor,
                     eps: float) -> np.ndarray:
    """Central-difference gradient estimate of scalar_fn at param.

    `scalar_fn` receives a plain numpy array of param's shape and must return
    a float; it is evaluated 2 * param.size times.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = param.data.astype(np.float64, copy=True)
    grad = np.zeros_like(base)
    flat = base.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(scalar_fn(base))
        flat[i] = orig - eps
        fm = float(scalar_fn(base))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
