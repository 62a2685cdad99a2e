"""Finite-difference verification of every differentiable primitive.

Each check compares the tape gradient of a scalar function of one parameter
against :func:`finite_diff_grad`, reporting the error normalised by the
gradient's own scale. Also builds three randomly sampled composite
conv/dense networks through softmax + cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import cross_entropy_soft
from .rng import RngStream
from .tensor import AdjointTape, Tensor, backward, finite_diff_grad


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def _rel_error(g: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.abs(fd).max(initial=0.0)), 1e-8)
    return float(np.abs(g.astype(np.float64) - fd).max(initial=0.0)) / scale


def _check(name, build_scalar, param_data, dtype, eps, tol) -> CheckResult:
    """build_scalar(param Tensor) -> scalar Tensor; checks d/d(param)."""
    param = Tensor(param_data, requires_grad=True, dtype=dtype)
    with AdjointTape() as tape:
        out = build_scalar(param)
        backward(out, tape)
    g = param.grad

    def fd_fn(arr):
        return float(build_scalar(Tensor(arr, dtype=dtype)).data)

    fd = finite_diff_grad(fd_fn, param, eps)
    return CheckResult(name, _rel_error(g, fd), tol)


def _composite_scalar(rng: RngStream, dtype):
    """A random conv -> relu -> pool -> flatten -> linear -> softmax -> CE net."""
    b, c, h, w = 2, 2, 8, 8
    f = 3
    classes = 4
    x = Tensor(rng.uniform(size=(b, c, h, w)), dtype=dtype)
    k = Tensor(rng.normal(0, 0.5, size=(f, c, 3, 3)), requires_grad=True, dtype=dtype)
    kb = Tensor(rng.normal(0, 0.1, size=f), requires_grad=True, dtype=dtype)
    stride = 1 if rng.uniform() < 0.5 else 2
    feat = f * ((h // stride) // 2) * ((w // stride) // 2)
    wl = Tensor(rng.normal(0, 0.3, size=(feat, classes)), requires_grad=True,
                dtype=dtype)
    bl = Tensor(rng.normal(0, 0.1, size=classes), requires_grad=True, dtype=dtype)
    target = np.eye(classes, dtype=np.float64)[rng.integers(0, classes, size=b)]

    def forward():
        hh = T.relu(T.bias_add(T.conv2d(x, k, stride=stride), kb, axis=1))
        hh = T.avg_pool2(hh)
        logits = T.bias_add(T.matmul(T.flatten(hh), wl), bl, axis=-1)
        return cross_entropy_soft(target, T.softmax(logits))

    return forward, [k, kb, wl, bl]


def run_gradcheck(f64: bool = False, seed: int = 2024) -> list:
    """Full suite; returns CheckResult rows (primitives + 3 composites)."""
    dtype = np.float64 if f64 else np.float32
    eps = 1e-5 if f64 else 1e-3
    tol = 1e-6 if f64 else 1e-3
    rng = RngStream(seed, "gradcheck")
    results = []

    # matmul
    b_fixed = rng.normal(size=(4, 2))
    w_fixed = rng.normal(size=(3, 2))
    results.append(_check(
        "matmul",
        lambda p: T.sum_all(T.mul(T.matmul(p, Tensor(b_fixed, dtype=dtype)),
                                  Tensor(w_fixed, dtype=dtype))),
        rng.normal(size=(3, 4)), dtype, eps, tol))

    # conv2d, both strides, gradient w.r.t. kernel and input
    x_fixed = rng.uniform(size=(1, 2, 5, 5))
    for stride in (1, 2):
        results.append(_check(
            f"conv2d_kernel_s{stride}",
            lambda p, s=stride: T.sum_all(
                T.mul(T.conv2d(Tensor(x_fixed, dtype=dtype), p, stride=s),
                      Tensor(conv_w[s], dtype=dtype))),
            rng.normal(0, 0.5, size=(3, 2, 3, 3)), dtype, eps, tol))
    k_fixed = rng.normal(0, 0.5, size=(3, 2, 3, 3))
    results.append(_check(
        "conv2d_input",
        lambda p: T.sum_all(T.mul(T.conv2d(p, Tensor(k_fixed, dtype=dtype)),
                                  Tensor(conv_w[1], dtype=dtype))),
        x_fixed, dtype, eps, tol))

    # elementwise and shape ops
    relu_in = rng.normal(size=6)
    relu_in += np.sign(relu_in) * 0.2  # keep samples away from the kink
    results.append(_check(
        "relu", lambda p: T.sum_all(T.mul(T.relu(p), Tensor(w6, dtype=dtype))),
        relu_in, dtype, eps, tol))
    results.append(_check(
        "avg_pool2",
        lambda p: T.sum_all(T.mul(T.avg_pool2(p), Tensor(wpool, dtype=dtype))),
        rng.uniform(size=(1, 2, 4, 4)), dtype, eps, tol))
    results.append(_check(
        "bias_add",
        lambda p: T.sum_all(T.mul(T.bias_add(Tensor(xb, dtype=dtype), p, axis=1),
                                  Tensor(wb, dtype=dtype))),
        rng.normal(size=3), dtype, eps, tol))
    results.append(_check(
        "flatten",
        lambda p: T.sum_all(T.mul(T.flatten(p), Tensor(wflat, dtype=dtype))),
        rng.uniform(size=(2, 2, 3)), dtype, eps, tol))
    results.append(_check(
        "softmax",
        lambda p: T.sum_all(T.mul(T.softmax(p), Tensor(wsm, dtype=dtype))),
        rng.normal(size=(2, 5)), dtype, eps, tol))
    results.append(_check(
        "add", lambda p: T.sum_all(T.mul(T.add(p, Tensor(y6, dtype=dtype)),
                                         Tensor(w6, dtype=dtype))),
        rng.normal(size=6), dtype, eps, tol))
    results.append(_check(
        "mul", lambda p: T.sum_all(T.mul(T.mul(p, Tensor(y6, dtype=dtype)),
                                         Tensor(w6, dtype=dtype))),
        rng.normal(size=6), dtype, eps, tol))
    results.append(_check(
        "scale", lambda p: T.sum_all(T.scale(p, 1.7)),
        rng.normal(size=6), dtype, eps, tol))
    results.append(_check(
        "safe_log", lambda p: T.sum_all(T.mul(T.safe_log(p), Tensor(w6, dtype=dtype))),
        rng.uniform(0.2, 1.0, size=6), dtype, eps, tol))
    results.append(_check(
        "mean_all", lambda p: T.mean_all(p), rng.normal(size=(2, 3)),
        dtype, eps, tol))
    results.append(_check(
        "cross_entropy",
        lambda p: cross_entropy_soft(ce_t, T.softmax(p)),
        rng.normal(size=(3, 4)), dtype, eps, tol))

    # three random composite networks: check every parameter
    for trial in range(3):
        forward, params = _composite_scalar(rng.child("composite", trial), dtype)
        with AdjointTape() as tape:
            backward(forward(), tape)
        worst = 0.0
        for p in params:
            g = p.grad

            def fd_fn(arr, p=p):
                saved = p.data
                p.data = arr.astype(dtype)
                try:
                    return float(forward().data)
                finally:
                    p.data = saved

            fd = finite_diff_grad(fd_fn, p, eps)
            worst = max(worst, _rel_error(g, fd))
        results.append(CheckResult(f"composite_net_{trial}", worst, tol))
    return results


# fixed weighting tensors so scalar outputs exercise non-uniform adjoints
_wrng = RngStream(77, "gradcheck-weights")
w6 = _wrng.normal(size=6)
y6 = _wrng.normal(size=6)
wpool = _wrng.normal(size=(1, 2, 2, 2))
xb = _wrng.uniform(size=(2, 3, 2, 2))
wb = _wrng.normal(size=(2, 3, 2, 2))
wflat = _wrng.normal(size=(2, 6))
wsm = _wrng.normal(size=(2, 5))
conv_w = {1: _wrng.normal(size=(1, 3, 5, 5)), 2: _wrng.normal(size=(1, 3, 3, 3))}
ce_t = np.array([[0.7, 0.1, 0.1, 0.1], [0.25, 0.25, 0.25, 0.25],
                 [0.0, 0.0, 1.0, 0.0]])
