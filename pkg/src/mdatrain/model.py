"""Shared-prefix / N-branch networks built from the tensor primitives.

A network is described by a :class:`BlockSpec` (stem, conv/dense blocks,
classification head). :func:`build_branched` keeps blocks up to a split
index as a single shared prefix and replicates the remaining blocks plus the
head N times with independent initialisation. Heads are never shared.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, SizeError
from .rng import RngStream
from .tensor import Tensor


@dataclass(frozen=True)
class BlockSpec:
    """Layer descriptors: ("conv", cin, cout, stride), ("linear", din, dout),
    ("relu",), ("pool",), ("flatten",)."""

    stem: tuple
    blocks: tuple
    head: tuple
    name: str = "custom"
    in_shape: tuple = ()  # (C,H,W) or (D,) of the expected input

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def to_json(self) -> dict:
        return {"name": self.name, "stem": list(map(list, self.stem)),
                "blocks": [list(map(list, b)) for b in self.blocks],
                "head": list(map(list, self.head)),
                "in_shape": list(self.in_shape)}

    @staticmethod
    def from_json(d: dict) -> "BlockSpec":
        return BlockSpec(stem=tuple(tuple(l) for l in d["stem"]),
                         blocks=tuple(tuple(tuple(l) for l in b) for b in d["blocks"]),
                         head=tuple(tuple(l) for l in d["head"]),
                         name=d.get("name", "custom"),
                         in_shape=tuple(d.get("in_shape", ())))


def tiny_cnn(in_ch: int = 1, num_classes: int = 10, image_size: int = 16,
             widths: tuple = (16, 32, 64)) -> BlockSpec:
    """Stem conv -> two conv+pool blocks -> flatten+linear head."""
    w0, w1, w2 = widths
    if image_size % 4:
        raise ContractError("tiny_cnn needs image_size divisible by 4")
    feat = w2 * (image_size // 4) ** 2
    return BlockSpec(
        stem=(("conv", in_ch, w0, 1), ("relu",)),
        blocks=((("conv", w0, w1, 1), ("relu",), ("pool",)),
                (("conv", w1, w2, 1), ("relu",), ("pool",))),
        head=(("flatten",), ("linear", feat, num_classes)),
        name="tinycnn",
        in_shape=(in_ch, image_size, image_size),
    )


def tiny_mlp(in_dim: int, num_classes: int, hidden: int = 32) -> BlockSpec:
    """Flatten stem, two hidden dense blocks, linear head."""
    return BlockSpec(
        stem=(("flatten",), ("linear", in_dim, hidden), ("relu",)),
        blocks=((("linear", hidden, hidden), ("relu",)),
                (("linear", hidden, hidden), ("relu",))),
        head=(("linear", hidden, num_classes),),
        name="tinymlp",
        in_shape=(in_dim,),
    )


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class _Layer:
    """One primitive layer; params is a dict name -> Tensor."""

    def __init__(self, desc: tuple, rng: RngStream | None):
        self.desc = desc
        self.params: dict[str, Tensor] = {}
        kind = desc[0]
        if kind == "conv":
            _, cin, cout, _stride = desc
            fan_in = cin * 9
            w = self._init(rng, (cout, cin, 3, 3), fan_in)
            self.params = {"w": w, "b": Tensor(np.zeros(cout, dtype=np.float32),
                                               requires_grad=True)}
        elif kind == "linear":
            _, din, dout = desc
            w = self._init(rng, (din, dout), din)
            self.params = {"w": w, "b": Tensor(np.zeros(dout, dtype=np.float32),
                                               requires_grad=True)}
        elif kind not in ("relu", "pool", "flatten"):
            raise ContractError(f"unknown layer kind: {kind!r}")

    @staticmethod
    def _init(rng: RngStream | None, shape: tuple, fan_in: int) -> Tensor:
        if rng is None:  # placeholder for clones; data is overwritten
            return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
        std = math.sqrt(2.0 / fan_in)
        data = rng.normal(0.0, std, size=shape).astype(np.float32)
        return Tensor(data, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        kind = self.desc[0]
        if kind == "conv":
            return T.bias_add(T.conv2d(x, self.params["w"], stride=self.desc[3]),
                              self.params["b"], axis=1)
        if kind == "linear":
            return T.bias_add(T.matmul(x, self.params["w"]), self.params["b"], axis=-1)
        if kind == "relu":
            return T.relu(x)
        if kind == "pool":
            return T.avg_pool2(x)
        return T.flatten(x)


def _build_unit(descs, rng, tag) -> list:
    layers = []
    for j, d in enumerate(descs):
        layers.append(_Layer(d, rng.child(tag, j) if rng is not None else None))
    return layers


# ---------------------------------------------------------------------------
# branched model
# ---------------------------------------------------------------------------

class BranchedModel:
    """Shared block prefix plus N independent branch suffixes."""

    def __init__(self, spec: BlockSpec, split_index: int, n: int,
                 shared_layers: list, branch_layers: list):
        self.spec = spec
        self.split_index = split_index
        self.n = n
        self.shared_layers = shared_layers
        self.branches = branch_layers
        self.shared_eval_count = 0  # instrumentation: shared-prefix forwards

    @property
    def num_branches(self) -> int:
        return self.n

    def named_params(self) -> list:
        """(name, tensor) pairs; shared first, then branches in index order."""
        out = []
        for j, layer in enumerate(self.shared_layers):
            for pn, t in layer.params.items():
                out.append((f"shared.{j}.{pn}", t))
        for i, branch in enumerate(self.branches):
            for j, layer in enumerate(branch):
                for pn, t in layer.params.items():
                    out.append((f"branch{i}.{j}.{pn}", t))
        return out

    def params(self) -> list:
        return [t for _, t in self.named_params()]

    def param_count(self) -> int:
        return sum(t.size for t in self.params())

    def zero_grads(self):
        for p in self.params():
            p.grad = None

    def forward_shared(self, x: Tensor) -> Tensor:
        self.shared_eval_count += 1
        h = x
        for layer in self.shared_layers:
            h = layer.forward(h)
        return h

    def forward_branch(self, i: int, h: Tensor) -> Tensor:
        """Branch i logits from a shared-prefix activation."""
        for layer in self.branches[i]:
            h = layer.forward(h)
        return h

    def predict(self, x: Tensor, i: int = 0) -> Tensor:
        """Softmax prediction of branch i on a raw input batch."""
        return T.softmax(self.forward_branch(i, self.forward_shared(x)))


def param_partition(model: BranchedModel):
    """Disjoint, exhaustive split of parameters into (shared, per-branch)."""
    shared = [t for l in model.shared_layers for t in l.params.values()]
    per_branch = [[t for l in b for t in l.params.values()] for b in model.branches]
    return shared, per_branch


def build_branched(spec: BlockSpec, split_index: int, n: int,
                   init_rng: RngStream) -> BranchedModel:
    """Share blocks up to split_index (inclusive); replicate the rest n times.

    split_index -1 shares nothing (the stem is replicated too); 0 shares only
    the stem; num_blocks shares every block, leaving head-only branches.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    if not -1 <= split_index <= spec.num_blocks:
        raise ContractError(
            f"split_index {split_index} outside [-1, {spec.num_blocks}]")
    shared_descs: list = []
    branch_descs: list = []
    if split_index >= 0:
        shared_descs += list(spec.stem)
        for b in spec.blocks[:split_index]:
            shared_descs += list(b)
        for b in spec.blocks[split_index:]:
            branch_descs += list(b)
    else:
        branch_descs += list(spec.stem)
        for b in spec.blocks:
            branch_descs += list(b)
    branch_descs += list(spec.head)

    shared_layers = _build_unit(shared_descs, init_rng, "shared")
    branches = [_build_unit(branch_descs, init_rng.child("branch", i), "layer")
                for i in range(n)]
    return BranchedModel(spec, split_index, n, shared_layers, branches)


def forward_all(model: BranchedModel, views: list) -> list:
    """N x N softmax prediction grid; grid[i][k] = branch i on view k.

    Each view runs through the shared prefix exactly once.
    """
    n = model.n
    if len(views) != n:
        raise ContractError(f"expected {n} views, got {len(views)}")
    grid = [[None] * n for _ in range(n)]
    for k, v in enumerate(views):
        x = v if isinstance(v, Tensor) else Tensor(v)
        h = model.forward_shared(x)
        for i in range(n):
            grid[i][k] = T.softmax(model.forward_branch(i, h))
    return grid


def export_branch(model: BranchedModel, i: int) -> BranchedModel:
    """Standalone single-branch network: shared prefix + branch i, copied."""
    if not 0 <= i < model.n:
        raise ContractError(f"branch index {i} outside [0, {model.n})")
    shared = _clone_layers(model.shared_layers)
    branch = _clone_layers(model.branches[i])
    return BranchedModel(model.spec, model.split_index, 1, shared, [branch])


def _clone_layers(layers: list) -> list:
    out = []
    for layer in layers:
        nl = _Layer(layer.desc, None)
        for pn, t in layer.params.items():
            nl.params[pn] = Tensor(t.data.copy(), requires_grad=True,
                                   dtype=t.data.dtype)
        out.append(nl)
    return out
