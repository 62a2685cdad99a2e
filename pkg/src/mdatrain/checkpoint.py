"""MDAC checkpoint format.

Layout: magic "MDAC", version u32, u32-length-prefixed UTF-8 JSON topology
descriptor, then one record per tensor: u32 name length + name bytes,
u32 rank, u32 dims, u32 dtype tag (0 = f32, 1 = f64), raw little-endian
data. All integers after the magic are little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .model import BlockSpec, BranchedModel, build_branched
from .rng import RngStream

MAGIC = b"MDAC"
VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(model: BranchedModel, path) -> None:
    topo = {"kind": "branched", "spec": model.spec.to_json(),
            "split_index": model.split_index, "n": model.n}
    blob = json.dumps(topo).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, t in model.named_params():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(struct.pack("<I", _DTYPE_TAGS[t.data.dtype]))
            f.write(np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
                    .tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what} "
                          f"at byte offset {f.tell() - len(buf)}")
    return buf


def load_checkpoint(path) -> BranchedModel:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic at byte offset 0")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (tlen,) = struct.unpack("<I", _read_exact(f, 4, "topology length"))
        topo = json.loads(_read_exact(f, tlen, "topology").decode("utf-8"))
        spec = BlockSpec.from_json(topo["spec"])
        model = build_branched(spec, topo["split_index"], topo["n"],
                               RngStream(0, "ckpt-placeholder"))
        params = dict(model.named_params())
        seen = set()
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"truncated record header at byte offset "
                                  f"{f.tell() - len(head)}")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(f, nlen, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            (tag,) = struct.unpack("<I", _read_exact(f, 4, "dtype tag"))
            if tag not in _TAG_DTYPES:
                raise FormatError(f"{path}: unknown dtype tag {tag}")
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
            raw = _read_exact(f, nbytes, f"tensor data for {name!r}")
            if name not in params:
                raise FormatError(f"{path}: unexpected tensor {name!r}")
            arr = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(
                dtype.newbyteorder("="))
            if arr.shape != params[name].data.shape:
                raise FormatError(f"{path}: shape mismatch for {name!r}")
            params[name].data = arr.copy()
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise FormatError(f"{path}: missing tensors {sorted(missing)}")
    return model
