"""Dataset ingestion: IDX files and the synthetic glyph generator."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError
from .rng import RngStream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Images [n,C,H,W] in [0,1], one-hot labels [n,K], stable sample ids."""

    images: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"image count {len(self.images)} != label count {len(self.labels)}")
        if self.ids is None:
            self.ids = np.arange(len(self.images), dtype=np.int64)

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx],
                       name=self.name, ids=self.ids[idx])


def _read_idx_header(f, path, expected_magic, ndim):
    head = f.read(4 * (1 + ndim))
    if len(head) < 4 * (1 + ndim):
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", head[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, "
                          f"expected 0x{expected_magic:08x}")
    return struct.unpack(f">{ndim}I", head[4:])


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-style ingestion: big-endian headers, unsigned byte payloads."""
    with open(images_path, "rb") as f:
        n, h, w = _read_idx_header(f, images_path, IDX_IMAGE_MAGIC, 3)
        raw = f.read(n * h * w)
        if len(raw) < n * h * w:
            raise FormatError(f"{images_path}: truncated pixel payload")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, h, w)
    with open(labels_path, "rb") as f:
        (nl,) = _read_idx_header(f, labels_path, IDX_LABEL_MAGIC, 1)
        raw = f.read(nl)
        if len(raw) < nl:
            raise FormatError(f"{labels_path}: truncated label payload")
        raw_labels = np.frombuffer(raw, dtype=np.uint8)
    if n != nl:
        raise FormatError(f"image count {n} != label count {nl}")
    num_classes = int(raw_labels.max()) + 1 if nl else 0
    labels = np.zeros((nl, num_classes), dtype=np.float32)
    labels[np.arange(nl), raw_labels] = 1.0
    return Dataset(images.astype(np.float32) / 255.0, labels, name="idx")


# ---------------------------------------------------------------------------
# synthetic glyph task
# ---------------------------------------------------------------------------

def _template(cls: int, size: int) -> np.ndarray:
    """Procedural glyph templates; binary images with distinctive geometry."""
    img = np.zeros((size, size), dtype=np.float32)
    q = size // 4
    t = max(size // 8, 1)  # stroke thickness
    mid = size // 2
    if cls == 0:  # bar (vertical)
        img[q:size - q, mid - t // 2:mid - t // 2 + t] = 1.0
    elif cls == 1:  # cross
        img[q:size - q, mid - t // 2:mid - t // 2 + t] = 1.0
        img[mid - t // 2:mid - t // 2 + t, q:size - q] = 1.0
    elif cls == 2:  # circle
        rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        r = np.hypot(rr - (size - 1) / 2, cc - (size - 1) / 2)
        img[(r <= size * 0.34) & (r >= size * 0.34 - t)] = 1.0
    elif cls == 3:  # corner
        img[q:q + t, q:size - q] = 1.0
        img[q:size - q, q:q + t] = 1.0
    elif cls == 4:  # diagonal
        for d in range(q, size - q):
            img[d, max(d - t // 2, 0):d + (t + 1) // 2] = 1.0
    elif cls == 5:  # T
        img[q:q + t, q:size - q] = 1.0
        img[q:size - q, mid - t // 2:mid - t // 2 + t] = 1.0
    elif cls == 6:  # L
        img[q:size - q, q:q + t] = 1.0
        img[size - q - t:size - q, q:size - q] = 1.0
    elif cls == 7:  # dot grid
        step = max(size // 4, 2)
        for r0 in range(q, size - q + 1, step):
            for c0 in range(q, size - q + 1, step):
                img[r0:r0 + t, c0:c0 + t] = 1.0
    elif cls == 8:  # U
        img[q:size - q, q:q + t] = 1.0
        img[q:size - q, size - q - t:size - q] = 1.0
        img[size - q - t:size - q, q:size - q] = 1.0
    elif cls == 9:  # Z
        img[q:q + t, q:size - q] = 1.0
        img[size - q - t:size - q, q:size - q] = 1.0
        for d in range(q, size - q):
            c = size - q - 1 - (d - q)
            img[d, max(c - t // 2, 0):c + (t + 1) // 2] = 1.0
    else:
        raise ContractError(f"no glyph template for class {cls}")
    return img


def _place(template: np.ndarray, dy: int, dx: int, angle_deg: float) -> np.ndarray:
    """Rotate (nearest neighbour) then shift, zero fill outside the frame."""
    size = template.shape[0]
    rr, cc = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    c0 = (size - 1) / 2.0
    th = math.radians(angle_deg)
    sr = c0 + math.cos(th) * (rr - dy - c0) + math.sin(th) * (cc - dx - c0)
    sc = c0 - math.sin(th) * (rr - dy - c0) + math.cos(th) * (cc - dx - c0)
    ri = np.rint(sr).astype(np.intp)
    ci = np.rint(sc).astype(np.intp)
    valid = (ri >= 0) & (ri < size) & (ci >= 0) & (ci < size)
    out = np.zeros_like(template)
    out[valid] = template[np.clip(ri, 0, size - 1),
                          np.clip(ci, 0, size - 1)][valid]
    return out


def gen_glyphs(num_classes: int, n: int, size: int, noise: float,
               seed: int) -> Dataset:
    """Balanced synthetic classification task with geometric variability.

    Each sample renders its class template at a random offset (up to
    size/8 pixels) and rotation (up to 15 degrees), plus clipped Gaussian
    pixel noise.
    """
    if num_classes > 10:
        raise ContractError("at most 10 glyph classes are available")
    if num_classes < 1:
        raise ContractError("need at least one class")
    if size < 8:
        raise ContractError("size must be >= 8")
    templates = [_template(c, size) for c in range(num_classes)]
    rng = RngStream(seed, "glyphs")
    classes = np.arange(n) % num_classes
    classes = classes[rng.permutation(n)]
    max_off = size // 8
    images = np.empty((n, 1, size, size), dtype=np.float32)
    offs = rng.integers(-max_off, max_off + 1, size=(n, 2))
    angles = rng.uniform(-15.0, 15.0, size=n)
    for j in range(n):
        img = _place(templates[classes[j]], int(offs[j, 0]), int(offs[j, 1]),
                     float(angles[j]))
        images[j, 0] = img
    if noise > 0:
        images += rng.normal(0.0, noise, size=images.shape).astype(np.float32)
        np.clip(images, 0.0, 1.0, out=images)
    labels = np.zeros((n, num_classes), dtype=np.float32)
    labels[np.arange(n), classes] = 1.0
    return Dataset(images, labels, name=f"glyphs{num_classes}x{size}")
