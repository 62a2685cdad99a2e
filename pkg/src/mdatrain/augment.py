"""Data augmentation operators and the two multi-DA baseline policies.

Three DA families are implemented:

* a small RandAugment-style catalog of label-invariant primitives,
* Mixup (convex pixel/label blend),
* CutMix (rectangle paste with area-weighted labels).

All operators are pure functions of their inputs and an :class:`RngStream`,
so repeated application with the same stream derivation is bit-identical.
Pixels live in [0,1]; labels are probability vectors and are never altered
by label-invariant ops.

The per-sample functions are the reference semantics. The ``*_batch``
helpers apply the same transform kernels to whole [B,C,H,W] arrays (grouping
samples that share transform parameters) and are what the training loop uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SizeError
from .rng import RngStream

PRIMITIVE_OPS = ("rotate", "translate_x", "translate_y", "shear_x",
                 "cutout", "brightness", "contrast", "flip_h")

# magnitude anchors: rotation 3 deg and cutout 4 px at M=1, scaled linearly
ROT_DEG_PER_MAG = 3.0
TRANSLATE_PX_PER_MAG = 1
SHEAR_PER_MAG = 0.03
CUTOUT_PX_PER_MAG = 4
BRIGHTNESS_PER_MAG = 0.05
CONTRAST_PER_MAG = 0.07


@dataclass
class LabeledImage:
    """An image in [0,1] (CHW) together with a probability-vector label."""

    pixels: np.ndarray
    label: np.ndarray

    def copy(self) -> "LabeledImage":
        return LabeledImage(self.pixels.copy(), self.label.copy())


@dataclass
class AugmentConfig:
    """Knobs shared by the DA policies."""

    da_set: tuple = ("randaugment", "mixup", "cutmix")
    ra_num_ops: int = 1
    ra_magnitude: int = 6
    mixup_alpha: float = 1.0
    cutmix_alpha: float = 1.0
    # optional flip + shift preprocessing, applied identically to every
    # compared method before its own DA (off by default)
    base_preprocess: bool = False


# ---------------------------------------------------------------------------
# geometric transform kernels (nearest neighbour, zero fill), cached per map
# ---------------------------------------------------------------------------

_MAP_CACHE: dict = {}


def _geom_map(op: str, magnitude: int, sign: int, h: int, w: int):
    """Source-index map (src_r, src_c, valid) for one geometric transform."""
    key = (op, magnitude, sign, h, w)
    cached = _MAP_CACHE.get(key)
    if cached is not None:
        return cached
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    if op == "rotate":
        theta = math.radians(ROT_DEG_PER_MAG * magnitude * sign)
        dy, dx = rr - cy, cc - cx
        src_r = cy + math.cos(theta) * dy + math.sin(theta) * dx
        src_c = cx - math.sin(theta) * dy + math.cos(theta) * dx
    elif op == "translate_x":
        src_r, src_c = rr, cc - TRANSLATE_PX_PER_MAG * magnitude * sign
    elif op == "translate_y":
        src_r, src_c = rr - TRANSLATE_PX_PER_MAG * magnitude * sign, cc
    elif op == "shear_x":
        src_r, src_c = rr, cc - SHEAR_PER_MAG * magnitude * sign * (rr - cy)
    elif op == "flip_h":
        src_r, src_c = rr, (w - 1) - cc
    else:
        raise ContractError(f"not a geometric op: {op}")
    ri = np.rint(src_r).astype(np.intp)
    ci = np.rint(src_c).astype(np.intp)
    valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    ri = np.clip(ri, 0, h - 1)
    ci = np.clip(ci, 0, w - 1)
    result = (ri, ci, valid)
    _MAP_CACHE[key] = result
    return result


def _apply_map(pixels: np.ndarray, ri, ci, valid) -> np.ndarray:
    # works for [C,H,W] and [B,C,H,W] alike
    out = pixels[..., ri, ci]
    return np.where(valid, out, pixels.dtype.type(0))


def _cutout(pixels: np.ndarray, magnitude: int, top: int, left: int) -> np.ndarray:
    h, w = pixels.shape[-2:]
    side = min(CUTOUT_PX_PER_MAG * magnitude, min(h, w))
    out = pixels.copy()
    out[..., top:top + side, left:left + side] = 0
    return out


def _cutout_span(magnitude: int, h: int, w: int) -> int:
    return min(CUTOUT_PX_PER_MAG * magnitude, min(h, w))


def apply_primitive(img: LabeledImage, op_id: str, magnitude: int,
                    rng: RngStream) -> LabeledImage:
    """Apply one catalog primitive at integer magnitude 0..10.

    Magnitude 0 is the exact identity for every op (including flip_h).
    Randomness is used only for transform direction, the flip coin, and the
    cutout position; the label passes through bit-identically.
    """
    if op_id not in PRIMITIVE_OPS:
        raise ContractError(f"unknown primitive op: {op_id!r}")
    if not 0 <= magnitude <= 10:
        raise ContractError(f"magnitude must be in [0,10], got {magnitude}")
    if magnitude == 0:
        return img.copy()
    p = img.pixels
    h, w = p.shape[-2:]
    if op_id in ("rotate", "translate_x", "translate_y", "shear_x"):
        sign = 1 if rng.uniform() < 0.5 else -1
        out = _apply_map(p, *_geom_map(op_id, magnitude, sign, h, w))
    elif op_id == "flip_h":
        if rng.uniform() < 0.5:
            out = _apply_map(p, *_geom_map("flip_h", magnitude, 1, h, w))
        else:
            out = p.copy()
    elif op_id == "cutout":
        side = _cutout_span(magnitude, h, w)
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        out = _cutout(p, magnitude, top, left)
    elif op_id == "brightness":
        out = np.clip(p + p.dtype.type(BRIGHTNESS_PER_MAG * magnitude), 0, 1)
    else:  # contrast
        mean = p.mean(dtype=np.float64)
        f = 1.0 + CONTRAST_PER_MAG * magnitude
        out = np.clip((p - mean) * f + mean, 0, 1).astype(p.dtype)
    return LabeledImage(out, img.label.copy())


def randaugment(img: LabeledImage, n_ops: int, magnitude: int,
                rng: RngStream) -> LabeledImage:
    """n_ops catalog primitives, sampled uniformly with replacement."""
    if n_ops < 1:
        raise ContractError("n_ops must be >= 1")
    out = img
    for _ in range(n_ops):
        op = PRIMITIVE_OPS[int(rng.integers(0, len(PRIMITIVE_OPS)))]
        out = apply_primitive(out, op, magnitude, rng)
    if out is img:
        out = img.copy()
    return out


def sample_beta(alpha: float, rng: RngStream) -> float:
    """One draw from Beta(alpha, alpha) via the ratio of two gamma draws.

    alpha == 1 short-circuits to the raw uniform variate.
    """
    if alpha <= 0:
        raise ContractError(f"alpha must be positive, got {alpha}")
    if alpha == 1.0:
        return float(rng.uniform())
    g1 = float(rng.gamma(alpha))
    g2 = float(rng.gamma(alpha))
    if g1 + g2 == 0.0:
        return 0.5
    return g1 / (g1 + g2)


def _check_pair(a: LabeledImage, b: LabeledImage):
    if a.pixels.shape != b.pixels.shape or a.label.shape != b.label.shape:
        raise SizeError("mixed samples must share image shape and class count")


def mixup(a: LabeledImage, b: LabeledImage, alpha: float,
          rng: RngStream) -> LabeledImage:
    """Convex blend of two samples: pixels and labels with the same lambda."""
    _check_pair(a, b)
    lam = sample_beta(alpha, rng)
    pixels = lam * a.pixels + (1.0 - lam) * b.pixels
    label = lam * a.label + (1.0 - lam) * b.label
    return LabeledImage(pixels.astype(a.pixels.dtype), label.astype(a.label.dtype))


def _cutmix_box(lam: float, h: int, w: int, cy: int, cx: int):
    cut_h = int(round(h * math.sqrt(1.0 - lam)))
    cut_w = int(round(w * math.sqrt(1.0 - lam)))
    y0 = max(cy - cut_h // 2, 0)
    x0 = max(cx - cut_w // 2, 0)
    y1 = min(cy - cut_h // 2 + cut_h, h)
    x1 = min(cx - cut_w // 2 + cut_w, w)
    return y0, y1, x0, x1


def cutmix(a: LabeledImage, b: LabeledImage, alpha: float,
           rng: RngStream) -> LabeledImage:
    """Paste a rectangle of b into a; label weight is the exact area fraction."""
    _check_pair(a, b)
    h, w = a.pixels.shape[-2:]
    if h < 2 or w < 2:
        raise SizeError("cutmix needs H,W >= 2")
    lam = sample_beta(alpha, rng)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, y1, x0, x1 = _cutmix_box(lam, h, w, cy, cx)
    pixels = a.pixels.copy()
    pixels[..., y0:y1, x0:x1] = b.pixels[..., y0:y1, x0:x1]
    frac = (y1 - y0) * (x1 - x0) / float(h * w)  # exact pasted-area fraction
    label = (1.0 - frac) * a.label + frac * b.label
    return LabeledImage(pixels, label.astype(a.label.dtype))


def _apply_named_da(name: str, img: LabeledImage, partner: LabeledImage,
                    config: AugmentConfig, rng: RngStream) -> LabeledImage:
    if name == "randaugment":
        return randaugment(img, config.ra_num_ops, config.ra_magnitude, rng)
    if name == "mixup":
        return mixup(img, partner, config.mixup_alpha, rng)
    if name == "cutmix":
        return cutmix(img, partner, config.cutmix_alpha, rng)
    if name == "identity":
        return img.copy()
    raise ContractError(f"unknown DA method: {name!r}")


def baseline1_augment(img: LabeledImage, partner: LabeledImage,
                      config: AugmentConfig, rng: RngStream) -> LabeledImage:
    """One DA chosen uniformly from the configured set (parallel multi-DA).

    The choice comes from a dedicated sub-stream so that a size-1 DA set
    replays exactly the draws of the corresponding single-DA pipeline.
    """
    if not config.da_set:
        raise ContractError("baseline1 needs a non-empty DA set")
    idx = int(rng.child("b1choice").integers(0, len(config.da_set)))
    return _apply_named_da(config.da_set[idx], img, partner, config, rng)


def baseline2_augment(img: LabeledImage, partner: LabeledImage,
                      config: AugmentConfig, rng: RngStream) -> LabeledImage:
    """RandAugment first, then mixup or cutmix (uniform), sequential multi-DA."""
    a = randaugment(img, config.ra_num_ops, config.ra_magnitude, rng)
    b = randaugment(partner, config.ra_num_ops, config.ra_magnitude,
                    rng.child("b2partner"))
    mixer = "mixup" if rng.child("b2choice").uniform() < 0.5 else "cutmix"
    return _apply_named_da(mixer, a, b, config, rng)


# ---------------------------------------------------------------------------
# batched variants used by the training loop
# ---------------------------------------------------------------------------

def _apply_op_batch(x: np.ndarray, op: str, magnitude: int,
                    dir_u: np.ndarray, pos_u: np.ndarray) -> np.ndarray:
    """One primitive over a [B,C,H,W] group, parameter draws given as uniforms."""
    if magnitude == 0:
        return x
    b, _, h, w = x.shape
    out = x
    if op in ("rotate", "translate_x", "translate_y", "shear_x"):
        out = x.copy()
        for sign, sel in ((1, dir_u < 0.5), (-1, dir_u >= 0.5)):
            if sel.any():
                out[sel] = _apply_map(x[sel], *_geom_map(op, magnitude, sign, h, w))
    elif op == "flip_h":
        out = x.copy()
        sel = dir_u < 0.5
        if sel.any():
            out[sel] = _apply_map(x[sel], *_geom_map("flip_h", magnitude, 1, h, w))
    elif op == "cutout":
        side = _cutout_span(magnitude, h, w)
        tops = (pos_u[:, 0] * (h - side + 1)).astype(np.intp)
        lefts = (pos_u[:, 1] * (w - side + 1)).astype(np.intp)
        out = x.copy()
        for j in range(b):
            out[j, :, tops[j]:tops[j] + side, lefts[j]:lefts[j] + side] = 0
    elif op == "brightness":
        out = np.clip(x + x.dtype.type(BRIGHTNESS_PER_MAG * magnitude), 0, 1)
    elif op == "contrast":
        means = x.mean(axis=(1, 2, 3), keepdims=True, dtype=np.float64)
        f = 1.0 + CONTRAST_PER_MAG * magnitude
        out = np.clip((x - means) * f + means, 0, 1).astype(x.dtype)
    else:
        raise ContractError(f"unknown primitive op: {op!r}")
    return out


def randaugment_batch(x: np.ndarray, n_ops: int, magnitude: int,
                      rng: RngStream) -> np.ndarray:
    """Batched randaugment; each sample draws its own op sequence."""
    if n_ops < 1:
        raise ContractError("n_ops must be >= 1")
    b = x.shape[0]
    ops = rng.integers(0, len(PRIMITIVE_OPS), size=(b, n_ops))
    dir_u = rng.uniform(size=(b, n_ops))
    pos_u = rng.uniform(size=(b, n_ops, 2))
    out = x.copy()
    for j in range(n_ops):
        for oi, op in enumerate(PRIMITIVE_OPS):
            sel = ops[:, j] == oi
            if sel.any():
                out[sel] = _apply_op_batch(out[sel], op, magnitude,
                                           dir_u[sel, j], pos_u[sel, j])
    return out


def _beta_batch(alpha: float, n: int, rng: RngStream) -> np.ndarray:
    if alpha <= 0:
        raise ContractError(f"alpha must be positive, got {alpha}")
    if alpha == 1.0:
        return rng.uniform(size=n)
    g1 = rng.gamma(alpha, size=n)
    g2 = rng.gamma(alpha, size=n)
    denom = g1 + g2
    return np.where(denom > 0, g1 / np.where(denom > 0, denom, 1.0), 0.5)


def base_preprocess_batch(x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Uniform flip + one-pixel shift preprocessing (method-independent)."""
    b = x.shape[0]
    out = _apply_op_batch(x, "flip_h", 1, rng.uniform(size=b),
                          np.zeros((b, 2)))
    for op in ("translate_x", "translate_y"):
        out = _apply_op_batch(out, op, 1, rng.uniform(size=b),
                              np.zeros((b, 2)))
    return out


def mixup_pair(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray,
               alpha: float, rng: RngStream):
    """Per-sample convex blends of two aligned batches."""
    lam = _beta_batch(alpha, xa.shape[0], rng)
    lx = lam.reshape(-1, 1, 1, 1)
    ly = lam.reshape(-1, 1)
    xm = (lx * xa + (1.0 - lx) * xb).astype(xa.dtype)
    ym = (ly * ya + (1.0 - ly) * yb).astype(ya.dtype)
    return xm, ym


def cutmix_pair(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray,
                alpha: float, rng: RngStream):
    """Per-sample rectangle pastes of batch b into batch a."""
    b, _, h, w = xa.shape
    lam = _beta_batch(alpha, b, rng)
    cys = rng.integers(0, h, size=b)
    cxs = rng.integers(0, w, size=b)
    xm = xa.copy()
    frac = np.empty(b, dtype=np.float64)
    for j in range(b):
        y0, y1, x0, x1 = _cutmix_box(float(lam[j]), h, w, int(cys[j]), int(cxs[j]))
        xm[j, :, y0:y1, x0:x1] = xb[j, :, y0:y1, x0:x1]
        frac[j] = (y1 - y0) * (x1 - x0) / float(h * w)  # exact pasted fraction
    fy = frac.reshape(-1, 1)
    ym = ((1.0 - fy) * ya + fy * yb).astype(ya.dtype)
    return xm, ym


def mixup_batch(x: np.ndarray, y: np.ndarray, perm: np.ndarray, alpha: float,
                rng: RngStream):
    return mixup_pair(x, y, x[perm], y[perm], alpha, rng)


def cutmix_batch(x: np.ndarray, y: np.ndarray, perm: np.ndarray, alpha: float,
                 rng: RngStream):
    return cutmix_pair(x, y, x[perm], y[perm], alpha, rng)
