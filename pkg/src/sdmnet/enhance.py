"""Radiograph preprocessing, contrast enhancement and augmentation.

Images are numpy arrays whose dtype carries the depth: ``uint8`` (8-bit),
``uint16`` (16-bit) or floating point in [0, 1] (unit-real). Integer
results are requantized with round-half-up.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rng import stream

VARIANTS = ("gray", "gamma", "invert", "chan3")


class UniformImageWarning(UserWarning):
    pass


def max_value(img):
    if img.dtype == np.uint8:
        return 255
    if img.dtype == np.uint16:
        return 65535
    if np.issubdtype(img.dtype, np.floating):
        return 1.0
    raise TypeError(f"unsupported pixel dtype {img.dtype}")


def _requantize(values, like):
    """Cast float values back to ``like``'s depth (round-half-up, clamped)."""
    top = max_value(like)
    if np.issubdtype(like.dtype, np.floating):
        return np.clip(values, 0.0, 1.0).astype(like.dtype, copy=False)
    return np.clip(np.floor(values + 0.5), 0, top).astype(like.dtype)


def to_unit(img):
    img = np.asarray(img)
    if np.issubdtype(img.dtype, np.floating):
        return img.astype(np.float64)
    return img.astype(np.float64) / max_value(img)


def from_unit(values, dtype=np.uint8):
    return _requantize(np.asarray(values) * max_value(np.zeros(1, dtype)), np.zeros(1, dtype))


# -- preprocessing --------------------------------------------------------------

def _uniform_run(lines, limit, max_count):
    count = 0
    for line in lines:
        if count >= max_count or line.var() >= limit:
            break
        count += 1
    return count


def clip_borders(img, tau=1e-4, max_fraction=0.25):
    """Strip uniform edge rows/columns.

    A line counts as border while its variance stays below ``tau * R**2``
    (R = dynamic range of the depth). At most ``max_fraction`` of the size
    is removed from each side. A fully uniform image is returned unchanged
    with a ``UniformImageWarning``.
    """
    img = np.asarray(img)
    h, w = img.shape
    if h < 8 or w < 8:
        raise ValueError(f"image must be at least 8x8, got {h}x{w}")
    vals = img.astype(np.float64)
    limit = tau * float(max_value(img)) ** 2
    if vals.var() < limit:
        warnings.warn("image is uniform; borders left in place", UniformImageWarning, stacklevel=2)
        return img
    cap_h, cap_w = int(h * max_fraction), int(w * max_fraction)
    top = _uniform_run(vals, limit, cap_h)
    bottom = _uniform_run(vals[::-1], limit, cap_h)
    rows = vals[top:h - bottom]
    left = _uniform_run(rows.T, limit, cap_w)
    right = _uniform_run(rows.T[::-1], limit, cap_w)
    return img[top:h - bottom, left:w - right]


def energy_normalize(img, clamp=3.0):
    """z-score by image mean/std, clamp at +/-``clamp`` sigma, map to [0, 1]."""
    vals = np.asarray(img, dtype=np.float64)
    std = vals.std()
    if std == 0:
        return np.full(vals.shape, 0.5)
    z = np.clip((vals - vals.mean()) / std, -clamp, clamp)
    return (z + clamp) / (2.0 * clamp)


def _interp_matrix(n_in, n_out):
    """Half-pixel-centre bilinear weights, shape [n_out, n_in]."""
    mat = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def resample(img, out_h, out_w):
    """Bilinear resize (pixel centres aligned at half-integers)."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    vals = img.astype(np.float64)
    out = _interp_matrix(h, out_h) @ vals @ _interp_matrix(w, out_w).T if img.ndim == 2 else \
        np.einsum("ih,chw,jw->cij", _interp_matrix(h, out_h), vals, _interp_matrix(w, out_w))
    return _requantize(out, img)


def pad_square(img):
    """Zero-pad the shorter side; odd remainders put the extra pixel bottom/right."""
    img = np.asarray(img)
    h, w = img.shape
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    out = np.zeros((side, side), dtype=img.dtype)
    out[top:top + h, left:left + w] = img
    return out


def resize_pad(img, target):
    if target < 16:
        raise ValueError(f"target size must be >= 16, got {target}")
    return resample(pad_square(img), target, target)


def preprocess(img, target):
    """Border clip, energy normalization, pad+resize; returns an 8-bit image."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UniformImageWarning)
        clipped = clip_borders(img)
    unit = energy_normalize(clipped)
    return from_unit(resize_pad(unit, target), np.uint8)


# -- enhancement ----------------------------------------------------------------

def invert(img):
    img = np.asarray(img)
    if np.issubdtype(img.dtype, np.floating):
        return 1.0 - img
    return (max_value(img) - img.astype(np.int64)).astype(img.dtype)


def gamma_lut(c=1.0, gamma=2.0):
    levels = np.arange(256) / 255.0
    return np.floor(np.clip(c * levels ** gamma, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def gamma_correct(img, c=1.0, gamma=2.0):
    """out = c * in**gamma on the unit scale, clamped and requantized."""
    if c <= 0 or gamma <= 0:
        raise ValueError("gamma correction needs c > 0 and gamma > 0")
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return gamma_lut(c, gamma)[img]
    out = np.clip(c * to_unit(img) ** gamma, 0.0, 1.0)
    return _requantize(out * max_value(img), img)


def _tile_lut(hist, tile_pixels, clip_limit, bins=256):
    hist = hist.astype(np.int64)
    if clip_limit > 0:
        limit = max(int(clip_limit * tile_pixels / bins), 1)
        excess = int(np.maximum(hist - limit, 0).sum())
        hist = np.minimum(hist, limit)
        batch, residual = divmod(excess, bins)
        hist += batch
        if residual:
            step = max(bins // residual, 1)
            idx = np.arange(0, bins, step)[:residual]
            hist[idx] += 1
    scale = np.float32((bins - 1) / tile_pixels)
    return np.clip(np.rint(np.cumsum(hist).astype(np.float32) * scale), 0, 255).astype(np.float32)


def _clahe_u8(img, clip_limit, tiles):
    ty, tx = tiles
    h, w = img.shape
    pad_h, pad_w = (-h) % ty, (-w) % tx
    src = np.pad(img, ((0, pad_h), (0, pad_w)), mode="reflect") if pad_h or pad_w else img
    th, tw = src.shape[0] // ty, src.shape[1] // tx
    luts = np.empty((ty, tx, 256), dtype=np.float32)
    for i in range(ty):
        for j in range(tx):
            tile = src[i * th:(i + 1) * th, j * tw:(j + 1) * tw]
            luts[i, j] = _tile_lut(np.bincount(tile.ravel(), minlength=256), th * tw, clip_limit)

    def axis_weights(n, size, count):
        f = np.arange(n, dtype=np.float32) * np.float32(1.0 / size) - np.float32(0.5)
        lo = np.floor(f).astype(int)
        a = (f - lo).astype(np.float32)
        return np.maximum(lo, 0), np.minimum(lo + 1, count - 1), a

    y1, y2, ya = axis_weights(h, th, ty)
    x1, x2, xa = axis_weights(w, tw, tx)
    v = img.astype(np.intp)
    ya = ya[:, None]
    xa = xa[None, :]
    top = luts[y1[:, None], x1[None, :], v] * (1 - xa) + luts[y1[:, None], x2[None, :], v] * xa
    bot = luts[y2[:, None], x1[None, :], v] * (1 - xa) + luts[y2[:, None], x2[None, :], v] * xa
    res = top * (1 - ya) + bot * ya
    return np.clip(np.rint(res), 0, 255).astype(np.uint8)


def clahe(img, clip_limit=8.0, tiles=(4, 4)):
    """Contrast-limited adaptive histogram equalization on 256 bins.

    Histograms are clipped at ``clip_limit * tile_pixels / 256``; the excess
    is spread uniformly in one pass with the residual distributed at even
    strides. Tile mappings are bilinearly interpolated between tile centres.
    Sides not divisible by the tile grid are reflect-padded for the
    histogram pass. ``clip_limit <= 0`` disables clipping.
    """
    img = np.asarray(img)
    if img.shape[0] < tiles[0] or img.shape[1] < tiles[1]:
        raise ValueError(f"image {img.shape} smaller than tile grid {tiles}")
    if img.dtype == np.uint8:
        return _clahe_u8(img, clip_limit, tiles)
    # other depths run on an 8-bit quantization
    out = _clahe_u8(from_unit(to_unit(img), np.uint8), clip_limit, tiles)
    return _requantize(out.astype(np.float64) / 255.0 * max_value(img), img)


def merge_3channel(gray, clahe_img, gamma_img):
    """Stack [gray, CLAHE, gamma] into a 3xHxW unit-real image."""
    if not (np.shape(gray) == np.shape(clahe_img) == np.shape(gamma_img)):
        raise ValueError("channel images must share dimensions")
    return np.stack([to_unit(gray), to_unit(clahe_img), to_unit(gamma_img)]).astype(np.float32)


def make_variant(img, variant, clip_limit=8.0, tiles=(4, 4), c=1.0, gamma=2.0):
    """Model input for one enhancement variant, as float32 [C,H,W] in [0, 1]."""
    if variant == "gray":
        return to_unit(img)[None].astype(np.float32)
    if variant == "gamma":
        return to_unit(gamma_correct(img, c, gamma))[None].astype(np.float32)
    if variant == "invert":
        return to_unit(invert(img))[None].astype(np.float32)
    if variant == "chan3":
        return merge_3channel(img, clahe(img, clip_limit, tiles), gamma_correct(img, c, gamma))
    raise ValueError(f"unknown enhancement variant {variant!r}; expected one of {VARIANTS}")


# -- augmentation -----------------------------------------------------------------

CROP_FRACTION = 0.10


@dataclass(frozen=True)
class AugmentSpec:
    rotation_degrees: float = 0.0
    rotation_sign: str = "ccw"
    crop: bool = False
    hflip: bool = False
    crop_fraction: float = CROP_FRACTION

    def __post_init__(self):
        if not 0.0 <= self.rotation_degrees <= 15.0:
            raise ValueError(f"rotation must lie in [0, 15] degrees, got {self.rotation_degrees}")
        if self.rotation_sign not in ("cw", "ccw"):
            raise ValueError(f"rotation_sign must be 'cw' or 'ccw', got {self.rotation_sign!r}")
        if self.crop_fraction != CROP_FRACTION:
            raise ValueError("crop_fraction is fixed at 0.10")


def random_augment_spec(rng):
    return AugmentSpec(
        rotation_degrees=float(rng.uniform(0.0, 15.0)),
        rotation_sign="cw" if rng.random() < 0.5 else "ccw",
        crop=bool(rng.random() < 0.5),
        hflip=bool(rng.random() < 0.5),
    )


def crop_window(h, w, fraction=CROP_FRACTION):
    """Central window kept by a perimeter crop: (top, left, height, width)."""
    keep = 1 - 2 * fraction
    ch, cw = int(h * keep + 1e-9), int(w * keep + 1e-9)
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def augment_image(img, spec):
    """Rotate (bilinear, zero fill), crop 10% of the perimeter and resize back, flip."""
    img = np.asarray(img)
    out = img
    if spec.rotation_degrees:
        angle = spec.rotation_degrees if spec.rotation_sign == "ccw" else -spec.rotation_degrees
        rotated = ndimage.rotate(img.astype(np.float64), angle, reshape=False, order=1, mode="constant", cval=0.0)
        out = _requantize(rotated, img)
    if spec.crop:
        h, w = out.shape
        top, left, ch, cw = crop_window(h, w, spec.crop_fraction)
        out = resample(out[top:top + ch, left:left + cw], h, w)
    if spec.hflip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def balance_training_set(train_ids, labels, seed):
    """Oversample the minority class with augmented copies.

    Returns ``(sample_id, AugmentSpec or None)`` pairs: every original once,
    plus ``floor(majority/minority) - 1`` augmented copies per minority
    sample. Specs come from per-sample named streams.
    """
    train_ids = list(train_ids)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) != 2:
        raise ValueError("balancing needs exactly two classes in the training set")
    minority = classes[np.argmin(counts)]
    factor = int(counts.max() // counts.min())
    out = [(sid, None) for sid in train_ids]
    if factor <= 1:
        return out
    for sid, lab in zip(train_ids, labels):
        if lab != minority:
            continue
        for copy in range(1, factor):
            out.append((sid, random_augment_spec(stream(seed, "augment", sid, copy))))
    return out
