"""Image file formats: binary PGM (P5), PNG, and the raw planar float files
``IM3F`` (multi-channel images) and ``CAM1`` (class activation maps).

Planar float layout: 4-byte magic, u32 height, u32 width, u32 channels
(little-endian, 16-byte header), then float32 samples in C-order [C,H,W].
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


def _read_token(buf, pos):
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pgm(path):
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    pos += 1
    if maxval < 256:
        dtype = np.dtype(np.uint8)
    elif maxval < 65536:
        dtype = np.dtype(">u2")
    else:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    n = width * height * dtype.itemsize
    if len(buf) - pos < n:
        raise ImageFormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return arr.astype(np.uint8 if maxval < 256 else np.uint16)


def write_pgm(path, img):
    img = np.asarray(img)
    if img.dtype == np.uint8:
        maxval, data = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, data = 65535, img.astype(">u2").tobytes()
    else:
        raise ImageFormatError(f"PGM needs uint8 or uint16 pixels, got {img.dtype}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + data)


def read_png(path):
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.uint16)
        if im.mode == "RGB":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_png(path, img):
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 3:
        img = to_uint8(img).transpose(1, 2, 0)
    if img.ndim == 3:
        Image.fromarray(np.ascontiguousarray(to_uint8(img)), mode="RGB").save(path, optimize=False)
    elif img.dtype == np.uint16:
        Image.fromarray(img, mode="I;16").save(path, optimize=False)
    else:
        Image.fromarray(to_uint8(img), mode="L").save(path, optimize=False)


def to_uint8(img):
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    if img.dtype == np.uint16:
        return np.floor(img / 257.0 + 0.5).astype(np.uint8)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_planar(path, arr, magic=b"IM3F"):
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    c, h, w = arr.shape
    Path(path).write_bytes(magic + struct.pack("<III", h, w, c) + arr.tobytes())


def read_planar(path, magic=b"IM3F"):
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise ImageFormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    h, w, c = struct.unpack("<III", buf[4:16])
    if len(buf) != 16 + 4 * c * h * w:
        raise ImageFormatError(f"{path}: size does not match header {c}x{h}x{w}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float32)


def read_image(path):
    """Read any supported image by extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    if suffix == ".im3f":
        return read_planar(path, b"IM3F")
    if suffix == ".cam":
        return read_planar(path, b"CAM1")[0]
    raise ImageFormatError(f"unsupported image extension {suffix!r}")
