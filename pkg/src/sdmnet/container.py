"""Binary container shared by model checkpoints and stacked ensembles.

Layout (little-endian)::

    b"SDMN"  u32 version  u32 config_len  config (UTF-8 key=value lines)
    repeated: u16 name_len, name, u8 dtype, u8 rank, u32 dims[rank], raw data
    u32 CRC32 of every preceding byte
"""

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SDMN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


def config_text(config):
    """Canonical key=value text: keys sorted, one per line."""
    for key, value in config.items():
        if "\n" in str(value) or "=" in str(key):
            raise ContainerError(f"config entry {key!r} cannot be encoded")
    return "".join(f"{k}={config[k]}\n" for k in sorted(config))


def parse_config(text):
    out = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out


def encode(config, tensors):
    """Serialize ``config`` (str->str) and an ordered mapping of arrays."""
    cfg = config_text(config).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in CODES:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(DTYPES[CODES[arr.dtype]]).tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode(buf):
    """Return ``(config dict, {name: array})``; raises a ContainerError subtype."""
    if len(buf) < 16:
        raise TruncatedError(f"container too short ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, cfg_len = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise VersionError(f"unsupported container version {version} (this build reads {VERSION})")
    payload, crc = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if 12 + cfg_len > len(payload):
        raise TruncatedError("config block runs past end of file")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("CRC32 mismatch: file is corrupted or truncated")
    config = parse_config(payload[12:12 + cfg_len].decode("utf-8"))
    pos = 12 + cfg_len
    tensors = {}
    try:
        while pos < len(payload):
            (name_len,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + name_len].decode("utf-8")
            pos += name_len
            code, rank = struct.unpack_from("<BB", payload, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            if code not in DTYPES:
                raise ContainerError(f"tensor {name!r}: unknown dtype code {code}")
            dtype = DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(payload):
                raise TruncatedError(f"tensor {name!r} runs past end of file")
            tensors[name] = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize,
                                          offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise TruncatedError(f"record header truncated: {exc}") from exc
    return config, tensors


def save(path, config, tensors):
    Path(path).write_bytes(encode(config, tensors))


def load(path):
    return decode(Path(path).read_bytes())
