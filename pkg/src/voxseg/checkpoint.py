"""Versioned checkpoint container: JSON header + flat float32 parameters + CRC32.

Used for both codec.ckpt and flow.ckpt. Layout:

    magic "VSCK" | version u32=1 | header_len u32 | header JSON (utf-8) |
    param_count u64 | params float32 LE | CRC32 u32 of everything between
    version and CRC.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CorruptPayloadError, FormatVersionError

CKPT_MAGIC = b"VSCK"
CKPT_VERSION = 1


def params_checksum(params: np.ndarray) -> int:
    """CRC32 of the flat float32 parameter bytes; used by frozen-codec checks."""
    return zlib.crc32(np.ascontiguousarray(params, dtype="<f4").tobytes()) & 0xFFFFFFFF


def write_container(path, header: dict, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype="<f4").ravel()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(header_bytes)) + header_bytes
    payload += struct.pack("<Q", params.size) + params.tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    blob = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION) + payload + struct.pack("<I", crc)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_container(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != CKPT_MAGIC:
        raise FormatVersionError("bad magic; not a voxseg checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise FormatVersionError(f"unsupported checkpoint version {version}")
    payload, (crc,) = blob[8:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptPayloadError("checkpoint checksum failure")
    (header_len,) = struct.unpack_from("<I", payload, 0)
    header = json.loads(payload[4 : 4 + header_len].decode("utf-8"))
    off = 4 + header_len
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8
    if len(payload) != off + count * 4:
        raise CorruptPayloadError("checkpoint payload size mismatch")
    params = np.frombuffer(payload, dtype="<f4", count=count, offset=off).copy()
    return header, params
