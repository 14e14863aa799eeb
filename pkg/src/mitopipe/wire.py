"""Framed binary protocol between the pipeline and external model processes.

All frames are little-endian. One request/response pair per prediction:

    Request        "MPR1" | kind u8 (1=seg, 2=cls) | 3 zero bytes
                   | width u32 | height u32 | width*height*3 bytes RGB
    Seg response   "MPS1" | status u8 | 3 zero bytes
                   | width u32 | height u32 | width*height float32
    Cls response   "MPC1" | status u8 | 3 zero bytes | score float32

On status != 0 everything after the 8-byte prefix is replaced by a u32
length followed by a UTF-8 error string. Transport is a byte stream: child
process stdin/stdout or a TCP connection, framing identical.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

from .core import ProbabilityMap, RgbImage
from .errors import InferenceError, ProtocolError

REQUEST_MAGIC = b"MPR1"
SEG_MAGIC = b"MPS1"
CLS_MAGIC = b"MPC1"
KIND_SEG = 1
KIND_CLS = 2

_HEADER = struct.Struct("<4sB3s")
_DIMS = struct.Struct("<II")
_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")


def encode_request(kind: int, image: RgbImage) -> bytes:
    """Serialize one prediction request; 16 header bytes plus raw RGB."""
    if kind not in (KIND_SEG, KIND_CLS):
        raise ValueError(f"kind must be {KIND_SEG} or {KIND_CLS}, got {kind}")
    header = _HEADER.pack(REQUEST_MAGIC, kind, b"\x00\x00\x00")
    dims = _DIMS.pack(image.width, image.height)
    return header + dims + image.data.tobytes()


def encode_seg_response(pmap: ProbabilityMap) -> bytes:
    header = _HEADER.pack(SEG_MAGIC, 0, b"\x00\x00\x00")
    dims = _DIMS.pack(pmap.width, pmap.height)
    return header + dims + pmap.data.astype("<f4").tobytes()


def encode_cls_response(score: float) -> bytes:
    return _HEADER.pack(CLS_MAGIC, 0, b"\x00\x00\x00") + _F32.pack(score)


def encode_error_response(kind: int, message: str) -> bytes:
    magic = SEG_MAGIC if kind == KIND_SEG else CLS_MAGIC
    payload = message.encode("utf-8")
    return _HEADER.pack(magic, 1, b"\x00\x00\x00") + _U32.pack(len(payload)) + payload


class FrameReader:
    """Reads exact byte counts from a stream, tracking the absolute offset."""

    def __init__(self, read: Callable[[int], bytes]):
        self._read = read
        self.offset = 0

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self._read(remaining)
            if not chunk:
                raise ProtocolError(
                    f"stream closed mid-frame, {remaining} bytes missing", self.offset
                )
            chunks.append(chunk)
            self.offset += len(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)


def _read_prefix(reader: FrameReader, expect_magic: bytes) -> int:
    """Validate magic and reserved bytes; returns the status byte."""
    start = reader.offset
    magic, status, reserved = _HEADER.unpack(reader.read_exact(_HEADER.size))
    if magic != expect_magic:
        raise ProtocolError(f"bad magic {magic!r}, expected {expect_magic!r}", start)
    if reserved != b"\x00\x00\x00":
        raise ProtocolError(f"reserved bytes not zero: {reserved!r}", start + 5)
    return status


def _read_error(reader: FrameReader) -> str:
    (length,) = _U32.unpack(reader.read_exact(_U32.size))
    return reader.read_exact(length).decode("utf-8", errors="replace")


def read_request(reader: FrameReader) -> tuple[int, RgbImage]:
    """Server side: parse one request frame into (kind, image)."""
    start = reader.offset
    magic, kind, reserved = _HEADER.unpack(reader.read_exact(_HEADER.size))
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {REQUEST_MAGIC!r}", start)
    if kind not in (KIND_SEG, KIND_CLS):
        raise ProtocolError(f"unknown request kind {kind}", start + 4)
    if reserved != b"\x00\x00\x00":
        raise ProtocolError(f"reserved bytes not zero: {reserved!r}", start + 5)
    width, height = _DIMS.unpack(reader.read_exact(_DIMS.size))
    if width < 1 or height < 1:
        raise ProtocolError(f"invalid dimensions {width}x{height}", start + 8)
    payload = reader.read_exact(width * height * 3)
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return kind, RgbImage(arr.copy())


def read_seg_response(reader: FrameReader, width: int, height: int) -> ProbabilityMap:
    """Client side: parse a segmentation response, validating dimensions and range."""
    start = reader.offset
    status = _read_prefix(reader, SEG_MAGIC)
    if status != 0:
        raise InferenceError(f"segmentation server error (status {status}): {_read_error(reader)}")
    w, h = _DIMS.unpack(reader.read_exact(_DIMS.size))
    if (w, h) != (width, height):
        raise ProtocolError(
            f"response dimensions {w}x{h} do not match request {width}x{height}", start + 8
        )
    payload_start = reader.offset
    payload = reader.read_exact(w * h * 4)
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    bad = ~((values >= 0.0) & (values <= 1.0))
    if bad.any():
        i = int(np.argmax(bad))
        raise ProtocolError(
            f"probability {values[i]!r} outside [0, 1]", payload_start + 4 * i
        )
    return ProbabilityMap(values.reshape(h, w))


def read_cls_response(reader: FrameReader) -> float:
    """Client side: parse a classification response, validating the score range."""
    start = reader.offset
    status = _read_prefix(reader, CLS_MAGIC)
    if status != 0:
        raise InferenceError(f"classifier server error (status {status}): {_read_error(reader)}")
    (score,) = _F32.unpack(reader.read_exact(_F32.size))
    if not (0.0 <= score <= 1.0):
        raise ProtocolError(f"score {score!r} outside [0, 1]", start + 8)
    return float(score)


def serve_stream(read: Callable[[int], bytes], write: Callable[[bytes], None],
                 seg_fn: Callable[[RgbImage], ProbabilityMap] | None = None,
                 cls_fn: Callable[[RgbImage], float] | None = None) -> None:
    """Reference server loop: answer requests until the stream closes.

    Handler exceptions are reported to the client as status-1 frames; the
    loop keeps serving. Used by test stubs and as a template for wrapping
    real models.
    """
    pending = b""

    def read_fn(n: int) -> bytes:
        nonlocal pending
        if pending:
            head, pending = pending[:n], pending[n:]
            return head
        return read(n)

    reader = FrameReader(read_fn)
    while True:
        first = read(1)
        if not first:
            return
        pending = first
        kind, image = read_request(reader)
        try:
            if kind == KIND_SEG:
                if seg_fn is None:
                    raise InferenceError("no segmentation handler")
                write(encode_seg_response(seg_fn(image)))
            else:
                if cls_fn is None:
                    raise InferenceError("no classification handler")
                write(encode_cls_response(cls_fn(image)))
        except Exception as exc:  # report handler failures in-band
            write(encode_error_response(kind, str(exc)))
