"""Segmentation/classification inference: ensembling, test-time augmentation,
deterministic synthetic predictors, and a client for external model processes.

Predictions are averaged in probability space across all (member, transform)
pairs; the summation is performed over value-sorted terms so ensemble outputs
are bit-identical under member or transform permutation.
"""

from __future__ import annotations

import math
import os
import selectors
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import wire
from .core import BinaryMask, ProbabilityMap, RgbImage
from .errors import InferenceError, InvalidConfigError

DEFAULT_TIMEOUT = 30.0


class SegPredictor(Protocol):
    def predict(self, tile: RgbImage) -> ProbabilityMap: ...


class ClsPredictor(Protocol):
    def predict(self, patch: RgbImage) -> float: ...


@dataclass(frozen=True)
class TtaTransform:
    """A test-time input perturbation with the matching map de-augmentation.

    ``inverse_map`` undoes the geometric part on a probability map; sharpen
    has no geometric inverse, so its maps pass through unchanged.
    """

    id: str
    forward: Callable[[RgbImage], RgbImage]
    inverse_map: Callable[[ProbabilityMap], ProbabilityMap]


def _box_blur(arr: np.ndarray, radius: int) -> np.ndarray:
    """Box filter with mirror-reflected borders; works on 2-d and 3-d arrays."""
    k = 2 * radius + 1
    pad = [(radius, radius), (radius, radius)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr.astype(np.float64), pad, mode="symmetric")
    out = np.zeros_like(arr, dtype=np.float64)
    h, w = arr.shape[0], arr.shape[1]
    for dy in range(k):
        for dx in range(k):
            out += padded[dy : dy + h, dx : dx + w]
    return out / (k * k)


def sharpen(image: RgbImage) -> RgbImage:
    """Unsharp mask: out = clamp(img + (img - box3(img))), 3x3 box, amount 1."""
    arr = image.data.astype(np.float64)
    out = arr + (arr - _box_blur(arr, 1))
    out = np.clip(np.floor(out + 0.5), 0.0, 255.0)
    return RgbImage(out.astype(np.uint8))


def _flip_image(axis: int) -> Callable[[RgbImage], RgbImage]:
    def f(img: RgbImage) -> RgbImage:
        return RgbImage(np.flip(img.data, axis=axis).copy())
    return f


def _flip_map(axis: int) -> Callable[[ProbabilityMap], ProbabilityMap]:
    def f(pmap: ProbabilityMap) -> ProbabilityMap:
        return ProbabilityMap(np.flip(pmap.data, axis=axis).copy())
    return f


def _flip_both(img: RgbImage) -> RgbImage:
    return RgbImage(np.flip(img.data, axis=(0, 1)).copy())


def _flip_both_map(pmap: ProbabilityMap) -> ProbabilityMap:
    return ProbabilityMap(np.flip(pmap.data, axis=(0, 1)).copy())


def _identity(x):
    return x


TTA_IDENTITY = TtaTransform("identity", _identity, _identity)
TTA_HFLIP = TtaTransform("hflip", _flip_image(1), _flip_map(1))
TTA_VFLIP = TtaTransform("vflip", _flip_image(0), _flip_map(0))
TTA_HVFLIP = TtaTransform("hvflip", _flip_both, _flip_both_map)
TTA_SHARPEN = TtaTransform("sharpen", sharpen, _identity)

ALL_TTA: tuple[TtaTransform, ...] = (
    TTA_IDENTITY, TTA_HFLIP, TTA_VFLIP, TTA_HVFLIP, TTA_SHARPEN,
)


@dataclass(frozen=True)
class Ensemble:
    """A set of predictors averaged jointly over members and TTA variants."""

    members: tuple
    tta: tuple[TtaTransform, ...] = ALL_TTA

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidConfigError("ensemble needs at least one member")
        if len(self.tta) < 1:
            raise InvalidConfigError("ensemble needs at least one TTA transform")


def _sorted_mean(stack: np.ndarray) -> np.ndarray:
    """Mean along axis 0, summing in value-sorted order per element.

    Sorting makes the reduction invariant to the stacking order, so ensemble
    outputs do not depend on member/TTA enumeration order.
    """
    if stack.shape[0] == 1:
        return stack[0]
    s = np.sort(stack, axis=0)
    acc = s[0].copy()
    for i in range(1, s.shape[0]):
        acc += s[i]
    return acc / s.shape[0]


def ensemble_seg(ensemble: Ensemble, tile: RgbImage) -> ProbabilityMap:
    """Mean over all (member, tta) of de-augmented member predictions."""
    maps = []
    for m_idx, member in enumerate(ensemble.members):
        for t in ensemble.tta:
            try:
                pred = member.predict(t.forward(tile))
            except InferenceError:
                raise
            except Exception as exc:
                raise InferenceError(
                    f"segmentation member {m_idx} ({type(member).__name__}) failed: {exc}"
                ) from exc
            if pred.width != tile.width or pred.height != tile.height:
                raise InferenceError(
                    f"segmentation member {m_idx} returned {pred.width}x{pred.height} "
                    f"for a {tile.width}x{tile.height} tile"
                )
            maps.append(t.inverse_map(pred).data)
    out = _sorted_mean(np.stack(maps))
    return ProbabilityMap(np.clip(out, 0.0, 1.0))


def ensemble_cls(ensemble: Ensemble, patch: RgbImage) -> float:
    """Mean over all (member, tta) of member scores on augmented patches."""
    scores = []
    for m_idx, member in enumerate(ensemble.members):
        for t in ensemble.tta:
            try:
                s = float(member.predict(t.forward(patch)))
            except InferenceError:
                raise
            except Exception as exc:
                raise InferenceError(
                    f"classifier member {m_idx} ({type(member).__name__}) failed: {exc}"
                ) from exc
            if not (0.0 <= s <= 1.0):
                raise InferenceError(f"classifier member {m_idx} returned score {s} outside [0, 1]")
            scores.append(s)
    return min(1.0, max(0.0, math.fsum(sorted(scores)) / len(scores)))


class _OracleSegPredictor:
    """Emits a stored mask as probabilities; a deterministic test double.

    The input tile must match the mask dimensions (the oracle has no way to
    locate a sub-tile); blur and bounded uniform noise are applied on top,
    re-seeded identically on every call.
    """

    def __init__(self, gt_mask: BinaryMask, blur_radius: int, noise: float, seed: int):
        base = gt_mask.data.astype(np.float64)
        if blur_radius > 0:
            base = _box_blur(base, blur_radius)
        self._base = np.clip(base, 0.0, 1.0)
        self._noise = noise
        self._seed = seed

    def predict(self, tile: RgbImage) -> ProbabilityMap:
        h, w = self._base.shape
        if (tile.height, tile.width) != (h, w):
            raise InferenceError(
                f"oracle predictor holds a {w}x{h} mask but got a {tile.width}x{tile.height} tile"
            )
        out = self._base
        if self._noise > 0:
            rng = np.random.default_rng(self._seed)
            out = np.clip(out + rng.uniform(-self._noise, self._noise, size=out.shape), 0.0, 1.0)
        return ProbabilityMap(out)


def oracle_seg_predictor(gt_mask: BinaryMask, blur_radius: int = 0,
                         noise: float = 0.0, seed: int = 0) -> SegPredictor:
    """Deterministic predictor that reproduces ``gt_mask``, optionally blurred
    and perturbed by seeded uniform noise bounded by ``noise``."""
    if noise < 0 or noise > 1:
        raise InvalidConfigError("noise amplitude must lie in [0, 1]")
    return _OracleSegPredictor(gt_mask, blur_radius, noise, seed)


class _Connection:
    """One transport connection: a child process or a TCP socket."""

    def __init__(self, endpoint: str | Sequence[str], timeout: float):
        self.timeout = timeout
        self.proc: subprocess.Popen | None = None
        self.sock: socket.socket | None = None
        if isinstance(endpoint, str) and endpoint.startswith("tcp://"):
            host, _, port = endpoint[len("tcp://"):].rpartition(":")
            try:
                self.sock = socket.create_connection((host, int(port)), timeout=timeout)
            except OSError as exc:
                raise InferenceError(f"cannot connect to predictor {endpoint}: {exc}") from exc
            self.sock.settimeout(timeout)
        else:
            argv = shlex.split(endpoint) if isinstance(endpoint, str) else list(endpoint)
            if not argv:
                raise InvalidConfigError("empty predictor endpoint")
            try:
                self.proc = subprocess.Popen(
                    argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
                )
            except OSError as exc:
                raise InferenceError(f"cannot start predictor {argv[0]}: {exc}") from exc
            os.set_blocking(self.proc.stdout.fileno(), False)
            os.set_blocking(self.proc.stdin.fileno(), False)
        self.reader = wire.FrameReader(self._recv)

    def _recv(self, n: int) -> bytes:
        if self.sock is not None:
            try:
                return self.sock.recv(n)
            except socket.timeout:
                raise InferenceError(f"predictor read timed out after {self.timeout}s")
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + self.timeout
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_READ)
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise InferenceError(f"predictor read timed out after {self.timeout}s")
                if not sel.select(timeout=remaining):
                    continue
                try:
                    data = os.read(fd, n)
                except BlockingIOError:
                    continue
                if data:
                    return data
                rc = self.proc.poll()
                if rc is not None:
                    raise InferenceError(f"predictor process exited with code {rc}")
                return b""  # stdout closed while the process is still alive

    def send(self, payload: bytes) -> None:
        if self.sock is not None:
            try:
                self.sock.sendall(payload)
                return
            except socket.timeout:
                raise InferenceError(f"predictor write timed out after {self.timeout}s")
        fd = self.proc.stdin.fileno()
        deadline = time.monotonic() + self.timeout
        view = memoryview(payload)
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_WRITE)
            while view:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise InferenceError(f"predictor write timed out after {self.timeout}s")
                if not sel.select(timeout=remaining):
                    continue
                try:
                    written = os.write(fd, view[: 1 << 16])
                except BlockingIOError:
                    continue
                except BrokenPipeError:
                    raise InferenceError("predictor process closed its input")
                view = view[written:]

    def close(self) -> None:
        if self.sock is not None:
            self.sock.close()
        if self.proc is not None:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ExternalPredictor:
    """Client for a model process speaking the framed wire protocol.

    Each worker thread gets its own connection (one request in flight per
    connection); predictions are one request/response round trip.
    """

    def __init__(self, endpoint: str | Sequence[str], kind: str,
                 timeout: float = DEFAULT_TIMEOUT):
        if kind not in ("seg", "cls"):
            raise InvalidConfigError(f"kind must be 'seg' or 'cls', got {kind!r}")
        self.endpoint = endpoint
        self.kind = kind
        self.timeout = timeout
        self._local = threading.local()
        self._all: list[_Connection] = []
        self._lock = threading.Lock()

    def _connection(self) -> _Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = _Connection(self.endpoint, self.timeout)
            self._local.conn = conn
            with self._lock:
                self._all.append(conn)
        return conn

    def predict(self, image: RgbImage):
        conn = self._connection()
        wire_kind = wire.KIND_SEG if self.kind == "seg" else wire.KIND_CLS
        conn.send(wire.encode_request(wire_kind, image))
        if self.kind == "seg":
            return wire.read_seg_response(conn.reader, image.width, image.height)
        return wire.read_cls_response(conn.reader)

    def close(self) -> None:
        with self._lock:
            conns, self._all = self._all, []
        for conn in conns:
            conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_predictor(endpoint: str | Sequence[str], kind: str = "seg",
                       timeout: float = DEFAULT_TIMEOUT) -> ExternalPredictor:
    """Connect a segmentation ('seg') or classification ('cls') predictor to
    a child-process command or tcp://host:port endpoint."""
    return ExternalPredictor(endpoint, kind, timeout)
