"""Deterministic wire-protocol model servers for tests.

Usage: python stub_server.py MODE [ARGS...]

Modes:
    constant V      seg -> constant-V map, cls -> constant score V
    colorrule       seg -> high probability on blob-colored pixels,
                    cls -> high score iff the patch center is mitosis-purple
    error           every request answered with a status-1 error frame
    badmagic        replies 16 junk bytes to the first request
    sleep           reads one request, then never answers
"""

import sys
import time

import numpy as np

from mitopipe.core import ProbabilityMap
from mitopipe.wire import (
    FrameReader,
    encode_error_response,
    read_request,
    serve_stream,
)

TRUE_COLOR = np.array([120, 50, 150], dtype=np.float64)
MIMICKER_COLOR = np.array([230, 120, 180], dtype=np.float64)


def seg_constant(value):
    def fn(image):
        return ProbabilityMap(np.full((image.height, image.width), value))
    return fn


def cls_constant(value):
    def fn(image):
        return value
    return fn


def seg_colorrule(image):
    arr = image.data.astype(np.float64)
    blobish = (arr[:, :, 1] < 200.0) & (arr.sum(axis=2) < 690.0)
    return ProbabilityMap(np.where(blobish, 0.98, 0.02))


def cls_colorrule(image):
    h, w = image.height, image.width
    center = image.data[h // 2 - 5 : h // 2 + 6, w // 2 - 5 : w // 2 + 6]
    mean = center.reshape(-1, 3).mean(axis=0)
    near_true = np.linalg.norm(mean - TRUE_COLOR) < np.linalg.norm(mean - MIMICKER_COLOR)
    return 0.95 if near_true else 0.05


def main() -> int:
    mode = sys.argv[1]
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer

    def write(data: bytes) -> None:
        stdout.write(data)
        stdout.flush()

    if mode == "constant":
        value = float(sys.argv[2])
        serve_stream(stdin.read, write, seg_constant(value), cls_constant(value))
    elif mode == "colorrule":
        serve_stream(stdin.read, write, seg_colorrule, cls_colorrule)
    elif mode == "error":
        reader = FrameReader(stdin.read)
        while True:
            try:
                kind, _ = read_request(reader)
            except Exception:
                return 0
            write(encode_error_response(kind, "stub model is unavailable"))
    elif mode == "badmagic":
        reader = FrameReader(stdin.read)
        read_request(reader)
        write(b"JUNKJUNKJUNKJUNK")
    elif mode == "sleep":
        reader = FrameReader(stdin.read)
        read_request(reader)
        time.sleep(600)
    else:
        print(f"unknown mode {mode}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
