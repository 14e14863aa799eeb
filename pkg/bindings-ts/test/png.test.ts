import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { describe, expect, it } from "vitest";

import { decodePng, encodePng, type RawImage } from "../src/png.js";

function randomImage(width: number, height: number, seed = 1): RawImage {
  // xorshift so the fixture is reproducible without a dependency
  let state = seed >>> 0 || 1;
  const data = new Uint8Array(3 * width * height);
  for (let i = 0; i < data.length; i++) {
    state ^= state << 13;
    state ^= state >>> 17;
    state ^= state << 5;
    state >>>= 0;
    data[i] = state & 0xff;
  }
  return { width, height, data };
}

describe("png codec", () => {
  it("round-trips random images exactly", () => {
    for (const [w, h] of [
      [1, 1],
      [7, 3],
      [64, 64],
      [130, 17],
    ] as const) {
      const img = randomImage(w, h, w * 1000 + h);
      const back = decodePng(encodePng(img));
      expect(back.width).toBe(w);
      expect(back.height).toBe(h);
      expect(Buffer.from(back.data).equals(Buffer.from(img.data))).toBe(true);
    }
  });

  it("rejects malformed input", () => {
    expect(() => decodePng(new Uint8Array([1, 2, 3]))).toThrow(/not a PNG/);
    expect(() =>
      encodePng({ width: 2, height: 2, data: new Uint8Array(5) }),
    ).toThrow(/does not match/);
  });

  it("decodes PNGs written by the native pipeline (Pillow), all filters", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "png-x-"));
    try {
      const img = randomImage(90, 60, 42);
      fs.writeFileSync(path.join(dir, "raw.bin"), img.data);
      const script = `
import sys
from PIL import Image
raw = open(sys.argv[1], 'rb').read()
im = Image.frombytes('RGB', (90, 60), raw)
im.save(sys.argv[2], format='PNG')
`;
      const res = spawnSync("python3", ["-c", script, path.join(dir, "raw.bin"), path.join(dir, "out.png")]);
      expect(res.status).toBe(0);
      const decoded = decodePng(fs.readFileSync(path.join(dir, "out.png")));
      expect(Buffer.from(decoded.data).equals(Buffer.from(img.data))).toBe(true);
    } finally {
      fs.rmSync(dir, { recursive: true, force: true });
    }
  });

  it("produces PNGs the native pipeline reads back exactly", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "png-x-"));
    try {
      const img = randomImage(33, 77, 7);
      fs.writeFileSync(path.join(dir, "ts.png"), encodePng(img));
      const script = `
import sys
from PIL import Image
im = Image.open(sys.argv[1]).convert('RGB')
sys.stdout.buffer.write(im.tobytes())
`;
      const res = spawnSync("python3", ["-c", script, path.join(dir, "ts.png")], {
        maxBuffer: 64 * 1024 * 1024,
      });
      expect(res.status).toBe(0);
      expect(Buffer.from(res.stdout).equals(Buffer.from(img.data))).toBe(true);
    } finally {
      fs.rmSync(dir, { recursive: true, force: true });
    }
  });
});
