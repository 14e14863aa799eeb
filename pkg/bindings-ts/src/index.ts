/**
 * Bindings for the mitopipe histopathology pipeline.
 *
 * Three operations are exposed: stain normalization to a saved profile,
 * end-to-end mitosis detection, and detection-metric evaluation. Each call
 * drives the native CLI through its documented file interfaces (PNG images,
 * profile/config files, CSV detections, JSON metrics), so results are
 * identical to running the CLI by hand. Image pixels travel as contiguous
 * `Uint8Array` views that are never mutated.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { NativeCliError, runCli } from "./cli.js";
import { decodePng, encodePng, type RawImage } from "./png.js";

export { NativeCliError, runCli, resolveCliCommand } from "./cli.js";
export { decodePng, encodePng } from "./png.js";

/** Contiguous height x width x 3 unsigned-byte RGB buffer, row-major. */
export type BoundImage = RawImage;

export interface NormalizeOutcome {
  /** Stain-normalized copy of the input (the input itself when the image is background-only). */
  readonly image: BoundImage;
  /** Native warning line (e.g. background-only skip) or null. */
  readonly warning: string | null;
}

/** One detection as (x, y, score), pixel coordinates with sub-pixel precision. */
export type DetectionTuple = [x: number, y: number, score: number];

export interface EvaluationMetrics {
  readonly tp: number;
  readonly fp: number;
  readonly fn: number;
  readonly precision: number;
  readonly recall: number;
  readonly f1: number;
}

/** A ground-truth point as (x, y). */
export type Point = [x: number, y: number];

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "mitopipe-bindings-"));
  try {
    return fn(dir);
  } finally {
    fs.rmSync(dir, { recursive: true, force: true });
  }
}

function checkImage(image: BoundImage): void {
  if (image.width < 1 || image.height < 1) {
    throw new Error(`invalid image dimensions ${image.width}x${image.height}`);
  }
  if (image.data.length !== 3 * image.width * image.height) {
    throw new Error(
      `image buffer length ${image.data.length} does not match ` +
        `${image.width}x${image.height} RGB (expected ${3 * image.width * image.height})`,
    );
  }
}

/**
 * Normalize an RGB image to a stain profile produced by `mitopipe fit-target`.
 *
 * Numerically identical to the native CLI `normalize` on the same input;
 * background-only images come back unchanged with the warning reported.
 */
export function normalize(image: BoundImage, profilePath: string): NormalizeOutcome {
  checkImage(image);
  return withTempDir((dir) => {
    const inDir = path.join(dir, "in");
    const outDir = path.join(dir, "out");
    fs.mkdirSync(inDir);
    fs.writeFileSync(path.join(inDir, "image.png"), encodePng(image));
    const { stderr } = runCli([
      "normalize",
      "--profile",
      profilePath,
      "--in",
      inDir,
      "--out",
      outDir,
    ]);
    const warning =
      stderr
        .split("\n")
        .find((line) => line.startsWith("WARN "))
        ?.replace(/^WARN\s+/, "") ?? null;
    const output = decodePng(fs.readFileSync(path.join(outDir, "image.png")));
    return { image: output, warning };
  });
}

/**
 * Run the full detection pipeline on one image with a pipeline config file.
 *
 * Returns (x, y, score) tuples exactly as the native CLI writes them to its
 * detections CSV (2-decimal coordinates, 4-decimal scores).
 */
export function detect(image: BoundImage, configPath: string): DetectionTuple[] {
  checkImage(image);
  if (!fs.existsSync(configPath)) {
    throw new Error(`config file not found: ${configPath}`);
  }
  return withTempDir((dir) => {
    const inDir = path.join(dir, "in");
    fs.mkdirSync(inDir);
    fs.writeFileSync(path.join(inDir, "image.png"), encodePng(image));
    const outCsv = path.join(dir, "detections.csv");
    runCli(["detect", "--config", configPath, "--in", inDir, "--out", outCsv]);
    const lines = fs.readFileSync(outCsv, "utf-8").trim().split("\n");
    return lines.slice(1).filter((line) => line.length > 0).map((line): DetectionTuple => {
      const [, x, y, score] = line.split(",");
      return [Number(x), Number(y), Number(score)];
    });
  });
}

/**
 * Match predicted detections against ground-truth points and compute
 * precision/recall/F1, mirroring the native `evaluate` command.
 */
export function evaluate(
  preds: DetectionTuple[],
  gts: Point[],
  radius = 30,
): EvaluationMetrics {
  return withTempDir((dir) => {
    const predCsv = path.join(dir, "pred.csv");
    const gtCsv = path.join(dir, "gt.csv");
    fs.writeFileSync(
      predCsv,
      "image_id,x,y,score\n" +
        preds.map(([x, y, s]) => `i,${x},${y},${s}`).join("\n") +
        (preds.length ? "\n" : ""),
    );
    fs.writeFileSync(
      gtCsv,
      "image_id,x,y\n" + gts.map(([x, y]) => `i,${x},${y}`).join("\n") + (gts.length ? "\n" : ""),
    );
    const { stdout } = runCli([
      "evaluate",
      "--pred",
      predCsv,
      "--gt",
      gtCsv,
      "--radius",
      String(radius),
    ]);
    const doc = JSON.parse(stdout) as EvaluationMetrics & Record<string, unknown>;
    return {
      tp: doc.tp,
      fp: doc.fp,
      fn: doc.fn,
      precision: doc.precision,
      recall: doc.recall,
      f1: doc.f1,
    };
  });
}

/** Version string of the native library behind the bindings. */
export function nativeVersion(): string {
  return runCli(["--version"]).stdout.trim();
}
