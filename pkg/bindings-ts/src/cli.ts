/**
 * Low-level invocation of the native pipeline CLI.
 *
 * The executable is resolved from MITOPIPE_CLI (a whitespace-separated
 * command, e.g. "python3 -m mitopipe.cli") and defaults to `mitopipe` on
 * PATH. One process per call; all data passes through files and pipes.
 */

import { spawnSync } from "node:child_process";

export class NativeCliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = "NativeCliError";
  }
}

export function resolveCliCommand(): string[] {
  const env = process.env.MITOPIPE_CLI;
  if (env && env.trim().length > 0) {
    return env.trim().split(/\s+/);
  }
  return ["mitopipe"];
}

export interface CliOutput {
  readonly stdout: string;
  readonly stderr: string;
}

/** Run one CLI command; non-zero exit becomes a NativeCliError carrying the
 * native diagnostic text and exit code (1 usage, 2 data, 3 inference). */
export function runCli(args: string[]): CliOutput {
  const [cmd, ...prefix] = resolveCliCommand();
  const result = spawnSync(cmd, [...prefix, ...args], {
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (result.error) {
    throw new Error(`failed to run mitopipe CLI (${cmd}): ${result.error.message}`);
  }
  if (result.status !== 0) {
    throw new NativeCliError(
      `mitopipe exited with code ${result.status}: ${(result.stderr ?? "").trim()}`,
      result.status ?? -1,
      result.stderr ?? "",
    );
  }
  return { stdout: result.stdout ?? "", stderr: result.stderr ?? "" };
}
