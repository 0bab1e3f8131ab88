/** Subprocess plumbing: one CLI invocation per bound call, via temp files. */

import { execFile } from "node:child_process";
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

import { errorFromCli } from "./errors.js";
import { BoundArray, decodeNpy, encodeNpy } from "./npy.js";

const execFileAsync = promisify(execFile);

/** Interpreter hosting the toolkit; override with DOWSEG_PYTHON. */
const PYTHON = process.env.DOWSEG_PYTHON ?? "python3";

export interface OpResult {
  arrays: Record<string, BoundArray>;
  texts: Record<string, string>;
}

/**
 * Run one toolkit operation: inputs are written as NPY files, the CLI's
 * `op` subcommand does the compute out of process (so the Node event loop
 * is never blocked), and the named outputs are read back.
 */
export async function runOp(
  name: string,
  inputs: Record<string, BoundArray>,
  params: Record<string, unknown>,
  arrayOutputs: string[],
  textOutputs: string[] = [],
): Promise<OpResult> {
  const work = await mkdtemp(join(tmpdir(), "dowseg-"));
  try {
    const argv = ["-m", "dowseg.cli", "op", name, "--out-dir", join(work, "out")];
    for (const [key, arr] of Object.entries(inputs)) {
      const path = join(work, `${key}.npy`);
      await writeFile(path, encodeNpy(arr));
      argv.push("--in", `${key}=${path}`);
    }
    argv.push("--params", JSON.stringify(params));
    try {
      await execFileAsync(PYTHON, argv, { maxBuffer: 1 << 26 });
    } catch (err) {
      const e = err as { code?: number; stderr?: string };
      throw errorFromCli(typeof e.code === "number" ? e.code : 1, e.stderr ?? String(err));
    }
    const arrays: Record<string, BoundArray> = {};
    for (const fname of arrayOutputs) {
      arrays[fname] = decodeNpy(await readFile(join(work, "out", fname)));
    }
    const texts: Record<string, string> = {};
    for (const fname of textOutputs) {
      texts[fname] = await readFile(join(work, "out", fname), "utf-8");
    }
    return { arrays, texts };
  } finally {
    await rm(work, { recursive: true, force: true });
  }
}
