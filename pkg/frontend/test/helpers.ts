/** Test plumbing: spawn the store service and core-driven ranks. */

import { spawn, type ChildProcess } from "node:child_process";
import * as path from "node:path";
import * as readline from "node:readline";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const PYTHON = process.env.PYTHON ?? "python3";

export interface StoreHandle {
  host: string;
  port: number;
  proc: ChildProcess;
  stop(): void;
}

/** Start the core package's store CLI and wait for its endpoint line. */
export async function startStore(profile = "fast"): Promise<StoreHandle> {
  const proc = spawn(
    PYTHON,
    ["-m", "fmi.cli", "store", "--bind", "127.0.0.1:0", "--profile", profile],
    { stdio: ["ignore", "pipe", "inherit"] },
  );
  const rl = readline.createInterface({ input: proc.stdout! });
  for await (const line of rl) {
    const match = /listening on ([\d.]+):(\d+)/.exec(line);
    if (match) {
      rl.close();
      return {
        host: match[1],
        port: Number(match[2]),
        proc,
        stop: () => proc.kill("SIGINT"),
      };
    }
  }
  throw new Error("store service did not report an endpoint");
}

export interface PyStep {
  collective: "allreduce" | "bcast" | "scatter" | "scan";
  dtype: string;
  op?: string;
  root?: number;
  values?: number[];
}

export interface PyResult {
  rank: number;
  outputs: string[]; // hex-encoded result buffers
}

/** Run one rank through the core library in a subprocess. */
export function runPyWorker(job: {
  name: string;
  rank: number;
  world_size: number;
  store_host: string;
  store_port: number;
  steps: PyStep[];
  epoch?: number;
}): Promise<PyResult> {
  return new Promise((resolve, reject) => {
    const proc = spawn(PYTHON, [path.join(HERE, "py_worker.py"),
                                JSON.stringify(job)],
      { stdio: ["ignore", "pipe", "inherit"] });
    let out = "";
    proc.stdout!.on("data", (chunk) => (out += chunk));
    proc.on("exit", (code) => {
      if (code !== 0) {
        reject(new Error(`py_worker rank ${job.rank} exited ${code}`));
        return;
      }
      try {
        resolve(JSON.parse(out));
      } catch (err) {
        reject(new Error(`py_worker output unparsable: ${out} (${err})`));
      }
    });
    proc.on("error", reject);
  });
}

let counter = 0;

export function uniqueName(prefix = "ts"): string {
  return `${prefix}${Date.now() % 100000}x${counter++}`;
}
