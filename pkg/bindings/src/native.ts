/**
 * Transport to the native pipeline: every call is marshalled as JSON to the
 * `trajlens call` surface. A persistent `--serve` child answers streamed
 * requests in order; `callOnce` spawns a fresh process per request (used for
 * long-running functions and as an independent path in the golden tests).
 */

import { spawn, spawnSync, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface, type Interface } from "node:readline";

export interface CallError {
  type: string;
  message: string;
}

interface CallResponse {
  ok: boolean;
  result?: unknown;
  error?: CallError;
}

export class NativeError extends Error {
  readonly kind: string;

  constructor(error: CallError) {
    super(`${error.type}: ${error.message}`);
    this.kind = error.type;
  }
}

const DEFAULT_ARGS = ["-m", "trajlens", "call"];

function unwrap(response: CallResponse): unknown {
  if (!response.ok || response.error) {
    throw new NativeError(response.error ?? { type: "UnknownError", message: "no detail" });
  }
  return response.result;
}

/** One-shot invocation: params on stdin, single JSON object on stdout. */
export function callOnce(fn: string, params: unknown, python = "python3"): unknown {
  const proc = spawnSync(python, [...DEFAULT_ARGS, fn], {
    input: JSON.stringify(params),
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (proc.error) {
    throw proc.error;
  }
  const line = proc.stdout.trim().split("\n").pop() ?? "";
  if (!line) {
    throw new Error(`trajlens call ${fn} produced no output (stderr: ${proc.stderr})`);
  }
  return unwrap(JSON.parse(line) as CallResponse);
}

/** Persistent request/response channel over `trajlens call --serve`. */
export class NativeChannel {
  private readonly proc: ChildProcessWithoutNullStreams;
  private readonly lines: Interface;
  private readonly pending: Array<{
    resolve: (value: unknown) => void;
    reject: (err: Error) => void;
  }> = [];
  private stderrTail = "";

  constructor(python = "python3") {
    this.proc = spawn(python, [...DEFAULT_ARGS, "--serve"], { stdio: "pipe" });
    this.lines = createInterface({ input: this.proc.stdout });
    this.lines.on("line", (line) => {
      const waiter = this.pending.shift();
      if (!waiter) {
        return;
      }
      try {
        waiter.resolve(unwrap(JSON.parse(line) as CallResponse));
      } catch (err) {
        waiter.reject(err as Error);
      }
    });
    this.proc.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-4000);
    });
    this.proc.on("exit", () => {
      const err = new Error(`trajlens serve exited (stderr tail: ${this.stderrTail})`);
      while (this.pending.length > 0) {
        this.pending.shift()?.reject(err);
      }
    });
  }

  call(fn: string, params: unknown): Promise<unknown> {
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.proc.stdin.write(`${JSON.stringify({ fn, params })}\n`, (err) => {
        if (err) {
          reject(err);
        }
      });
    });
  }

  close(): void {
    this.proc.stdin.end();
    this.lines.close();
  }
}
