import { spawn, type ChildProcessByStdio } from "node:child_process";
import { createInterface, Interface } from "node:readline";
import type { Readable, Writable } from "node:stream";

/** Error reported by the native side; the bridge process stays alive. */
export class BridgeRemoteError extends Error {
  readonly remoteType: string;

  constructor(type: string, message: string) {
    super(`${type}: ${message}`);
    this.name = "BridgeRemoteError";
    this.remoteType = type;
  }
}

interface Pending {
  resolve: (value: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

/**
 * Client for the line-delimited JSON bridge (`python3 -m gdqn.bridge`).
 *
 * One request per line on stdin, one response per line on stdout, matched by
 * id. All environment and network state lives on the native side; this class
 * only marshals.
 */
export class BridgeClient {
  private proc: ChildProcessByStdio<Writable, Readable, null>;
  private reader: Interface;
  private nextId = 0;
  private pending = new Map<number, Pending>();
  private closed = false;

  constructor(pythonBin: string = process.env.GDQN_PYTHON ?? "python3") {
    this.proc = spawn(pythonBin, ["-m", "gdqn.bridge"], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.reader = createInterface({ input: this.proc.stdout });
    this.reader.on("line", (line) => this.dispatch(line));
    this.proc.on("exit", () => {
      const err = new Error("bridge process exited");
      for (const p of this.pending.values()) p.reject(err);
      this.pending.clear();
    });
  }

  private dispatch(line: string): void {
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(line);
    } catch {
      return; // stray non-JSON output; nothing to match it to
    }
    const id = msg.id as number;
    const waiter = this.pending.get(id);
    if (!waiter) return;
    this.pending.delete(id);
    if (msg.ok) {
      waiter.resolve(msg);
    } else {
      const err = (msg.error ?? {}) as { type?: string; message?: string };
      waiter.reject(
        new BridgeRemoteError(err.type ?? "Error", err.message ?? "unknown"),
      );
    }
  }

  request(
    op: string,
    params: Record<string, unknown> = {},
  ): Promise<Record<string, unknown>> {
    if (this.closed) return Promise.reject(new Error("client closed"));
    const id = this.nextId++;
    const line = JSON.stringify({ id, op, ...params });
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.proc.stdin.write(line + "\n");
    });
  }

  async ping(): Promise<void> {
    await this.request("ping");
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    this.proc.stdin.end();
  }
}
