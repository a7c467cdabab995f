import { BridgeClient } from "./bridge.js";

export type EnvKind = "grid" | "stack";

export interface GridParams {
  width?: number;
  height?: number;
  seed?: number;
}

export interface StackParams {
  n_blocks?: number;
  width?: number;
  height?: number;
  seed?: number;
  target_seed?: number;
  shaping?: "none" | "or" | "dt";
}

export interface StepResult {
  obs: number[];
  goal: number[];
  reward: number;
  done: boolean;
  info: Record<string, unknown>;
}

/** Flat 8-bit raster with explicit dimensions, row-major. */
export interface Raster {
  width: number;
  height: number;
  cells: number[];
}

export interface TraceResult {
  initial: { obs: number[]; goal: number[] };
  steps: Array<Pick<StepResult, "obs" | "goal" | "reward" | "done">>;
}

export interface EnvInfo {
  kind: EnvKind;
  nActions: number;
  obsDim: number;
  goalDim: number;
  width: number;
  height: number;
}

/**
 * Handle to one native environment instance. All dynamics run natively; the
 * handle owns exactly one episode stream (reset/step), like a Gym env.
 */
export class EnvHandle {
  readonly info: EnvInfo;
  private handle: number;
  private client: BridgeClient;
  private open = true;

  constructor(client: BridgeClient, handle: number, info: EnvInfo) {
    this.client = client;
    this.handle = handle;
    this.info = info;
  }

  private guard(): void {
    if (!this.open) throw new Error("env handle is closed");
  }

  async reset(): Promise<StepResult> {
    this.guard();
    const out = await this.client.request("reset", { env: this.handle });
    return asStep(out);
  }

  async step(action: number): Promise<StepResult> {
    this.guard();
    const out = await this.client.request("step", {
      env: this.handle,
      action,
    });
    return asStep(out);
  }

  async render(): Promise<Raster> {
    this.guard();
    const out = await this.client.request("render", { env: this.handle });
    return {
      width: out.width as number,
      height: out.height as number,
      cells: out.cells as number[],
    };
  }

  /** Run a whole action script natively (fresh stream, given seed). */
  async trace(seed: number, actions: number[]): Promise<TraceResult> {
    this.guard();
    const out = await this.client.request("trace", {
      env: this.handle,
      seed,
      actions,
    });
    return out as unknown as TraceResult;
  }

  async close(): Promise<void> {
    if (!this.open) return;
    this.open = false;
    await this.client.request("close", { env: this.handle });
  }
}

function asStep(out: Record<string, unknown>): StepResult {
  return {
    obs: out.obs as number[],
    goal: out.goal as number[],
    reward: out.reward as number,
    done: out.done as boolean,
    info: (out.info ?? {}) as Record<string, unknown>,
  };
}

export async function makeEnv(
  client: BridgeClient,
  kind: EnvKind,
  params: GridParams | StackParams = {},
): Promise<EnvHandle> {
  const out = await client.request("make_env", { kind, params });
  const info: EnvInfo = {
    kind,
    nActions: out.n_actions as number,
    obsDim: out.obs_dim as number,
    goalDim: out.goal_dim as number,
    width: out.width as number,
    height: out.height as number,
  };
  return new EnvHandle(client, out.env as number, info);
}
