import { BridgeClient } from "./bridge.js";

/**
 * Greedy inference over a native checkpoint (GDQN1 binary + JSON sidecar).
 * The forward pass and argmax run natively, so action choices are identical
 * to in-process evaluation; ties break toward the lowest action index.
 */
export class Policy {
  readonly layerDims: number[];
  private client: BridgeClient;
  private handle: number;

  private constructor(client: BridgeClient, handle: number, layerDims: number[]) {
    this.client = client;
    this.handle = handle;
    this.layerDims = layerDims;
  }

  static async load(client: BridgeClient, path: string): Promise<Policy> {
    const out = await client.request("load_net", { path });
    return new Policy(client, out.net as number, out.layer_dims as number[]);
  }

  /** Test-support constructor: fresh randomly initialized net. */
  static async fresh(
    client: BridgeClient,
    layerDims: number[],
    seed = 0,
  ): Promise<Policy> {
    const out = await client.request("make_net", {
      layer_dims: layerDims,
      seed,
    });
    return new Policy(client, out.net as number, out.layer_dims as number[]);
  }

  get nativeHandle(): number {
    return this.handle;
  }

  async save(path: string): Promise<void> {
    await this.client.request("save_net", { net: this.handle, path });
  }

  async greedyAction(obs: number[], goal: number[] = []): Promise<number> {
    const out = await this.client.request("greedy_action", {
      net: this.handle,
      obs,
      goal,
    });
    return out.action as number;
  }

  async qValues(obs: number[], goal: number[] = []): Promise<number[]> {
    const out = await this.client.request("greedy_action", {
      net: this.handle,
      obs,
      goal,
    });
    return out.q as number[];
  }
}
