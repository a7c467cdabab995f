export { BridgeClient, BridgeRemoteError } from "./bridge.js";
export {
  EnvHandle,
  makeEnv,
  type EnvKind,
  type EnvInfo,
  type GridParams,
  type StackParams,
  type StepResult,
  type Raster,
  type TraceResult,
} from "./env.js";
export { Policy } from "./inference.js";
