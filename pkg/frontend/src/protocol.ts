/**
 * Message types of the live-session protocol, plus validation against the
 * schema file shared with the Python server (src/twsbr/protocol.schema.json).
 *
 * Two validator implementations are provided: an Ajv-backed one for Node
 * (tests, bridge) and a dependency-free structural one the browser build
 * uses.  A test asserts both produce identical verdicts, so every outbound
 * frame is checked against the documented schema in either environment.
 */

export type Ref = string | number;

export interface TelemetryRecord {
  t: number;
  theta_acc: number;
  theta_gyro: number;
  theta_filt: number;
  omega: number;
  u: number;
  u_sat: number;
  pwm_left: number;
  pwm_right: number;
  controller_id: string;
}

export interface HelloMsg { type: "hello"; ref: Ref; version: number }
export interface LoadScenarioMsg { type: "load_scenario"; ref: Ref; scenario: object }
export interface SetControllerMsg { type: "set_controller"; ref: Ref; controller: object }
export interface SetGainsMsg { type: "set_gains"; ref: Ref; gains: Record<string, number> }
export interface SetFilterWeightMsg { type: "set_filter_weight"; ref: Ref; w: number }
export interface StartMsg { type: "start"; ref: Ref }
export interface PauseMsg { type: "pause"; ref: Ref }
export interface ResetMsg { type: "reset"; ref: Ref }
export interface InjectDisturbanceMsg { type: "inject_disturbance"; ref: Ref; impulse: number }
export interface SetAddedMassMsg {
  type: "set_added_mass";
  ref: Ref;
  added_mass: number;
  mount_height: number;
}
export interface GetRunLogMsg { type: "get_run_log"; ref: Ref }

export type ClientMessage =
  | HelloMsg
  | LoadScenarioMsg
  | SetControllerMsg
  | SetGainsMsg
  | SetFilterWeightMsg
  | StartMsg
  | PauseMsg
  | ResetMsg
  | InjectDisturbanceMsg
  | SetAddedMassMsg
  | GetRunLogMsg;

export interface HelloAckMsg { type: "hello_ack"; ref: Ref; version: number }
export interface AckMsg { type: "ack"; ref: Ref }
export interface ErrorMsg { type: "error"; ref: Ref | null; reason: string; detail?: string }
export interface TelemetryMsg { type: "telemetry"; seq: number; record: TelemetryRecord }
export interface RunMetrics {
  settling_time: number | null;
  overshoot_pct: number;
  steady_state_error: number;
  peak_time: number;
  settled: boolean;
  effort: number;
}
export interface RunCompleteMsg { type: "run_complete"; metrics: RunMetrics }
export interface RunLogMsg { type: "run_log"; ref: Ref; csv: string }

export type ServerMessage =
  | HelloAckMsg
  | AckMsg
  | ErrorMsg
  | TelemetryMsg
  | RunCompleteMsg
  | RunLogMsg;

/** Returns null when valid, else a human-readable violation. */
export type Validator = (msg: unknown) => string | null;

const isRef = (v: unknown): boolean =>
  typeof v === "string" || (typeof v === "number" && Number.isInteger(v));
const isNum = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);

interface FieldSpec {
  required: string[];
  check: (m: Record<string, unknown>) => string | null;
}

const CLIENT_FIELDS: Record<string, FieldSpec> = {
  hello: {
    required: ["type", "ref", "version"],
    check: (m) =>
      Number.isInteger(m.version) && (m.version as number) >= 1
        ? null
        : "version must be an integer >= 1",
  },
  load_scenario: {
    required: ["type", "ref", "scenario"],
    check: (m) =>
      typeof m.scenario === "object" && m.scenario !== null && !Array.isArray(m.scenario)
        ? null
        : "scenario must be an object",
  },
  set_controller: {
    required: ["type", "ref", "controller"],
    check: (m) =>
      typeof m.controller === "object" && m.controller !== null && !Array.isArray(m.controller)
        ? null
        : "controller must be an object",
  },
  set_gains: {
    required: ["type", "ref", "gains"],
    check: (m) => {
      const g = m.gains;
      if (typeof g !== "object" || g === null || Array.isArray(g)) {
        return "gains must be an object";
      }
      const entries = Object.entries(g as Record<string, unknown>);
      if (entries.length === 0) return "gains must not be empty";
      for (const [k, v] of entries) {
        if (typeof v !== "number") return `gain ${k} must be a number`;
      }
      return null;
    },
  },
  set_filter_weight: {
    required: ["type", "ref", "w"],
    check: (m) => (isNum(m.w) && m.w >= 0 && m.w <= 1 ? null : "w must be in [0, 1]"),
  },
  start: { required: ["type", "ref"], check: () => null },
  pause: { required: ["type", "ref"], check: () => null },
  reset: { required: ["type", "ref"], check: () => null },
  inject_disturbance: {
    required: ["type", "ref", "impulse"],
    check: (m) => (isNum(m.impulse) ? null : "impulse must be a number"),
  },
  set_added_mass: {
    required: ["type", "ref", "added_mass", "mount_height"],
    check: (m) =>
      isNum(m.added_mass) && (m.added_mass as number) >= 0 && isNum(m.mount_height)
        ? null
        : "added_mass must be a number >= 0 and mount_height a number",
  },
  get_run_log: { required: ["type", "ref"], check: () => null },
};

/**
 * Dependency-free mirror of the shared schema's clientMessage definition.
 * Kept in lockstep with the schema by a test comparing verdicts against
 * the Ajv validator.
 */
export const structuralClientValidator: Validator = (msg) => {
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    return "message must be an object";
  }
  const m = msg as Record<string, unknown>;
  const spec = CLIENT_FIELDS[m.type as string];
  if (typeof m.type !== "string" || spec === undefined) {
    return `unknown message type ${String(m.type)}`;
  }
  for (const field of spec.required) {
    if (!(field in m)) return `missing field ${field}`;
  }
  for (const key of Object.keys(m)) {
    if (!spec.required.includes(key)) return `unexpected field ${key}`;
  }
  if (!isRef(m.ref)) return "ref must be a string or integer";
  return spec.check(m);
};

export const RECORD_FIELDS: (keyof TelemetryRecord)[] = [
  "t",
  "theta_acc",
  "theta_gyro",
  "theta_filt",
  "omega",
  "u",
  "u_sat",
  "pwm_left",
  "pwm_right",
  "controller_id",
];

/** Light structural check of inbound server frames (full validation is the
 * server's job; the panel just refuses to crash on malformed input). */
export function parseServerMessage(line: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const m = msg as Record<string, unknown>;
  switch (m.type) {
    case "hello_ack":
      return isRef(m.ref) && Number.isInteger(m.version) ? (m as unknown as HelloAckMsg) : null;
    case "ack":
      return isRef(m.ref) ? (m as unknown as AckMsg) : null;
    case "error":
      return typeof m.reason === "string" ? (m as unknown as ErrorMsg) : null;
    case "telemetry": {
      if (!Number.isInteger(m.seq) || typeof m.record !== "object" || m.record === null) {
        return null;
      }
      const rec = m.record as Record<string, unknown>;
      for (const field of RECORD_FIELDS) {
        if (field === "controller_id") {
          if (typeof rec[field] !== "string") return null;
        } else if (typeof rec[field] !== "number") {
          return null;
        }
      }
      return m as unknown as TelemetryMsg;
    }
    case "run_complete":
      return typeof m.metrics === "object" && m.metrics !== null
        ? (m as unknown as RunCompleteMsg)
        : null;
    case "run_log":
      return isRef(m.ref) && typeof m.csv === "string" ? (m as unknown as RunLogMsg) : null;
    default:
      return null;
  }
}
