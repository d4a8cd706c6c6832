/**
 * The operator panel model: connection status, controller tabs with staged
 * gain edits (nothing is sent until Apply, and one Apply sends exactly one
 * set_gains message), filter weight, run controls, disturbance/added-mass
 * buttons, rolling chart buffers and the end-of-run metrics readout.
 *
 * The model is DOM-free; browser and test harnesses observe it through
 * plain fields and the client's events.
 */

import { PanelClient, ConnectionState, TelemetryEvent } from "./client.js";
import { ChannelBuffers } from "./buffers.js";
import type { RunMetrics, TelemetryRecord } from "./protocol.js";

export type ControllerTab = "pid" | "leadlag" | "flc";

const TAB_FIELDS: Record<ControllerTab, string[]> = {
  pid: ["kp", "ki", "kd"],
  leadlag: ["kc", "tau_lead", "alpha", "tau_lag", "beta"],
  flc: ["kp", "ki", "kd", "ku", "scale_e", "scale_de"],
};

const DEFAULT_GAINS: Record<ControllerTab, Record<string, number>> = {
  pid: { kp: 10.0, ki: 0.005, kd: 0.015 },
  leadlag: { kc: 3.25, tau_lead: 0.1095, alpha: 0.4494, tau_lag: 1.123, beta: 7.1439 },
  flc: { kp: 150, ki: 1.5, kd: 1, ku: 1, scale_e: 40, scale_de: 1.2 },
};

export interface GainField {
  name: string;
  staged: number;
  confirmed: number | null; // last server-acknowledged value
  dirty: boolean;
}

export class PanelModel {
  readonly buffers: ChannelBuffers;
  tab: ControllerTab = "pid";
  filterWeightStaged = 0.98;
  filterWeightConfirmed: number | null = null;
  connection: ConnectionState = "disconnected";
  banner: string | null = null;
  metrics: RunMetrics | null = null;
  lastRecord: TelemetryRecord | null = null;

  /** experiment-length / loop-rate fields; sent as part of load_scenario */
  runSettings = { duration: 30.0, control_rate: 200.0 };
  /** base scenario document the panel owns (params etc.) */
  scenarioBase: Record<string, unknown> = { params: { J_c: 0.005 } };

  private staged: Record<ControllerTab, Record<string, number>>;
  private confirmed: Record<ControllerTab, Record<string, number>>;

  constructor(
    private readonly client: PanelClient,
    capacity?: number,
  ) {
    this.buffers = new ChannelBuffers(capacity);
    this.staged = structuredClone(DEFAULT_GAINS);
    this.confirmed = { pid: {}, leadlag: {}, flc: {} };

    client.onStateChange = (state: ConnectionState) => {
      this.connection = state;
      this.banner = state === "connected" ? null : `connection ${state}…`;
    };
    client.onTelemetry = (ev: TelemetryEvent) => this.ingest(ev);
    client.onRunComplete = (msg) => {
      this.metrics = msg.metrics;
    };
    client.onServerError = (msg) => {
      this.banner = `server error: ${msg.reason}${msg.detail ? ` (${msg.detail})` : ""}`;
    };
  }

  private ingest(ev: TelemetryEvent): void {
    this.lastRecord = ev.record;
    this.buffers.push(ev.seq, ev.record, ev.gap);
  }

  // -- gain staging: edits stay local until apply --

  selectTab(tab: ControllerTab): void {
    this.tab = tab;
  }

  gainFields(tab: ControllerTab = this.tab): GainField[] {
    return TAB_FIELDS[tab].map((name) => ({
      name,
      staged: this.staged[tab][name],
      confirmed: this.confirmed[tab][name] ?? null,
      dirty: this.confirmed[tab][name] !== this.staged[tab][name],
    }));
  }

  stageGain(name: string, value: number, tab: ControllerTab = this.tab): void {
    if (!TAB_FIELDS[tab].includes(name)) {
      throw new Error(`gain ${name} does not exist on the ${tab} panel`);
    }
    this.staged[tab][name] = value;
  }

  /** One protocol message per apply; staged values become confirmed only
   * after the server's ack. */
  async applyGains(tab: ControllerTab = this.tab): Promise<boolean> {
    const gains = { ...this.staged[tab] };
    const reply = await this.client.request({ type: "set_gains", gains });
    if (reply.type === "ack") {
      this.confirmed[tab] = { ...gains };
      return true;
    }
    this.banner = `gains rejected: ${(reply as { reason?: string }).reason ?? "error"}`;
    return false;
  }

  /** Switch the active controller type (sends the staged configuration). */
  async applyController(tab: ControllerTab = this.tab): Promise<boolean> {
    const controller = { type: tab, ...this.staged[tab] };
    const reply = await this.client.request({ type: "set_controller", controller });
    if (reply.type === "ack") {
      this.confirmed[tab] = { ...this.staged[tab] };
      return true;
    }
    return false;
  }

  stageRunSetting(name: "duration" | "control_rate", value: number): void {
    if (!(value > 0)) throw new Error(`${name} must be positive`);
    this.runSettings[name] = value;
  }

  /** Push the panel-owned experiment configuration (length, loop rate,
   * filter weight, active controller) as one load_scenario message. */
  async applyScenario(): Promise<boolean> {
    const scenario = {
      ...this.scenarioBase,
      duration: this.runSettings.duration,
      control_rate: this.runSettings.control_rate,
      filter_weight: this.filterWeightStaged,
      controller: { type: this.tab, ...this.staged[this.tab] },
    };
    const reply = await this.client.request({ type: "load_scenario", scenario });
    if (reply.type === "ack") {
      this.confirmed[this.tab] = { ...this.staged[this.tab] };
      this.filterWeightConfirmed = this.filterWeightStaged;
      return true;
    }
    this.banner = `scenario rejected: ${(reply as { detail?: string }).detail ?? "error"}`;
    return false;
  }

  stageFilterWeight(w: number): void {
    this.filterWeightStaged = w;
  }

  async applyFilterWeight(): Promise<boolean> {
    const reply = await this.client.request({
      type: "set_filter_weight",
      w: this.filterWeightStaged,
    });
    if (reply.type === "ack") {
      this.filterWeightConfirmed = this.filterWeightStaged;
      return true;
    }
    return false;
  }

  // -- run controls --

  async start(): Promise<boolean> {
    this.metrics = null;
    this.client.resetSequence();
    const reply = await this.client.request({ type: "start" });
    return reply.type === "ack";
  }

  async pause(): Promise<boolean> {
    return (await this.client.request({ type: "pause" })).type === "ack";
  }

  async reset(): Promise<boolean> {
    const reply = await this.client.request({ type: "reset" });
    if (reply.type === "ack") {
      this.buffers.clear();
      this.metrics = null;
      this.client.resetSequence();
      return true;
    }
    return false;
  }

  async injectDisturbance(impulse: number): Promise<boolean> {
    return (
      (await this.client.request({ type: "inject_disturbance", impulse })).type === "ack"
    );
  }

  async setAddedMass(addedMass: number, mountHeight: number): Promise<boolean> {
    return (
      (
        await this.client.request({
          type: "set_added_mass",
          added_mass: addedMass,
          mount_height: mountHeight,
        })
      ).type === "ack"
    );
  }

  async downloadRunCsv(): Promise<string | null> {
    const reply = await this.client.request({ type: "get_run_log" });
    return reply.type === "run_log" ? reply.csv : null;
  }
}
