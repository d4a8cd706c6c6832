/** Bounded rolling buffers backing the live charts.  Capacity is fixed at
 * construction; pushing beyond it evicts the oldest point, so memory stays
 * bounded under arbitrarily long sessions. */

import type { TelemetryRecord } from "./protocol.js";

export const DEFAULT_CAPACITY = 3000;

export interface Point {
  t: number;
  v: number;
}

export class RingBuffer {
  private data: Point[] = [];
  private start = 0;

  constructor(readonly capacity: number = DEFAULT_CAPACITY) {
    if (capacity < 1) throw new Error("capacity must be positive");
  }

  push(t: number, v: number): void {
    if (this.data.length < this.capacity) {
      this.data.push({ t, v });
    } else {
      this.data[this.start] = { t, v };
      this.start = (this.start + 1) % this.capacity;
    }
  }

  get length(): number {
    return this.data.length;
  }

  toArray(): Point[] {
    return this.data.slice(this.start).concat(this.data.slice(0, this.start));
  }

  last(): Point | undefined {
    if (this.data.length === 0) return undefined;
    const idx = (this.start + this.data.length - 1) % this.data.length;
    return this.data[idx];
  }

  clear(): void {
    this.data = [];
    this.start = 0;
  }
}

export interface GapMarker {
  /** simulated time of the first record after the gap */
  t: number;
  /** seq of that record */
  seq: number;
  /** how many live messages were dropped */
  missing: number;
}

export const CHART_CHANNELS = [
  "theta_acc",
  "theta_gyro",
  "theta_filt",
  "omega",
  "u",
  "u_sat",
  "pwm_left",
  "pwm_right",
] as const;

export type ChannelName = (typeof CHART_CHANNELS)[number];

export class ChannelBuffers {
  readonly channels: Record<ChannelName, RingBuffer>;
  readonly gaps: GapMarker[] = [];
  private readonly maxGaps: number;

  constructor(capacity: number = DEFAULT_CAPACITY, maxGaps = 100) {
    this.maxGaps = maxGaps;
    this.channels = Object.fromEntries(
      CHART_CHANNELS.map((name) => [name, new RingBuffer(capacity)]),
    ) as Record<ChannelName, RingBuffer>;
  }

  push(seq: number, record: TelemetryRecord, gap: number): void {
    if (gap > 0) {
      this.gaps.push({ t: record.t, seq, missing: gap });
      if (this.gaps.length > this.maxGaps) this.gaps.shift();
    }
    for (const name of CHART_CHANNELS) {
      this.channels[name].push(record.t, record[name] as number);
    }
  }

  clear(): void {
    for (const name of CHART_CHANNELS) this.channels[name].clear();
    this.gaps.length = 0;
  }
}
