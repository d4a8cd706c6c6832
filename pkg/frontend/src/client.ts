/**
 * Protocol session on top of a line transport: handshake, ref/reply
 * correlation, telemetry dispatch with seq-gap detection, and reconnect
 * with exponential backoff.  Every outbound frame is checked against the
 * shared schema before it leaves; an invalid frame is a bug and throws.
 */

import {
  AckMsg,
  ClientMessage,
  ErrorMsg,
  HelloAckMsg,
  Ref,
  RunCompleteMsg,
  RunLogMsg,
  ServerMessage,
  TelemetryMsg,
  Validator,
  parseServerMessage,
  structuralClientValidator,
} from "./protocol.js";
import type { Transport } from "./transport.js";

export const PROTOCOL_VERSION = 1;

export type ConnectionState = "disconnected" | "connecting" | "connected";

export interface ClientOptions {
  validator?: Validator;
  /** initial reconnect delay [ms]; doubles up to maxBackoffMs */
  backoffMs?: number;
  maxBackoffMs?: number;
  /** sleep hook, injectable for tests */
  sleep?: (ms: number) => Promise<void>;
}

export interface TelemetryEvent {
  seq: number;
  record: TelemetryMsg["record"];
  /** number of messages lost since the previous one (0 = contiguous) */
  gap: number;
}

type Reply = AckMsg | ErrorMsg | RunLogMsg | HelloAckMsg;

/** Omit that distributes over the message union. */
type OutboundMessage = ClientMessage extends infer M
  ? M extends ClientMessage
    ? Omit<M, "ref">
    : never
  : never;

export class PanelClient {
  private transport: Transport | null = null;
  private readonly validator: Validator;
  private readonly backoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private nextRef = 0;
  private pending = new Map<Ref, (reply: Reply) => void>();
  private lastSeq: number | null = null;
  private closed = false;

  state: ConnectionState = "disconnected";
  onTelemetry: (ev: TelemetryEvent) => void = () => {};
  onRunComplete: (msg: RunCompleteMsg) => void = () => {};
  onServerError: (msg: ErrorMsg) => void = () => {};
  onStateChange: (state: ConnectionState) => void = () => {};

  constructor(
    private readonly connectTransport: () => Promise<Transport>,
    options: ClientOptions = {},
  ) {
    this.validator = options.validator ?? structuralClientValidator;
    this.backoffMs = options.backoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 10_000;
    this.sleep = options.sleep ?? ((ms) => new Promise((r) => setTimeout(r, ms)));
  }

  private setState(state: ConnectionState): void {
    this.state = state;
    this.onStateChange(state);
  }

  /** Connect and complete the hello/hello_ack handshake. */
  async connect(): Promise<void> {
    this.setState("connecting");
    this.transport = await this.connectTransport();
    this.transport.onLine((line) => this.ingest(line));
    this.transport.onClose(() => void this.handleDisconnect());
    const ack = await this.request({ type: "hello", version: PROTOCOL_VERSION });
    if (ack.type === "error") {
      throw new Error(`handshake rejected: ${ack.reason}`);
    }
    this.setState("connected");
  }

  /** Reconnect loop with exponential backoff; resolves once reconnected. */
  private async handleDisconnect(): Promise<void> {
    if (this.closed || this.state === "disconnected") return;
    this.setState("disconnected");
    this.pending.clear();
    let delay = this.backoffMs;
    while (!this.closed) {
      await this.sleep(delay);
      try {
        this.lastSeq = null; // a new run's seq starts over
        await this.connect();
        return;
      } catch {
        delay = Math.min(delay * 2, this.maxBackoffMs);
      }
    }
  }

  close(): void {
    this.closed = true;
    this.transport?.close();
    this.setState("disconnected");
  }

  /** Send one message (ref auto-assigned) and await its ack/error/reply. */
  request(msg: OutboundMessage): Promise<Reply> {
    const ref = this.nextRef++;
    const full = { ...msg, ref } as ClientMessage;
    const violation = this.validator(full);
    if (violation !== null) {
      return Promise.reject(new Error(`outbound message violates protocol: ${violation}`));
    }
    if (this.transport === null) {
      return Promise.reject(new Error("not connected"));
    }
    return new Promise((resolve) => {
      this.pending.set(ref, resolve);
      this.transport!.send(JSON.stringify(full));
    });
  }

  private ingest(line: string): void {
    const msg = parseServerMessage(line);
    if (msg === null) return; // malformed frame: ignore, never crash
    switch (msg.type) {
      case "telemetry": {
        const gap = this.lastSeq === null ? 0 : msg.seq - this.lastSeq - 1;
        this.lastSeq = msg.seq;
        this.onTelemetry({ seq: msg.seq, record: msg.record, gap: Math.max(0, gap) });
        return;
      }
      case "run_complete":
        this.onRunComplete(msg);
        return;
      case "hello_ack":
      case "ack":
      case "run_log": {
        const resolve = this.pending.get(msg.ref);
        if (resolve) {
          this.pending.delete(msg.ref);
          resolve(msg as Reply);
        }
        return;
      }
      case "error": {
        if (msg.ref !== null && msg.ref !== undefined && this.pending.has(msg.ref)) {
          const resolve = this.pending.get(msg.ref)!;
          this.pending.delete(msg.ref);
          resolve(msg);
        } else {
          this.onServerError(msg);
        }
        return;
      }
    }
  }

  /** Reset local seq tracking (a new run restarts numbering at 0). */
  resetSequence(): void {
    this.lastSeq = null;
  }
}

export type { ServerMessage };
