"""Live-session bridge between a running simulation and the front panel.

Transport is newline-delimited JSON frames over a TCP stream.  One session
drives one simulation; every incoming command is queued and drained by the
session loop only between control ticks, which is what guarantees that a
gain change never lands mid-tick.  Any number of read-only telemetry
subscribers may attach; a slow subscriber has its oldest telemetry dropped
(visible to it as seq gaps) while the persisted full-rate log is never
decimated or dropped.

Incoming messages are validated against the shared protocol schema
(protocol.schema.json) that the front panel also consumes.
"""

from __future__ import annotations

import asyncio
import json
from collections import deque
from dataclasses import dataclass, replace
from importlib import resources

import jsonschema

from . import controllers as ctl
from .sim import (
    ClosedLoopSim,
    Scenario,
    ScenarioError,
    SimulationAborted,
    controller_from_dict,
    scenario_from_dict,
    telemetry_csv_lines,
)
from .analysis import step_metrics

PROTOCOL_VERSION = 1
DEFAULT_DECIMATION = 4
DEFAULT_LIVE_BUFFER = 256

_SCHEMA = json.loads(resources.files("twsbr").joinpath("protocol.schema.json").read_text())
_CLIENT_VALIDATOR = jsonschema.Draft202012Validator(
    {"$ref": "#/$defs/clientMessage", "$defs": _SCHEMA["$defs"]}
)

IDLE, RUNNING, PAUSED, FINISHED = "idle", "running", "paused", "finished"

# Phases in which each command is accepted.
_ALLOWED_PHASES = {
    "hello": (IDLE, RUNNING, PAUSED, FINISHED),
    "load_scenario": (IDLE, FINISHED),
    "set_controller": (IDLE, RUNNING, PAUSED),
    "set_gains": (IDLE, RUNNING, PAUSED),
    "set_filter_weight": (IDLE, RUNNING, PAUSED),
    "start": (IDLE, PAUSED),
    "pause": (RUNNING,),
    "reset": (IDLE, RUNNING, PAUSED, FINISHED),
    "inject_disturbance": (RUNNING,),
    "set_added_mass": (IDLE, RUNNING, PAUSED),
    "get_run_log": (IDLE, RUNNING, PAUSED, FINISHED),
}


@dataclass(frozen=True)
class SessionState:
    """Protocol-level session state; `pending` carries one-shot effects the
    simulation loop applies at the next tick boundary."""

    phase: str = IDLE
    scenario: Scenario | None = None
    controller: object | None = None
    filter_weight: float | None = None
    seq: int = 0
    pending: tuple[tuple, ...] = ()


def _err(ref, reason: str, detail: str = "") -> dict:
    msg = {"type": "error", "ref": ref, "reason": reason}
    if detail:
        msg["detail"] = detail
    return msg


def _ack(ref) -> dict:
    return {"type": "ack", "ref": ref}


def validate_client_message(msg: object) -> str | None:
    """None when schema-valid, else a human-readable violation."""
    errors = sorted(_CLIENT_VALIDATOR.iter_errors(msg), key=lambda e: e.json_path)
    if not errors:
        return None
    return "; ".join(e.message for e in errors[:3])


def handle_message(session: SessionState, msg: dict) -> tuple[SessionState, list[dict]]:
    """Pure protocol transition: returns the new session state and the
    replies for the sending client.  Schema violations and invalid-phase
    commands leave the session untouched."""
    if not isinstance(msg, dict) or "type" not in msg:
        return session, [_err(None, "schema", "message must be an object with a type")]
    kind = msg["type"]
    ref = msg.get("ref")
    if kind not in _ALLOWED_PHASES:
        return session, [_err(ref, "unknown_type", f"unknown message type {kind!r}")]
    violation = validate_client_message(msg)
    if violation is not None:
        return session, [_err(ref, "schema", violation)]
    if session.phase not in _ALLOWED_PHASES[kind]:
        return session, [_err(ref, "invalid_phase",
                              f"{kind} not allowed in phase {session.phase}")]

    if kind == "hello":
        return session, [{"type": "hello_ack", "ref": ref, "version": PROTOCOL_VERSION}]

    if kind == "load_scenario":
        try:
            scenario = scenario_from_dict(msg["scenario"])
        except ScenarioError as exc:
            return session, [_err(ref, "bad_scenario", str(exc))]
        new = SessionState(phase=IDLE, scenario=scenario, controller=scenario.controller,
                           filter_weight=scenario.filter_weight)
        return new, [_ack(ref)]

    if session.scenario is None and kind not in ("reset",):
        return session, [_err(ref, "no_scenario", "load a scenario first")]

    if kind == "set_controller":
        try:
            config = controller_from_dict(msg["controller"])
        except ScenarioError as exc:
            return session, [_err(ref, "bad_scenario", str(exc))]
        return replace(session, controller=config), [_ack(ref)]

    if kind == "set_gains":
        try:
            config = _merge_gains(session.controller, msg["gains"])
        except ValueError as exc:
            return session, [_err(ref, "bad_gains", str(exc))]
        return replace(session, controller=config), [_ack(ref)]

    if kind == "set_filter_weight":
        return replace(session, filter_weight=float(msg["w"])), [_ack(ref)]

    if kind == "start":
        if session.phase == IDLE:
            return replace(session, phase=RUNNING, seq=0,
                           pending=session.pending + (("begin",),)), [_ack(ref)]
        return replace(session, phase=RUNNING), [_ack(ref)]  # resume from paused

    if kind == "pause":
        return replace(session, phase=PAUSED), [_ack(ref)]

    if kind == "reset":
        return SessionState(
            phase=IDLE, scenario=session.scenario,
            controller=session.scenario.controller if session.scenario else None,
            filter_weight=session.scenario.filter_weight if session.scenario else None,
            pending=(("discard",),),
        ), [_ack(ref)]

    if kind == "inject_disturbance":
        return replace(session,
                       pending=session.pending + (("disturbance", float(msg["impulse"])),)), [
            _ack(ref)
        ]

    if kind == "set_added_mass":
        am, mh = float(msg["added_mass"]), float(msg["mount_height"])
        if session.phase == IDLE:
            scenario = replace(session.scenario, added_mass=am, added_mass_height=mh)
            return replace(session, scenario=scenario), [_ack(ref)]
        return replace(session, pending=session.pending + (("added_mass", am, mh),)), [_ack(ref)]

    if kind == "get_run_log":
        # The loop owner substitutes the CSV body; the pure transition only
        # signals the request.
        return session, [{"type": "run_log", "ref": ref, "csv": None}]

    raise AssertionError(f"unhandled message type {kind}")


def _merge_gains(config, gains: dict):
    if config is None:
        raise ValueError("no active controller")
    allowed = {
        ctl.PidGains: ("kp", "ki", "kd"),
        ctl.FlcConfig: ("kp", "ki", "kd", "ku", "scale_e", "scale_de"),
        ctl.LeadLagParams: ("kc", "tau_lead", "alpha", "tau_lag", "beta"),
    }[type(config)]
    unknown = set(gains) - set(allowed)
    if unknown:
        raise ValueError(
            f"gain field(s) {sorted(unknown)} not applicable to {type(config).__name__}"
        )
    return replace(config, **{k: float(v) for k, v in gains.items()})


# ---------------------------------------------------------------------------
# asyncio transport


class _Connection:
    """One client.  While the transport accepts writes, frames go out
    synchronously (a subscriber that keeps up can never be dropped by
    scheduling jitter).  Once the transport saturates, frames queue in an
    outbox drained by the writer task, with drop-oldest applied to
    telemetry only — control replies are never dropped."""

    WATERMARK = 16384

    def __init__(self, writer: asyncio.StreamWriter, live_buffer: int):
        self.writer = writer
        self.outbox: deque = deque()
        self.kick = asyncio.Event()
        self.live_buffer = live_buffer
        self._droppable = 0
        self.closed = False

    def _transport_ready(self) -> bool:
        try:
            return self.writer.transport.get_write_buffer_size() < self.WATERMARK
        except (AttributeError, NotImplementedError):
            return True

    def send(self, msg: dict, droppable: bool = False) -> None:
        if self.closed:
            return
        data = json.dumps(msg).encode() + b"\n"
        if not self.outbox and self._transport_ready():
            try:
                self.writer.write(data)
            except ConnectionError:
                self.closed = True
            return
        if droppable:
            if self._droppable >= self.live_buffer:
                for i, (_, d) in enumerate(self.outbox):
                    if d:
                        del self.outbox[i]
                        self._droppable -= 1
                        break
            self._droppable += 1
        self.outbox.append((data, droppable))
        self.kick.set()

    async def writer_task(self) -> None:
        try:
            while not self.closed:
                await self.kick.wait()
                self.kick.clear()
                while self.outbox and not self.closed:
                    if not self._transport_ready():
                        await self.writer.drain()
                        continue
                    data, droppable = self.outbox.popleft()
                    if droppable:
                        self._droppable -= 1
                    self.writer.write(data)
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self.closed = True


class PanelServer:
    """Hosts one session: a command queue, the simulation loop, and any
    number of telemetry subscribers."""

    def __init__(
        self,
        scenario: Scenario,
        speed: float = 1.0,
        decimation: int = DEFAULT_DECIMATION,
        live_buffer: int = DEFAULT_LIVE_BUFFER,
        sndbuf: int | None = None,
    ):
        if decimation < 1:
            raise ValueError("decimation must be at least 1")
        self.session = SessionState(phase=IDLE, scenario=scenario,
                                    controller=scenario.controller,
                                    filter_weight=scenario.filter_weight)
        self.speed = speed
        self.decimation = decimation
        self.live_buffer = live_buffer
        self.sndbuf = sndbuf  # per-subscriber kernel send buffer cap
        self.connections: set[_Connection] = set()
        self.commands: asyncio.Queue = asyncio.Queue()
        self.sim: ClosedLoopSim | None = None
        self._stop = asyncio.Event()
        self._server: asyncio.base_events.Server | None = None
        self.port: int | None = None

    # -- lifecycle --

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> None:
        self._server = await asyncio.start_server(self._on_client, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._loop_task = asyncio.create_task(self._session_loop())

    async def stop(self) -> None:
        self._stop.set()
        self._loop_task.cancel()
        try:
            await self._loop_task
        except asyncio.CancelledError:
            pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self) -> None:
        await self._stop.wait()

    # -- per-client plumbing --

    async def _on_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            writer.transport.set_write_buffer_limits(high=16384)
            if self.sndbuf is not None:
                import socket as socket_mod

                sock = writer.get_extra_info("socket")
                if sock is not None:
                    sock.setsockopt(socket_mod.SOL_SOCKET, socket_mod.SO_SNDBUF, self.sndbuf)
        except (AttributeError, NotImplementedError, OSError):
            pass
        conn = _Connection(writer, self.live_buffer)
        self.connections.add(conn)
        wtask = asyncio.create_task(conn.writer_task())
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError as exc:
                    conn.send(_err(None, "schema", f"invalid JSON frame: {exc.msg}"))
                    continue
                await self.commands.put((msg, conn))
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self.connections.discard(conn)
            conn.closed = True
            wtask.cancel()
            try:
                writer.close()
            except ConnectionError:
                pass

    # -- the session loop: commands drain only at tick boundaries --

    async def _session_loop(self) -> None:
        loop = asyncio.get_running_loop()
        next_deadline: float | None = None
        while True:
            drained = False
            while True:
                try:
                    msg, conn = self.commands.get_nowait()
                except asyncio.QueueEmpty:
                    break
                drained = True
                self._apply(msg, conn)
            if self.session.phase == RUNNING and self.sim is not None and not self.sim.done:
                now = loop.time()
                if self.speed > 0:
                    if next_deadline is None:
                        next_deadline = now
                    delay = next_deadline - now
                    next_deadline += (1.0 / self.sim.scenario.control_rate) / self.speed
                    # always yield, even when behind schedule, so reader and
                    # writer tasks are never starved by a hot loop
                    await asyncio.sleep(delay if delay > 0 else 0)
                else:
                    await asyncio.sleep(0)
                self._tick()
            else:
                next_deadline = None
                if not drained:
                    try:
                        msg, conn = await asyncio.wait_for(self.commands.get(), timeout=0.1)
                    except asyncio.TimeoutError:
                        continue
                    self._apply(msg, conn)

    def _apply(self, msg: dict, conn: _Connection) -> None:
        old = self.session
        new, replies = handle_message(old, msg)
        self.session = new
        self._run_effects(old, new)
        for reply in replies:
            if reply.get("type") == "run_log" and reply.get("csv") is None:
                records = self.sim.records if self.sim is not None else []
                reply = dict(reply, csv="\n".join(telemetry_csv_lines(records)) + "\n")
            conn.send(reply)

    def _run_effects(self, old: SessionState, new: SessionState) -> None:
        pending = list(new.pending)
        self.session = replace(new, pending=())
        for effect in pending:
            kind = effect[0]
            if kind == "begin":
                self.sim = ClosedLoopSim(new.scenario)
                if new.controller is not None:
                    self.sim.set_controller(new.controller)
                if new.filter_weight is not None:
                    self.sim.set_filter_weight(new.filter_weight)
            elif kind == "discard":
                self.sim = None
            elif kind == "disturbance" and self.sim is not None:
                self.sim.inject_disturbance(effect[1])
            elif kind == "added_mass" and self.sim is not None:
                self.sim.set_added_mass(effect[1], effect[2])
        if self.sim is not None:
            if new.controller is not None and new.controller is not old.controller:
                self.sim.set_controller(new.controller)
            if new.filter_weight is not None and new.filter_weight != old.filter_weight:
                self.sim.set_filter_weight(new.filter_weight)

    def _tick(self) -> None:
        assert self.sim is not None
        try:
            record = self.sim.tick()
        except SimulationAborted as exc:
            self.session = replace(self.session, phase=FINISHED)
            self._broadcast(_err(None, "runtime", str(exc)), droppable=False)
            return
        if (self.sim.tick_index - 1) % self.decimation == 0:
            msg = {
                "type": "telemetry",
                "seq": self.session.seq,
                "record": {
                    "t": record.t,
                    "theta_acc": record.theta_acc,
                    "theta_gyro": record.theta_gyro,
                    "theta_filt": record.theta_filt,
                    "omega": record.omega,
                    "u": record.u,
                    "u_sat": record.u_sat,
                    "pwm_left": record.pwm_left,
                    "pwm_right": record.pwm_right,
                    "controller_id": record.controller_id,
                },
            }
            self.session = replace(self.session, seq=self.session.seq + 1)
            self._broadcast(msg, droppable=True)
        if self.sim.done:
            self.session = replace(self.session, phase=FINISHED)
            self._broadcast(self._completion_message(), droppable=False)

    def _completion_message(self) -> dict:
        records = self.sim.records
        dt = 1.0 / self.sim.scenario.control_rate
        m = step_metrics([r.t for r in records], [r.theta_filt for r in records],
                         target=0.0, band_pct=2.0)
        effort = float(sum(abs(r.u_sat) for r in records) * dt)
        return {
            "type": "run_complete",
            "metrics": {
                "settling_time": m.settling_time,
                "overshoot_pct": m.overshoot_pct,
                "steady_state_error": m.steady_state_error,
                "peak_time": m.peak_time,
                "settled": m.settled,
                "effort": effort,
            },
        }

    def _broadcast(self, msg: dict, droppable: bool) -> None:
        for conn in list(self.connections):
            conn.send(msg, droppable=droppable)


async def serve(
    scenario: Scenario,
    host: str = "127.0.0.1",
    port: int = 7340,
    speed: float = 1.0,
    decimation: int = DEFAULT_DECIMATION,
    live_buffer: int = DEFAULT_LIVE_BUFFER,
    sndbuf: int | None = None,
) -> None:
    server = PanelServer(scenario, speed=speed, decimation=decimation,
                         live_buffer=live_buffer, sndbuf=sndbuf)
    await server.start(host=host, port=port)
    print(f"listening on {host}:{server.port}", flush=True)
    try:
        await server.serve_forever()
    finally:
        await server.stop()
