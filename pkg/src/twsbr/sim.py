"""Closed-loop scenario engine: 30 s runs at a 200 Hz control rate with
physics substepping, controller comparison, and added-mass robustness.

A Scenario is a plain value object loadable from a strict JSON document
(unknown keys are rejected).  Runs are fully deterministic: the IMU noise
stream is keyed by (seed, tick index), so identical scenarios produce
byte-identical telemetry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import controllers as ctl
from .analysis import StepMetrics, step_metrics
from .plant import (
    DEFAULT_J_C,
    PlantState,
    RobotParams,
    WheelTorque,
    rk4_step,
)
from .sensors import (
    DEFAULT_FILTER_WEIGHT,
    FilterState,
    ImuConfig,
    complementary_filter,
    sample_imu,
)

TELEMETRY_HEADER = "t,theta_acc,theta_gyro,theta_filt,omega,u,u_sat,pwm_left,pwm_right"

# Default actuation calibration: torque_calibration * tau_max / 255 = 1, so
# one control count commands 1 N*m per wheel (2 N*m total).  The paper's
# controller gains were designed directly against the state-space model's
# torque input, which this calibration preserves; see README.
DEFAULT_TAU_MAX = 0.05
DEFAULT_TORQUE_CALIBRATION = 5100.0

ControllerConfig = ctl.PidGains | ctl.LeadLagParams | ctl.FlcConfig


class ScenarioError(ValueError):
    """Configuration rejected; message carries the offending field path."""


@dataclass(frozen=True)
class Scenario:
    params: RobotParams
    imu: ImuConfig = ImuConfig()
    controller: ControllerConfig = ctl.PidGains(kp=10.0, ki=0.005, kd=0.015)
    filter_weight: float = DEFAULT_FILTER_WEIGHT
    initial_state: PlantState = PlantState(theta_p=0.1)
    duration: float = 30.0
    control_rate: float = 200.0
    substeps: int = 10
    added_mass: float = 0.0
    added_mass_height: float = 0.04
    disturbances: tuple[tuple[float, float], ...] = ()  # (time [s], torque impulse [N*m*s])
    tau_max: float = DEFAULT_TAU_MAX
    torque_calibration: float = DEFAULT_TORQUE_CALIBRATION
    act_on_true_theta: bool = False

    def __post_init__(self) -> None:
        if self.duration <= 0 or self.control_rate <= 0:
            raise ScenarioError("duration and control_rate must be positive")
        if self.substeps < 1:
            raise ScenarioError("substeps must be at least 1")
        if not 0.0 <= self.filter_weight <= 1.0:
            raise ScenarioError("filter_weight must be in [0, 1]")
        if self.added_mass < 0:
            raise ScenarioError("added_mass must be non-negative")

    @property
    def ticks(self) -> int:
        return int(math.floor(self.duration * self.control_rate))

    def effective_params(self) -> RobotParams:
        if self.added_mass > 0.0:
            return apply_mass_uncertainty(self.params, self.added_mass, self.added_mass_height)
        return self.params


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    theta_acc: float
    theta_gyro: float  # pure gyro integration channel
    theta_filt: float
    omega: float
    u: float
    u_sat: float
    pwm_left: int
    pwm_right: int
    controller_id: str


@dataclass(frozen=True)
class RunResult:
    telemetry: tuple[TelemetryRecord, ...]
    metrics: StepMetrics | None
    final_state: PlantState
    settled: bool
    aborted: bool = False
    abort_reason: str | None = None


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    metrics: StepMetrics | None
    effort: float | None  # sum |u_sat| dt over the run
    error: str | None = None


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]


# ---------------------------------------------------------------------------
# Controller runtimes


class ControllerRuntime:
    """Owns one controller's mutable state inside a simulation loop."""

    def __init__(self, config: ControllerConfig, rate: float):
        self.rate = rate
        self._install(config)

    def _install(self, config: ControllerConfig) -> None:
        self.config = config
        if isinstance(config, ctl.PidGains):
            self._state = ctl.PidState()
        elif isinstance(config, ctl.FlcConfig):
            self._state = ctl.PidState()
        elif isinstance(config, ctl.LeadLagParams):
            self._chain = ctl.discretize_tustin(ctl.leadlag_tf(config), self.rate)
        else:
            raise ScenarioError(f"unsupported controller config {type(config).__name__}")

    def step(self, error: float, dt: float) -> float:
        cfg = self.config
        if isinstance(cfg, ctl.PidGains):
            u, self._state = ctl.pid_step(cfg, self._state, error, dt)
        elif isinstance(cfg, ctl.FlcConfig):
            u, self._state = ctl.flc_step(cfg, error, self._state, dt)
        else:
            u, self._chain = ctl.biquad_step(self._chain, error)
        return u

    def swap(self, config: ControllerConfig) -> None:
        """Replace the controller between ticks.  Same-type PID/FLC swaps
        keep the integrator and error history; anything else restarts the
        new controller from rest."""
        if isinstance(config, (ctl.PidGains, ctl.FlcConfig)) and type(config) is type(self.config):
            self.config = config
        else:
            self._install(config)

    @property
    def controller_id(self) -> str:
        return controller_id(self.config)


def controller_id(config: ControllerConfig) -> str:
    if isinstance(config, ctl.PidGains):
        return f"pid[kp={config.kp:g},ki={config.ki:g},kd={config.kd:g}]"
    if isinstance(config, ctl.LeadLagParams):
        return (
            f"leadlag[kc={config.kc:g},tl={config.tau_lead:g},a={config.alpha:g},"
            f"tg={config.tau_lag:g},b={config.beta:g}]"
        )
    return (
        f"flc[kp={config.kp:g},ki={config.ki:g},kd={config.kd:g},ku={config.ku:g},"
        f"{config.defuzz}]"
    )


# ---------------------------------------------------------------------------
# The closed-loop engine


class SimulationAborted(RuntimeError):
    pass


class ClosedLoopSim:
    """Tick-by-tick closed loop; commands (gain swaps, disturbances, mass
    changes) take effect only between ticks, never inside one."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.effective_params()
        self.state = scenario.initial_state
        self.controller = ControllerRuntime(scenario.controller, scenario.control_rate)
        self.filter: FilterState | None = None
        self.records: list[TelemetryRecord] = []
        self.tick_index = 0
        self.total_ticks = scenario.ticks
        self._theta_gyro = 0.0
        self._extra_impulse = 0.0
        self._filter_weight = scenario.filter_weight

    @property
    def done(self) -> bool:
        return self.tick_index >= self.total_ticks

    # -- commands (tick-boundary only by construction) --

    def set_controller(self, config: ControllerConfig) -> None:
        self.controller.swap(config)

    def set_filter_weight(self, w: float) -> None:
        if not 0.0 <= w <= 1.0:
            raise ScenarioError("filter weight must be in [0, 1]")
        self._filter_weight = w
        if self.filter is not None:
            self.filter = FilterState(theta_filt=self.filter.theta_filt, w=w)

    def inject_disturbance(self, impulse: float) -> None:
        self._extra_impulse += impulse

    def set_added_mass(self, added_mass: float, mount_height: float) -> None:
        """Re-derive the plant from the scenario's base params (absolute,
        not cumulative)."""
        self.params = (
            apply_mass_uncertainty(self.scenario.params, added_mass, mount_height)
            if added_mass > 0.0
            else self.scenario.params
        )

    # -- the loop --

    def tick(self) -> TelemetryRecord:
        if self.done:
            raise SimulationAborted("run already complete")
        s = self.scenario
        dt = 1.0 / s.control_rate
        t = self.tick_index * dt

        try:
            reading = sample_imu(self.state, s.imu, t, self.tick_index)
            if self.filter is None:
                # bring-up: seed the estimate from the first accelerometer sample
                self.filter = FilterState(theta_filt=reading.theta_acc, w=self._filter_weight)
            else:
                self.filter = complementary_filter(self.filter, reading, dt)
            self._theta_gyro += reading.omega_gyro * dt

            feedback = self.state.theta_p if s.act_on_true_theta else self.filter.theta_filt
            error = 0.0 - feedback
            u = self.controller.step(error, dt)
            action = ctl.saturate_to_pwm(u)

            per_wheel = s.torque_calibration * (action.u_sat / 255.0) * s.tau_max
            impulse = self._extra_impulse + sum(
                imp for (ti, imp) in s.disturbances if t <= ti < t + dt
            )
            self._extra_impulse = 0.0
            per_wheel += 0.5 * impulse / dt

            record = TelemetryRecord(
                t=t,
                theta_acc=reading.theta_acc,
                theta_gyro=self._theta_gyro,
                theta_filt=self.filter.theta_filt,
                omega=reading.omega_gyro,
                u=action.u,
                u_sat=action.u_sat,
                pwm_left=action.pwm_magnitude,
                pwm_right=action.pwm_magnitude,
                controller_id=self.controller.controller_id,
            )

            torque = WheelTorque(tau_l=per_wheel, tau_r=per_wheel)
            sub_dt = dt / s.substeps
            state = self.state
            for _ in range(s.substeps):
                state = rk4_step(self.params, state, torque, sub_dt)
            self.state = state
        except Exception as exc:  # singular mass matrix, controller failure
            raise SimulationAborted(str(exc)) from exc

        self.records.append(record)
        self.tick_index += 1
        return record


def run_closed_loop(
    scenario: Scenario, on_record: Callable[[TelemetryRecord], None] | None = None
) -> RunResult:
    """Run a scenario to completion (or abort), returning telemetry plus
    regulation metrics computed from the stored records."""
    sim = ClosedLoopSim(scenario)
    aborted = False
    reason = None
    while not sim.done:
        try:
            record = sim.tick()
        except SimulationAborted as exc:
            aborted = True
            reason = str(exc)
            break
        if on_record is not None:
            on_record(record)

    metrics = None
    settled = False
    if len(sim.records) >= 2:
        t = np.array([r.t for r in sim.records])
        y = np.array([r.theta_filt for r in sim.records])
        metrics = step_metrics(t, y, target=0.0, band_pct=2.0)
        settled = metrics.settled
    return RunResult(
        telemetry=tuple(sim.records),
        metrics=metrics,
        final_state=sim.state.wrapped(),  # tilt wraps to (-pi, pi] at reporting
        settled=settled,
        aborted=aborted,
        abort_reason=reason,
    )


def apply_mass_uncertainty(
    params: RobotParams, added_mass: float, mount_height: float
) -> RobotParams:
    """Attach a point mass at the given height above the axle: combined
    mass, new COM distance, and parallel-axis recomposition of J_c about
    the new COM."""
    if added_mass < 0:
        raise ValueError("added_mass must be non-negative")
    if added_mass == 0:
        return params
    m_new = params.m + added_mass
    l_new = (params.m * params.l + added_mass * mount_height) / m_new
    J_new = (
        params.J_c
        + added_mass * (mount_height - l_new) ** 2
        + params.m * (params.l - l_new) ** 2
    )
    return replace(params, m=m_new, l=l_new, J_c=J_new)


def compare_controllers(
    base: Scenario, configs: Sequence[ControllerConfig]
) -> ComparisonReport:
    """Run each controller on the identical scenario (same seed); rows are
    ordered as given and a failing run does not abort the others."""
    if len(configs) < 2:
        raise ValueError("need at least two controllers to compare")
    rows = []
    for config in configs:
        scenario = replace(base, controller=config)
        try:
            result = run_closed_loop(scenario)
        except Exception as exc:
            rows.append(ComparisonRow(label=controller_id(config), metrics=None,
                                      effort=None, error=str(exc)))
            continue
        if result.aborted:
            rows.append(ComparisonRow(label=controller_id(config), metrics=result.metrics,
                                      effort=None, error=result.abort_reason))
            continue
        dt = 1.0 / scenario.control_rate
        effort = float(sum(abs(r.u_sat) for r in result.telemetry) * dt)
        rows.append(ComparisonRow(label=controller_id(config), metrics=result.metrics,
                                  effort=effort, error=None))
    return ComparisonReport(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Telemetry CSV


def format_float(x: float) -> str:
    return f"{x:.9g}"


def telemetry_csv_lines(records: Sequence[TelemetryRecord]):
    yield TELEMETRY_HEADER
    for r in records:
        yield ",".join(
            [
                format_float(r.t),
                format_float(r.theta_acc),
                format_float(r.theta_gyro),
                format_float(r.theta_filt),
                format_float(r.omega),
                format_float(r.u),
                format_float(r.u_sat),
                str(r.pwm_left),
                str(r.pwm_right),
            ]
        )


def write_telemetry_csv(records: Sequence[TelemetryRecord], path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        for line in telemetry_csv_lines(records):
            fh.write(line)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Scenario JSON (strict: unknown keys rejected at every level)


def _take(d: dict, allowed: dict[str, object], path: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ScenarioError(f"{path}: unknown key(s) {sorted(unknown)}")
    out = dict(allowed)
    out.update(d)
    return out


def _num(d: dict, key: str, path: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def controller_from_dict(d: dict, path: str = "controller") -> ControllerConfig:
    if not isinstance(d, dict) or "type" not in d:
        raise ScenarioError(f"{path}: expected an object with a 'type' field")
    kind = d["type"]
    body = {k: v for k, v in d.items() if k != "type"}
    try:
        if kind == "pid":
            full = _take(body, {"kp": 0.0, "ki": 0.0, "kd": 0.0}, path)
            return ctl.PidGains(kp=_num(full, "kp", path), ki=_num(full, "ki", path),
                                kd=_num(full, "kd", path))
        if kind == "leadlag":
            defaults = ctl.LeadLagParams()
            full = _take(body, {"kc": defaults.kc, "tau_lead": defaults.tau_lead,
                                "alpha": defaults.alpha, "tau_lag": defaults.tau_lag,
                                "beta": defaults.beta}, path)
            return ctl.LeadLagParams(
                kc=_num(full, "kc", path), tau_lead=_num(full, "tau_lead", path),
                alpha=_num(full, "alpha", path), tau_lag=_num(full, "tau_lag", path),
                beta=_num(full, "beta", path),
            )
        if kind == "flc":
            defaults = ctl.FlcConfig()
            full = _take(body, {"kp": defaults.kp, "ki": defaults.ki, "kd": defaults.kd,
                                "ku": defaults.ku, "defuzz": defaults.defuzz,
                                "scale_e": defaults.scale_e, "scale_de": defaults.scale_de,
                                "rule_table": None}, path)
            table = full["rule_table"]
            if table is None:
                table = ctl.DEFAULT_RULE_TABLE
            else:
                table = tuple(tuple(int(x) for x in row) for row in table)
            return ctl.FlcConfig(
                kp=_num(full, "kp", path), ki=_num(full, "ki", path),
                kd=_num(full, "kd", path), ku=_num(full, "ku", path),
                defuzz=str(full["defuzz"]), scale_e=_num(full, "scale_e", path),
                scale_de=_num(full, "scale_de", path), rule_table=table,
            )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"{path}: {exc}") from exc
    raise ScenarioError(f"{path}.type: unknown controller type {kind!r}")


def controller_to_dict(config: ControllerConfig) -> dict:
    if isinstance(config, ctl.PidGains):
        return {"type": "pid", "kp": config.kp, "ki": config.ki, "kd": config.kd}
    if isinstance(config, ctl.LeadLagParams):
        return {"type": "leadlag", "kc": config.kc, "tau_lead": config.tau_lead,
                "alpha": config.alpha, "tau_lag": config.tau_lag, "beta": config.beta}
    return {"type": "flc", "kp": config.kp, "ki": config.ki, "kd": config.kd,
            "ku": config.ku, "defuzz": config.defuzz, "scale_e": config.scale_e,
            "scale_de": config.scale_de,
            "rule_table": [list(row) for row in config.rule_table]}


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: expected a JSON object")
    full = _take(
        doc,
        {
            "params": None, "imu": {}, "controller": None, "filter_weight": DEFAULT_FILTER_WEIGHT,
            "initial_state": {}, "duration": 30.0, "control_rate": 200.0, "substeps": 10,
            "added_mass": 0.0, "added_mass_height": 0.04, "disturbances": [],
            "tau_max": DEFAULT_TAU_MAX, "torque_calibration": DEFAULT_TORQUE_CALIBRATION,
            "act_on_true_theta": False,
        },
        "scenario",
    )
    if full["params"] is None:
        raise ScenarioError("scenario.params: required (J_c has no default)")

    p = _take(full["params"], {"m": 0.75, "M": 0.08, "l": 0.02, "R": 0.035,
                               "J_w": None, "J_c": None, "mu0": 0.1, "mu1": 0.0,
                               "g": 9.81}, "params")
    if p["J_c"] is None:
        raise ScenarioError("params.J_c: required (no physically-derivable default; "
                            f"the documented example value is {DEFAULT_J_C})")
    try:
        params = RobotParams(
            m=_num(p, "m", "params"), M=_num(p, "M", "params"), l=_num(p, "l", "params"),
            R=_num(p, "R", "params"),
            J_w=None if p["J_w"] is None else _num(p, "J_w", "params"),
            J_c=_num(p, "J_c", "params"), mu0=_num(p, "mu0", "params"),
            mu1=_num(p, "mu1", "params"), g=_num(p, "g", "params"),
        )
    except ValueError as exc:
        raise ScenarioError(f"params: {exc}") from exc

    i = _take(full["imu"], {"accel_noise_std": 0.0, "gyro_noise_std": 0.0,
                            "gyro_bias": 0.0, "seed": 0}, "imu")
    try:
        imu = ImuConfig(accel_noise_std=_num(i, "accel_noise_std", "imu"),
                        gyro_noise_std=_num(i, "gyro_noise_std", "imu"),
                        gyro_bias=_num(i, "gyro_bias", "imu"), seed=int(i["seed"]))
    except ValueError as exc:
        raise ScenarioError(f"imu: {exc}") from exc

    controller = (
        controller_from_dict(full["controller"]) if full["controller"] is not None
        else ctl.PidGains(kp=10.0, ki=0.005, kd=0.015)
    )

    st = _take(full["initial_state"], {"x": 0.0, "theta_p": 0.0, "v": 0.0, "omega_p": 0.0},
               "initial_state")
    initial = PlantState(x=_num(st, "x", "initial_state"),
                         theta_p=_num(st, "theta_p", "initial_state"),
                         v=_num(st, "v", "initial_state"),
                         omega_p=_num(st, "omega_p", "initial_state"))

    dist = full["disturbances"]
    if not isinstance(dist, list) or any(not isinstance(dv, (list, tuple)) or len(dv) != 2
                                         for dv in dist):
        raise ScenarioError("disturbances: expected a list of [time, impulse] pairs")

    try:
        return Scenario(
            params=params, imu=imu, controller=controller,
            filter_weight=_num(full, "filter_weight", "scenario"),
            initial_state=initial,
            duration=_num(full, "duration", "scenario"),
            control_rate=_num(full, "control_rate", "scenario"),
            substeps=int(full["substeps"]),
            added_mass=_num(full, "added_mass", "scenario"),
            added_mass_height=_num(full, "added_mass_height", "scenario"),
            disturbances=tuple((float(a), float(b)) for a, b in dist),
            tau_max=_num(full, "tau_max", "scenario"),
            torque_calibration=_num(full, "torque_calibration", "scenario"),
            act_on_true_theta=bool(full["act_on_true_theta"]),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"scenario: {exc}") from exc


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "params": {"m": s.params.m, "M": s.params.M, "l": s.params.l, "R": s.params.R,
                   "J_w": s.params.J_w, "J_c": s.params.J_c, "mu0": s.params.mu0,
                   "mu1": s.params.mu1, "g": s.params.g},
        "imu": {"accel_noise_std": s.imu.accel_noise_std, "gyro_noise_std": s.imu.gyro_noise_std,
                "gyro_bias": s.imu.gyro_bias, "seed": s.imu.seed},
        "controller": controller_to_dict(s.controller),
        "filter_weight": s.filter_weight,
        "initial_state": {"x": s.initial_state.x, "theta_p": s.initial_state.theta_p,
                          "v": s.initial_state.v, "omega_p": s.initial_state.omega_p},
        "duration": s.duration,
        "control_rate": s.control_rate,
        "substeps": s.substeps,
        "added_mass": s.added_mass,
        "added_mass_height": s.added_mass_height,
        "disturbances": [list(d) for d in s.disturbances],
        "tau_max": s.tau_max,
        "torque_calibration": s.torque_calibration,
        "act_on_true_theta": s.act_on_true_theta,
    }


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(doc)
