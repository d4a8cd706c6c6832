"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they execute.  The live-retune round-trip criterion involving the
browser front panel lives in frontend/tests (the panel's own suite).
"""

import json
import math
import time

import numpy as np
import pytest

import twsbr.controllers as ctl
from twsbr.analysis import (
    closed_loop_poles,
    pid_tf,
    poly_roots,
    series,
    ss_to_tf,
    step_metrics,
)
from twsbr.cli import main as cli_main
from twsbr.plant import (
    DEFAULT_J_C,
    PlantState,
    RobotParams,
    WheelTorque,
    linearize,
    rk4_step,
    total_energy,
)
from twsbr.sim import Scenario, run_closed_loop, scenario_to_dict

PARAMS = RobotParams.nominal()
PID_GAINS = ctl.PidGains(kp=10.0, ki=0.005, kd=0.015)
LEADLAG = ctl.LeadLagParams()  # tau_lead=0.1095, alpha=0.4494, tau_lag=1.123, beta=7.1439, kc=3.25
FLC = ctl.FlcConfig()
# counts-to-torque loop factor of the default calibration (2 N*m per count)
K_ACT = 2.0 * 5100.0 * 0.05 / 255.0

EQ14_NUM = (0.13998, 1.40322, 1.1381)
EQ14_DEN = (1.0, 20.4484, 2.53227)


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion:02d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def run_controller(config, added_mass=0.0):
    scenario = Scenario(
        params=PARAMS,
        controller=config,
        added_mass=added_mass,
        added_mass_height=0.04,
    )
    start = time.perf_counter()
    result = run_closed_loop(scenario)
    elapsed = time.perf_counter() - start
    dt = 1.0 / scenario.control_rate
    effort = float(sum(abs(r.u_sat) for r in result.telemetry) * dt)
    return result, effort, elapsed


@pytest.fixture(scope="module")
def nominal_runs():
    return {
        "pid": run_controller(PID_GAINS),
        "leadlag": run_controller(LEADLAG),
        "flc": run_controller(FLC),
    }


@pytest.fixture(scope="module")
def added_mass_runs():
    return {
        "pid": run_controller(PID_GAINS, added_mass=0.2),
        "leadlag": run_controller(LEADLAG, added_mass=0.2),
        "flc": run_controller(FLC, added_mass=0.2),
    }


def test_criterion_01_leadlag_coefficients():
    tf = ctl.leadlag_tf(LEADLAG)
    worst = 0.0
    for got, want in zip(tf.den, EQ14_DEN):
        worst = max(worst, abs(got - want) / abs(want))
    for got, want in zip(tf.num, EQ14_NUM):
        worst = max(worst, abs(got - 3.25 * want) / abs(3.25 * want))
    report(1, worst < 1e-3, f"printed-coefficient worst relative error {worst:.2e} < 0.1%")


def test_criterion_02_eq14_pole_zero_cross_check():
    den_roots = sorted(r.real for r in poly_roots(EQ14_DEN).roots)
    ok = (
        abs(den_roots[0] - (-20.3237)) <= 1e-3
        and abs(den_roots[1] - (-0.12468)) <= 1e-3
        and abs(den_roots[0] - (-1 / (LEADLAG.alpha * LEADLAG.tau_lead)))
        <= 5e-3 * abs(den_roots[0])
        and abs(den_roots[1] - (-1 / (LEADLAG.beta * LEADLAG.tau_lag)))
        <= 5e-3 * abs(den_roots[1])
    )
    num_roots = sorted(r.real for r in poly_roots(ctl.leadlag_tf(LEADLAG).num).roots)
    ok = ok and abs(num_roots[0] - (-1 / LEADLAG.tau_lead)) <= 5e-3 * abs(num_roots[0])
    ok = ok and abs(num_roots[1] - (-1 / LEADLAG.tau_lag)) <= 5e-3 * abs(num_roots[1])
    report(2, ok, f"den roots {den_roots[0]:.4f}/{den_roots[1]:.5f} and num roots match "
                  "the section time constants")


def test_criterion_03_open_loop_instability():
    eigs = np.linalg.eigvals(linearize(PARAMS).A)
    unstable = int(np.sum(eigs.real > 1e-9))
    report(3, unstable == 1,
           f"exactly one RHP eigenvalue (got {unstable}; spectrum "
           f"{np.round(np.sort(eigs.real), 3).tolist()}) with J_w=M R^2/2, J_c={DEFAULT_J_C}")


def test_criterion_04_stabilization(nominal_runs):
    plant = ss_to_tf(linearize(PARAMS))
    pid_poles = closed_loop_poles(series(pid_tf(PID_GAINS), plant), gain=K_ACT)
    ll_poles = closed_loop_poles(series(ctl.leadlag_tf(LEADLAG), plant), gain=K_ACT)
    pid_run, _, pid_secs = nominal_runs["pid"]
    ll_run, _, ll_secs = nominal_runs["leadlag"]
    ok = (
        pid_poles.real.max() < 0
        and ll_poles.real.max() < 0
        and pid_run.settled
        and pid_run.metrics.settling_time < 30.0
        and ll_run.settled
        and ll_run.metrics.settling_time < 30.0
    )
    report(4, ok,
           f"PID/lead-lag closed-loop poles max Re {pid_poles.real.max():.4f}/"
           f"{ll_poles.real.max():.4f} < 0; 30 s runs settle at "
           f"{pid_run.metrics.settling_time:.3f} s / {ll_run.metrics.settling_time:.3f} s "
           f"(wall {pid_secs:.1f}/{ll_secs:.1f} s)")


def test_criterion_05_settling_ordering(nominal_runs):
    ts = {name: runs[0].metrics.settling_time for name, runs in nominal_runs.items()}
    efforts = {name: runs[1] for name, runs in nominal_runs.items()}
    ok = (
        ts["pid"] is not None
        and ts["leadlag"] is not None
        and ts["flc"] is not None
        and ts["pid"] < ts["leadlag"] < ts["flc"]
        and efforts["flc"] > efforts["pid"]
    )
    report(5, ok,
           f"settling PID {ts['pid']:.3f} < lead-lag {ts['leadlag']:.3f} < "
           f"FLC {ts['flc']:.3f} s; effort FLC {efforts['flc']:.3f} > PID {efforts['pid']:.3f}")


def test_criterion_06_added_mass_robustness(added_mass_runs):
    worst = {}
    for name, (result, _, _) in added_mass_runs.items():
        # zero-noise IMU: theta_acc is the exact plant tilt each tick
        worst[name] = max(abs(r.theta_acc) for r in result.telemetry)
    ok = all(w < math.pi / 6 for w in worst.values()) and all(
        not r[0].aborted and len(r[0].telemetry) == 6000 for r in added_mass_runs.values()
    )
    report(6, ok,
           "with +0.2 kg at 0.04 m all three controllers hold |theta| < pi/6: "
           + ", ".join(f"{k} {v:.4f}" for k, v in worst.items()))


def test_criterion_07_energy_conservation_and_balance():
    frictionless = RobotParams(J_c=DEFAULT_J_C, mu0=0.0, mu1=0.0)
    state = PlantState(theta_p=0.1)
    e = total_energy(frictionless, state)
    e0 = e.ke_total + e.pe
    dt = 1e-4
    for _ in range(50000):
        state = rk4_step(frictionless, state, WheelTorque(), dt)
    e = total_energy(frictionless, state)
    drift = abs((e.ke_total + e.pe) - e0) / abs(e0)

    # friction balance per 200 Hz tick against the Simpson-integrated
    # dissipation power 2 mu0 v^2 + 2 mu1 w^2 on the substep grid
    params = RobotParams(J_c=DEFAULT_J_C, mu0=0.1, mu1=0.01)
    state = PlantState(theta_p=0.2)
    states = [state]
    for _ in range(10000):
        state = rk4_step(params, state, WheelTorque(), dt)
        states.append(state)
    worst_rel = 0.0
    for k in range(0, 10000, 50):
        window = states[k : k + 51]
        es = [total_energy(params, s) for s in (window[0], window[-1])]
        drop = (es[0].ke_total + es[0].pe) - (es[1].ke_total + es[1].pe)
        ys = np.array(
            [2 * params.mu0 * s.v**2 + 2 * params.mu1 * s.omega_p**2 for s in window]
        )
        dissipated = float(dt / 3.0 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum()))
        if dissipated > 1e-10:
            worst_rel = max(worst_rel, abs(drop - dissipated) / dissipated)
    ok = drift < 1e-6 and worst_rel < 1e-4
    report(7, ok, f"frictionless 5 s drift {drift:.2e} < 1e-6; "
                  f"per-tick dissipation balance worst {worst_rel:.2e} < 1e-4")


def test_criterion_08_linearization_agreement():
    model = linearize(PARAMS)
    dt = 1e-3

    def divergence(theta0):
        s = PlantState(theta_p=theta0)
        x = np.array([0.0, theta0, 0.0, 0.0])
        worst = 0.0
        for _ in range(int(1.0 / dt)):
            s = rk4_step(PARAMS, s, WheelTorque(), dt)
            k1 = model.A @ x
            k2 = model.A @ (x + 0.5 * dt * k1)
            k3 = model.A @ (x + 0.5 * dt * k2)
            k4 = model.A @ (x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            worst = max(worst, abs(s.theta_p - x[1]))
        return worst

    d1 = divergence(1e-3)
    d2 = divergence(5e-4)
    ratio = (d1 / 1e-3) / (d2 / 5e-4)
    ok = d1 < 1e-4 and 3.6 <= ratio <= 4.4
    report(8, ok, f"max divergence {d1:.2e} rad < 1e-4 over 1 s; "
                  f"normalized-residual ratio under halving {ratio:.3f} in 4 ± 10%")


def test_criterion_09_discretization_fidelity():
    fs = 200.0
    tf = ctl.leadlag_tf(LEADLAG)
    chain = ctl.discretize_tustin(tf, fs)
    worst = 0.0
    for omega in np.linspace(0.05, 0.1 * math.pi * fs, 60):
        hd = abs(ctl.frequency_response(chain, omega))
        hc = abs(tf(1j * omega))
        worst = max(worst, abs(hd - hc) / hc)
    dc_d = ctl.frequency_response(chain, 0.0).real
    dc_c = tf.dc_gain()
    ok = (
        worst < 0.02
        and abs(dc_d - dc_c) <= 1e-12 * abs(dc_c)
        and abs(dc_c - 1.4607) <= 1e-3
    )
    report(9, ok, f"|H_d| vs |H_c| worst {worst:.4%} < 2% up to 0.1*pi*fs; "
                  f"DC {dc_d:.6f} == {dc_c:.6f} (diff {abs(dc_d-dc_c):.1e}), "
                  f"value within 1.4607 ± 0.001")


def test_criterion_10_flc_properties():
    t = np.arange(51) / 50.0
    grid = np.concatenate([-t[:0:-1], t])  # 101 exactly-antisymmetric points
    ok = True
    for method in ("centroid", "mom", "wavg"):
        cfg = ctl.FlcConfig(defuzz=method)
        zero = ctl.flc_core(cfg, 0.0, 0.0).value
        ok = ok and zero == 0.0
        for e in grid * 2.0 * cfg.scale_e:
            for de in grid * 2.0 * cfg.scale_de:
                pos = ctl.flc_core(cfg, e, de).value
                neg = ctl.flc_core(cfg, -e, -de).value
                if neg != -pos or not -1.0 <= pos <= 1.0:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            break
    report(10, ok, "odd symmetry exact on the 101x101 grid, outputs in [-1, 1], "
                   "zero at origin, for centroid/mom/wavg")


def test_criterion_11_metrics_oracle():
    zeta = 0.6
    t = np.arange(0, 20.0, 1e-3)
    wd = math.sqrt(1 - zeta**2)
    y = 1 - np.exp(-zeta * t) * (np.cos(wd * t) + zeta / wd * np.sin(wd * t))
    m1 = step_metrics(t, y, target=1.0)
    overshoot_ok = abs(m1.overshoot_pct - 9.48) <= 0.1

    t2 = np.arange(0, 10.0, 1e-3)
    m2 = step_metrics(t2, 1.0 + np.exp(-t2), target=1.0)
    settle_ok = abs(m2.settling_time - math.log(50.0)) <= 1e-3 + 1e-9
    report(11, overshoot_ok and settle_ok,
           f"zeta=0.6 overshoot {m1.overshoot_pct:.3f}% within 9.48 ± 0.1; "
           f"exp settling {m2.settling_time:.4f} within ln(50) ± one sample")


def test_criterion_12_cli_determinism(tmp_path):
    doc = scenario_to_dict(Scenario(params=PARAMS, controller=PID_GAINS))
    path = tmp_path / "nominal.json"
    path.write_text(json.dumps(doc))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    code_a = cli_main(["simulate", str(path), "--out", str(out_a)])
    code_b = cli_main(["simulate", str(path), "--out", str(out_b)])
    csv_a = (out_a / "telemetry.csv").read_bytes()
    csv_b = (out_b / "telemetry.csv").read_bytes()
    rows = len(csv_a.splitlines()) - 1
    ok = code_a == 0 and code_b == 0 and csv_a == csv_b and rows == 6000
    report(12, ok, f"two cmd_simulate runs byte-identical ({rows} rows)")
