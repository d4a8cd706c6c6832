"""Planar dynamics of a two-wheeled self-balancing robot.

The chassis is an inverted pendulum of mass m with its center of mass a
distance l above the wheel axle; the two wheels (mass M, radius R each)
are driven by a combined axle torque tau_l + tau_r.  State is
[x, theta_p, v, omega_p] with theta_p the tilt from vertical.

Equations of motion come from the Lagrangian with a Rayleigh dissipation
function mu0*v^2 + mu1*omega_p^2 (wheel torque drives only the tilt
coordinate; there is no reaction term on x):

    (m + 2M + 2J_w/R^2) * x_dd + m*l*cos(theta_p) * th_dd
        - m*l*omega_p^2*sin(theta_p) + 2*mu0*v = 0
    m*l*cos(theta_p) * x_dd + (m*l^2 + J_c) * th_dd + 2*mu1*omega_p
        - m*g*l*sin(theta_p) = tau_l + tau_r

This is the exact Euler-Lagrange system of those energies, so the power
balance d(KE+PE)/dt = tau*omega_p - 2*mu0*v^2 - 2*mu1*omega_p^2 holds
identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Determinant magnitude below which the configuration-dependent mass
# matrix is treated as singular.  Unreachable for valid parameters.
SINGULARITY_TOL = 1e-12

# Documented default chassis inertia about its own COM [kg m^2].  Chosen
# so that the upright fall rate stays moderate (~5.4 rad/s); see README.
DEFAULT_J_C = 5.0e-3


class SingularMassMatrix(ValueError):
    """Configuration-dependent mass matrix is numerically singular."""

    def __init__(self, determinant: float):
        self.determinant = determinant
        super().__init__(
            f"mass matrix singular: |det| = {abs(determinant):.3e} < {SINGULARITY_TOL:.0e}"
        )


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot.

    J_w defaults to the solid-disc value M*R^2/2 when not given.  J_c has
    no physically-derivable default and must be supplied explicitly
    (DEFAULT_J_C is the documented example value used by the shipped
    scenarios).
    """

    J_c: float
    m: float = 0.75
    M: float = 0.08
    l: float = 0.02
    R: float = 0.035
    J_w: float | None = None
    mu0: float = 0.1
    mu1: float = 0.0
    g: float = 9.81

    def __post_init__(self) -> None:
        if self.J_w is None:
            object.__setattr__(self, "J_w", 0.5 * self.M * self.R**2)
        if not (self.m > 0 and self.M > 0 and self.l > 0 and self.R > 0 and self.g > 0):
            raise ValueError("m, M, l, R, g must all be positive")
        if self.J_w < 0 or self.J_c < 0 or self.mu0 < 0 or self.mu1 < 0:
            raise ValueError("J_w, J_c, mu0, mu1 must be non-negative")
        if self.den <= 0:
            raise ValueError(f"degenerate inertia: den = {self.den:.3e} must be positive")

    @property
    def num(self) -> float:
        """Translational inertia m + 2M + 2*J_w/R^2."""
        return self.m + 2.0 * self.M + 2.0 * self.J_w / self.R**2

    @property
    def den(self) -> float:
        """Mass-matrix determinant at theta_p = 0."""
        return self.num * (self.m * self.l**2 + self.J_c) - (self.m * self.l) ** 2

    @classmethod
    def nominal(cls, J_c: float = DEFAULT_J_C) -> "RobotParams":
        """Parameter set of the physical kit with the documented J_c."""
        return cls(J_c=J_c)


@dataclass(frozen=True)
class PlantState:
    """State vector [x, theta_p, v, omega_p]."""

    x: float = 0.0
    theta_p: float = 0.0
    v: float = 0.0
    omega_p: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.theta_p, self.v, self.omega_p])

    @classmethod
    def from_array(cls, a) -> "PlantState":
        return cls(x=float(a[0]), theta_p=float(a[1]), v=float(a[2]), omega_p=float(a[3]))

    def wrapped(self) -> "PlantState":
        """Copy with theta_p wrapped to (-pi, pi] for reporting."""
        th = math.remainder(self.theta_p, 2.0 * math.pi)
        if th == -math.pi:
            th = math.pi
        return replace(self, theta_p=th)


@dataclass(frozen=True)
class WheelTorque:
    tau_l: float = 0.0
    tau_r: float = 0.0

    @property
    def total(self) -> float:
        return self.tau_l + self.tau_r


@dataclass(frozen=True)
class StateDerivative:
    dx: float
    dtheta_p: float
    dv: float
    domega_p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dtheta_p, self.dv, self.domega_p])


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy bookkeeping [J]; dissipation_rate is the Rayleigh function
    mu0*v^2 + mu1*omega_p^2 (actual mechanical power drain is twice it)."""

    ke_chassis: float
    ke_wheels: float
    ke_total: float
    pe: float
    dissipation_rate: float


@dataclass(frozen=True)
class StateSpaceModel:
    """Linearized model xdot = A x + B u, y = C x, with u = tau_l + tau_r."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0, 0.0, 0.0]]))
    num: float = 0.0
    den: float = 0.0


def nonlinear_dynamics(
    params: RobotParams, state: PlantState, torque: WheelTorque
) -> StateDerivative:
    """Exact nonlinear state derivative.

    Solves the 2x2 configuration-dependent mass matrix system for
    (v_dot, omega_dot); raises SingularMassMatrix when its determinant
    falls below SINGULARITY_TOL.
    """
    th, v, om = state.theta_p, state.v, state.omega_p
    sin_th = math.sin(th)
    cos_th = math.cos(th)

    a = params.num
    b = params.m * params.l * cos_th
    c = params.m * params.l**2 + params.J_c
    det = a * c - b * b
    if abs(det) < SINGULARITY_TOL:
        raise SingularMassMatrix(det)

    r1 = -2.0 * params.mu0 * v + params.m * params.l * om**2 * sin_th
    r2 = torque.total + params.m * params.g * params.l * sin_th - 2.0 * params.mu1 * om
    dv = (c * r1 - b * r2) / det
    dom = (a * r2 - b * r1) / det
    return StateDerivative(dx=v, dtheta_p=om, dv=dv, domega_p=dom)


def total_energy(params: RobotParams, state: PlantState) -> EnergyBreakdown:
    """Kinetic + potential energy split and the Rayleigh dissipation value."""
    th, v, om = state.theta_p, state.v, state.omega_p
    ke_chassis = (
        0.5 * params.m * (v**2 + params.l**2 * om**2)
        + params.m * v * params.l * om * math.cos(th)
        + 0.5 * params.J_c * om**2
    )
    ke_wheels = params.M * v**2 + params.J_w * v**2 / params.R**2
    pe = params.m * params.g * params.l * math.cos(th)
    dissipation_rate = params.mu0 * v**2 + params.mu1 * om**2
    return EnergyBreakdown(
        ke_chassis=ke_chassis,
        ke_wheels=ke_wheels,
        ke_total=ke_chassis + ke_wheels,
        pe=pe,
        dissipation_rate=dissipation_rate,
    )


def rk4_step(
    params: RobotParams, state: PlantState, torque: WheelTorque, dt: float
) -> PlantState:
    """One classical fourth-order Runge-Kutta step with torque held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(arr: np.ndarray) -> np.ndarray:
        return nonlinear_dynamics(params, PlantState.from_array(arr), torque).as_array()

    y = state.as_array()
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return PlantState.from_array(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def linearize(params: RobotParams) -> StateSpaceModel:
    """Small-angle state-space model about the upright equilibrium.

    Derived by solving the small-angle equations of motion for
    (v_dot, omega_dot); the centripetal/Coriolis couplings are second
    order in the state and drop out.  Note the gravity entry of the
    omega_p row is m*g*l*num/den; it carries the full m*g*l factor
    demanded by the derivation.
    """
    num = params.num
    den = params.den
    if den <= SINGULARITY_TOL:
        raise ValueError(f"den = {den:.3e} below tolerance; model degenerate")
    m, l, g = params.m, params.l, params.g
    mu0, mu1 = params.mu0, params.mu1
    c = m * l**2 + params.J_c

    A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, -((m * l) ** 2) * g / den, -2.0 * mu0 * c / den, 2.0 * m * l * mu1 / den],
            [0.0, m * g * l * num / den, 2.0 * mu0 * m * l / den, -2.0 * mu1 * num / den],
        ]
    )
    B = np.array([0.0, 0.0, -m * l / den, num / den])
    return StateSpaceModel(A=A, B=B, num=num, den=den)
