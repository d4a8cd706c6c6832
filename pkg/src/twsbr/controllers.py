"""The three balance controllers: discrete PID, lead-lag compensator, and
a PID-like fuzzy logic controller, plus the saturation/PWM output stage.

All step functions are pure state-in/state-out transitions; a controller
instance's state lives in the value objects passed in and returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

ACTUATOR_LIMIT = 255.0

# ---------------------------------------------------------------------------
# PID


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self) -> None:
        for v in (self.kp, self.ki, self.kd):
            if not math.isfinite(v):
                raise ValueError("gains must be finite")


@dataclass(frozen=True)
class PidState:
    """Integral accumulator and previous error, shared by PID and FLC."""

    integral: float = 0.0
    prev_error: float = 0.0


def _advance_integral(integral: float, e: float, e_prev: float, ki: float, dt: float) -> float:
    # Trapezoid advance; anti-windup clamps the integral contribution
    # ki * integral to the actuator range.
    integral += 0.5 * (e + e_prev) * dt
    if ki != 0.0:
        bound = ACTUATOR_LIMIT / abs(ki)
        integral = min(max(integral, -bound), bound)
    return integral


def pid_step(gains: PidGains, st: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One discrete PID update on the tilt error; derivative is the first
    difference of the error."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    integral = _advance_integral(st.integral, error, st.prev_error, gains.ki, dt)
    derivative = (error - st.prev_error) / dt
    u = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return u, PidState(integral=integral, prev_error=error)


# ---------------------------------------------------------------------------
# Lead-lag compensator


@dataclass(frozen=True)
class LeadLagParams:
    kc: float = 3.25
    tau_lead: float = 0.1095
    alpha: float = 0.4494
    tau_lag: float = 1.123
    beta: float = 7.1439

    def __post_init__(self) -> None:
        if self.tau_lead <= 0 or self.tau_lag <= 0 or self.kc <= 0:
            raise ValueError("kc, tau_lead, tau_lag must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1) for phase lead")
        if self.beta <= 1:
            raise ValueError("beta must exceed 1 for phase lag")


@dataclass(frozen=True)
class RationalTF:
    """Rational transfer function; coefficients in descending powers of s.

    Improper ratios are representable (an ideal PID compensator is one);
    operations that require properness (discretize_tustin) enforce it.
    """

    num: tuple[float, ...]
    den: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.den) == 0 or self.den[0] == 0.0:
            raise ValueError("denominator leading coefficient must be nonzero")

    @property
    def proper(self) -> bool:
        return len(self.num) <= len(self.den)

    def __call__(self, s: complex) -> complex:
        return _polyval(self.num, s) / _polyval(self.den, s)

    def dc_gain(self) -> float:
        return float(np.real(self(0.0)))


def _polyval(coeffs: Sequence[float], s: complex) -> complex:
    acc = 0.0 + 0.0j
    for c in coeffs:
        acc = acc * s + c
    return acc


def leadlag_tf(p: LeadLagParams) -> RationalTF:
    """Continuous lead-lag compensator, monic denominator.

    Cascade of a lead section (s + 1/tau_lead)/(s + 1/(alpha*tau_lead))
    with unity high-frequency gain and a lag section
    (tau_lag*s + 1)/(beta*tau_lag*s + 1) with unity DC gain, times kc.
    Equivalently kc*alpha*(tau_lead*s+1)(tau_lag*s+1) /
    [(alpha*tau_lead*s+1)(beta*tau_lag*s+1)]; DC gain is kc*alpha.
    """
    num = p.kc * p.alpha * np.polymul([p.tau_lead, 1.0], [p.tau_lag, 1.0])
    den = np.polymul([p.alpha * p.tau_lead, 1.0], [p.beta * p.tau_lag, 1.0])
    lead_coeff = den[0]
    return RationalTF(num=tuple(num / lead_coeff), den=tuple(den / lead_coeff))


# ---------------------------------------------------------------------------
# Tustin discretization into biquad sections


@dataclass(frozen=True)
class BiquadSection:
    b0: float
    b1: float = 0.0
    b2: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    z1: float = 0.0
    z2: float = 0.0


@dataclass(frozen=True)
class DiscreteBiquadChain:
    sections: tuple[BiquadSection, ...]
    fs: float

    def __post_init__(self) -> None:
        if self.fs <= 0:
            raise ValueError("sample rate must be positive")


def _bilinear_poly(coeffs: np.ndarray, k: float, degree: int) -> np.ndarray:
    """Map sum c_i s^(d_i) onto z via s = k (z-1)/(z+1), common (z+1)^degree
    denominator; returns the z-polynomial numerator."""
    out = np.zeros(degree + 1)
    n = len(coeffs) - 1
    for i, c in enumerate(coeffs):
        p = n - i  # power of s for this coefficient
        term = c * k**p * np.polymul(
            _poly_power([1.0, -1.0], p), _poly_power([1.0, 1.0], degree - p)
        )
        out = np.polyadd(out, term)
    return out


def _poly_power(poly: list[float], p: int) -> np.ndarray:
    acc = np.array([1.0])
    for _ in range(p):
        acc = np.polymul(acc, poly)
    return acc


def discretize_tustin(tf: RationalTF, fs: float) -> DiscreteBiquadChain:
    """Bilinear transform s <- 2 fs (z-1)/(z+1), split into second-order
    sections.  Frequency response is preserved exactly at DC (z=1 <-> s=0);
    no pre-warping."""
    if fs <= 0:
        raise ValueError("sample rate must be positive")
    if not tf.proper:
        raise ValueError("transfer function must be proper for discretization")
    k = 2.0 * fs
    den = np.asarray(tf.den, dtype=float)
    if abs(_polyval(tf.den, k)) < 1e-12 * np.linalg.norm(den) * max(1.0, k) ** (len(den) - 1):
        raise ValueError("continuous pole at s = 2 fs: Tustin transform singular")

    degree = len(tf.den) - 1
    num_z = _bilinear_poly(np.asarray(tf.num, dtype=float), k, degree)
    den_z = _bilinear_poly(den, k, degree)
    num_z = num_z / den_z[0]
    den_z = den_z / den_z[0]

    if degree == 0:
        chain = DiscreteBiquadChain(sections=(BiquadSection(b0=float(num_z[0])),), fs=fs)
        return _match_dc(chain, tf)

    poles = np.roots(den_z)
    zeros = np.roots(num_z) if len(num_z) > 1 else np.array([])
    # Tustin maps degree-preservingly, so after the monic normalization the
    # overall gain is the leading numerator coefficient.
    gain = float(num_z[0])

    sections = []
    poles = _pair_conjugates(poles)
    zeros = _pair_conjugates(zeros)
    for i in range(0, len(poles), 2):
        p = poles[i : i + 2]
        z = zeros[i : i + 2]
        a = np.real(np.poly(p)) if len(p) else np.array([1.0])
        b = np.real(np.poly(z)) if len(z) else np.array([1.0])
        b = np.pad(b, (0, 3 - len(b)))
        a = np.pad(a, (0, 3 - len(a)))
        sections.append(
            BiquadSection(b0=float(b[0]), b1=float(b[1]), b2=float(b[2]),
                          a1=float(a[1]), a2=float(a[2]))
        )
    first = sections[0]
    sections[0] = replace(first, b0=first.b0 * gain, b1=first.b1 * gain, b2=first.b2 * gain)
    return _match_dc(DiscreteBiquadChain(sections=tuple(sections), fs=fs), tf)


def _pair_conjugates(roots: np.ndarray) -> np.ndarray:
    """Order roots so conjugate pairs are adjacent (real roots paired last)."""
    cplx = sorted([r for r in roots if abs(r.imag) > 1e-12], key=lambda r: (r.real, abs(r.imag)))
    real = sorted([r.real for r in roots if abs(r.imag) <= 1e-12])
    out: list[complex] = []
    used = [False] * len(cplx)
    for i, r in enumerate(cplx):
        if used[i]:
            continue
        used[i] = True
        partner = None
        for j in range(i + 1, len(cplx)):
            if not used[j] and abs(cplx[j] - r.conjugate()) < 1e-9 * max(1.0, abs(r)):
                partner = j
                break
        if partner is not None:
            used[partner] = True
            out.extend([r, r.conjugate()])
        else:
            out.append(r)
    out.extend(real)
    return np.array(out)


def _match_dc(chain: DiscreteBiquadChain, tf: RationalTF) -> DiscreteBiquadChain:
    """Rescale so the discrete DC gain equals the continuous one to the ulp."""
    target = tf.dc_gain()
    actual = float(np.real(frequency_response(chain, 0.0)))
    if actual == 0.0 or target == 0.0 or not math.isfinite(target):
        return chain
    scale = target / actual
    first = chain.sections[0]
    fixed = replace(first, b0=first.b0 * scale, b1=first.b1 * scale, b2=first.b2 * scale)
    return DiscreteBiquadChain(sections=(fixed,) + chain.sections[1:], fs=chain.fs)


def biquad_step(chain: DiscreteBiquadChain, x: float) -> tuple[float, DiscreteBiquadChain]:
    """Direct-form-II-transposed update through the cascade."""
    new_sections = []
    for s in chain.sections:
        y = s.b0 * x + s.z1
        z1 = s.b1 * x - s.a1 * y + s.z2
        z2 = s.b2 * x - s.a2 * y
        new_sections.append(replace(s, z1=z1, z2=z2))
        x = y
    return x, DiscreteBiquadChain(sections=tuple(new_sections), fs=chain.fs)


def frequency_response(chain: DiscreteBiquadChain, omega: float) -> complex:
    """Chain response at continuous frequency omega [rad/s]."""
    z = np.exp(1j * omega / chain.fs)
    h = 1.0 + 0.0j
    for s in chain.sections:
        zi = 1.0 / z
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi)
    return complex(h)


# ---------------------------------------------------------------------------
# Fuzzy logic controller

# Seven half-overlap triangles on the normalized universe [-1, 1].
# Peak array is exactly antisymmetric (each negative peak is the IEEE
# negation of its mirror), which the odd-symmetry guarantee relies on.
SET_NAMES = ("NB", "NM", "NS", "Z", "PS", "PM", "PB")
PEAKS = np.array([-1.0, -(2.0 / 3.0), -(1.0 / 3.0), 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])

# Macvicar-Whelan style table: consequent index = clamp(i + j - 3, 0, 6).
DEFAULT_RULE_TABLE = tuple(
    tuple(min(max(i + j - 3, 0), 6) for j in range(7)) for i in range(7)
)

# Symmetric 1001-point defuzzification grid: grid[n-1-i] == -grid[i] bitwise.
_HALF = np.arange(501) / 500.0
DEFUZZ_GRID = np.concatenate([-_HALF[:0:-1], _HALF])
_TRI = np.maximum(0.0, 1.0 - 3.0 * np.abs(DEFUZZ_GRID[None, :] - PEAKS[:, None]))

DEFUZZ_METHODS = ("centroid", "mom", "wavg")


class Defuzzified(NamedTuple):
    value: float
    degenerate: bool  # zero-area aggregate was defined to 0 output


@dataclass(frozen=True)
class FlcConfig:
    """PID-like FLC: the fuzzy core maps (kp*e, kd*de/dt) scaled onto the
    normalized universe; a crisp integral term ki * int(e) is added outside
    the core and the core output is weighted by ku."""

    kp: float = 150.0
    ki: float = 1.5
    kd: float = 1.0
    ku: float = 1.0
    defuzz: str = "centroid"
    scale_e: float = 40.0
    scale_de: float = 1.2
    rule_table: tuple[tuple[int, ...], ...] = DEFAULT_RULE_TABLE

    def __post_init__(self) -> None:
        if self.defuzz not in DEFUZZ_METHODS:
            raise ValueError(f"defuzz must be one of {DEFUZZ_METHODS}")
        if self.scale_e <= 0 or self.scale_de <= 0:
            raise ValueError("universe scales must be positive")
        table = self.rule_table
        if len(table) != 7 or any(len(row) != 7 for row in table):
            raise ValueError("rule table must be 7x7")
        for i in range(7):
            for j in range(7):
                if not 0 <= table[i][j] <= 6:
                    raise ValueError("rule consequents must index the 7 output sets")
                if table[6 - i][6 - j] != 6 - table[i][j]:
                    raise ValueError("rule table must be antisymmetric under input negation")


def flc_fuzzify(value: float, universe_scale: float) -> np.ndarray:
    """Membership degrees of value/universe_scale (clamped to [-1, 1])
    against the seven triangles."""
    if universe_scale <= 0:
        raise ValueError("universe_scale must be positive")
    x = value / universe_scale
    x = min(max(x, -1.0), 1.0)
    return np.maximum(0.0, 1.0 - 3.0 * np.abs(x - PEAKS))


def flc_infer(
    e_deg: np.ndarray, de_deg: np.ndarray, rules: tuple[tuple[int, ...], ...] = DEFAULT_RULE_TABLE
) -> np.ndarray:
    """Min-max inference: per-rule firing strength is the min of the two
    antecedent degrees; strengths aggregate by max per consequent set.
    Returns the 7 clipping strengths of the output sets."""
    strengths = np.zeros(7)
    for i in range(7):
        ei = e_deg[i]
        if ei <= 0.0:
            continue
        row = rules[i]
        for j in range(7):
            dj = de_deg[j]
            if dj <= 0.0:
                continue
            w = ei if ei < dj else dj
            k = row[j]
            if w > strengths[k]:
                strengths[k] = w
    return strengths


def _mirror_sum(c: np.ndarray) -> float:
    # Pairs element i with its mirror n-1-i before reducing, so that a
    # mirrored (negated) input produces the exactly negated sum.
    n = len(c)
    m = n // 2
    paired = c[:m] + c[n - 1 : n - 1 - m : -1] if m else np.zeros(0)
    total = float(np.sum(paired))
    if n % 2:
        total += float(c[m])
    return total


def flc_defuzzify(strengths: np.ndarray, method: str) -> Defuzzified:
    """Crisp output of the clipped-and-aggregated output sets.

    centroid: area centroid of max(min(strength_k, tri_k)) on the fixed
    1001-point grid; mom: mean of the arg-max plateau; wavg: strength-
    weighted average of the set peaks.  A zero aggregate yields value 0
    with the degenerate flag set instead of an error.
    """
    if method not in DEFUZZ_METHODS:
        raise ValueError(f"defuzz must be one of {DEFUZZ_METHODS}")
    strengths = np.asarray(strengths, dtype=float)

    if method == "wavg":
        total = _mirror_sum(strengths)
        if total <= 0.0:
            return Defuzzified(0.0, True)
        return Defuzzified(_mirror_sum(strengths * PEAKS) / total, False)

    agg = np.max(np.minimum(strengths[:, None], _TRI), axis=0)
    if method == "mom":
        peak = float(np.max(agg))
        if peak <= 0.0:
            return Defuzzified(0.0, True)
        on = (agg == peak).astype(float)
        count = float(np.sum(on))
        return Defuzzified(_mirror_sum(DEFUZZ_GRID * on) / count, False)

    # centroid via trapezoid panels, paired mirror-symmetrically
    widths = np.diff(DEFUZZ_GRID)
    f = DEFUZZ_GRID * agg
    num_panels = 0.5 * (f[:-1] + f[1:]) * widths
    den_panels = 0.5 * (agg[:-1] + agg[1:]) * widths
    area = _mirror_sum(den_panels)
    if area <= 0.0:
        return Defuzzified(0.0, True)
    return Defuzzified(_mirror_sum(num_panels) / area, False)


def flc_core(cfg: FlcConfig, e_scaled: float, de_scaled: float) -> Defuzzified:
    """Fuzzify-infer-defuzzify pipeline on pre-gain inputs kp*e and kd*de."""
    e_deg = flc_fuzzify(e_scaled, cfg.scale_e)
    de_deg = flc_fuzzify(de_scaled, cfg.scale_de)
    return flc_defuzzify(flc_infer(e_deg, de_deg, cfg.rule_table), cfg.defuzz)


def flc_step(cfg: FlcConfig, error: float, st: PidState, dt: float) -> tuple[float, PidState]:
    """One FLC update: u = ku * defuzz(core(kp*e, kd*de)) + ki * int(e)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    integral = _advance_integral(st.integral, error, st.prev_error, cfg.ki, dt)
    derivative = (error - st.prev_error) / dt
    core = flc_core(cfg, cfg.kp * error, cfg.kd * derivative)
    u = cfg.ku * core.value + cfg.ki * integral
    return u, PidState(integral=integral, prev_error=error)


# ---------------------------------------------------------------------------
# Output stage


@dataclass(frozen=True)
class ControlAction:
    u: float
    u_sat: float
    pwm_magnitude: int
    direction: int  # +1 or -1; zero maps to +1


def saturate_to_pwm(u: float) -> ControlAction:
    """Clamp to the +/-255 actuator range and split into an unsigned PWM
    magnitude (round half away from zero) and a direction sign."""
    if not math.isfinite(u):
        raise ValueError("control value must be finite")
    u_sat = min(max(u, -ACTUATOR_LIMIT), ACTUATOR_LIMIT)
    pwm = int(math.floor(abs(u_sat) + 0.5))
    direction = -1 if u_sat < 0 else 1
    return ControlAction(u=u, u_sat=u_sat, pwm_magnitude=pwm, direction=direction)
