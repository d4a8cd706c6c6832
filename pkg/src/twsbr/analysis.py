"""Transfer-function extraction, polynomial root finding, root-locus
sweeps, and step-response metrics.

Polynomial coefficient arrays are in descending powers throughout, matching
RationalTF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import PidGains, RationalTF
from .plant import StateSpaceModel

ROOT_TOL = 1e-10
NEWTON_CAP = 500


class RootFindingError(RuntimeError):
    """Root refinement failed to reach the requested residual."""

    def __init__(self, residual: float, tol: float):
        self.residual = residual
        super().__init__(f"root residual {residual:.3e} above tolerance {tol:.0e}")


@dataclass(frozen=True)
class PolyRoots:
    roots: tuple[complex, ...]
    residual: float  # max scaled |p(root)| over the roots


@dataclass(frozen=True)
class RootLocusData:
    gains: tuple[float, ...]
    # branches[b][k] is the pole of branch b at gains[k]; branch count equals
    # the loop denominator degree and is constant across the grid.
    branches: tuple[tuple[complex, ...], ...]

    def poles_at(self, k: int) -> tuple[complex, ...]:
        return tuple(br[k] for br in self.branches)


@dataclass(frozen=True)
class StepMetrics:
    settling_time: float | None
    overshoot_pct: float
    steady_state_error: float
    peak_time: float
    settled: bool


# ---------------------------------------------------------------------------


def ss_to_tf(model: StateSpaceModel) -> RationalTF:
    """SISO transfer function C (sI - A)^-1 B by the Faddeev-LeVerrier
    recursion; numerator leading zeros are trimmed with a tolerance."""
    A = np.asarray(model.A, dtype=float)
    B = np.asarray(model.B, dtype=float).reshape(-1)
    C = np.asarray(model.C, dtype=float).reshape(-1)
    n = A.shape[0]

    den = np.zeros(n + 1)
    den[0] = 1.0
    num = np.zeros(n)
    Mk = np.eye(n)
    for k in range(1, n + 1):
        num[k - 1] = C @ Mk @ B
        AM = A @ Mk
        ck = -np.trace(AM) / k
        den[k] = ck
        Mk = AM + ck * np.eye(n)

    scale = np.max(np.abs(num)) or 1.0
    lead = 0
    while lead < len(num) - 1 and abs(num[lead]) <= 1e-12 * scale:
        lead += 1
    return RationalTF(num=tuple(num[lead:]), den=tuple(den))


def poly_roots(coeffs, tol: float = ROOT_TOL) -> PolyRoots:
    """All complex roots via companion-matrix eigenvalues plus Newton
    polishing; conjugate symmetry is enforced for real-coefficient input."""
    c = np.asarray(coeffs, dtype=complex)
    if np.all(np.abs(c.imag) == 0.0):
        c = c.real.astype(float)
    if len(c) < 2:
        raise ValueError("polynomial degree must be at least 1")
    if c[0] == 0:
        raise ValueError("leading coefficient must be nonzero")

    monic = c / c[0]
    n = len(monic) - 1
    comp = np.zeros((n, n), dtype=monic.dtype)
    comp[0, :] = -monic[1:]
    if n > 1:
        comp[1:, :-1] = np.eye(n - 1)
    roots = np.linalg.eigvals(comp)

    roots = _newton_polish(monic, roots)
    if np.isrealobj(monic):
        roots = _enforce_conjugates(roots)

    residual = _max_residual(c, roots)
    if residual > tol:
        raise RootFindingError(residual, tol)
    return PolyRoots(roots=tuple(sorted(roots, key=lambda r: (r.real, r.imag))), residual=residual)


def _newton_polish(monic: np.ndarray, roots: np.ndarray) -> np.ndarray:
    deriv = np.polyder(monic)
    out = roots.astype(complex).copy()
    for i, r in enumerate(out):
        best = r
        best_val = abs(np.polyval(monic, r))
        for _ in range(min(3, NEWTON_CAP)):
            d = np.polyval(deriv, best)
            if d == 0:
                break
            cand = best - np.polyval(monic, best) / d
            val = abs(np.polyval(monic, cand))
            if val >= best_val:
                break
            best, best_val = cand, val
        out[i] = best
    return out


def _enforce_conjugates(roots: np.ndarray) -> np.ndarray:
    """Zero near-real imaginary parts and symmetrize conjugate pairs."""
    scale = max(1.0, float(np.max(np.abs(roots))) if len(roots) else 1.0)
    out = roots.copy()
    real_mask = np.abs(out.imag) <= 1e-9 * scale
    out[real_mask] = out[real_mask].real
    idx = [i for i in range(len(out)) if not real_mask[i]]
    used: set[int] = set()
    for i in idx:
        if i in used:
            continue
        best_j, best_d = None, np.inf
        for j in idx:
            if j == i or j in used or np.sign(out[j].imag) == np.sign(out[i].imag):
                continue
            d = abs(out[j] - out[i].conjugate())
            if d < best_d:
                best_j, best_d = j, d
        if best_j is not None:
            used.update((i, best_j))
            re = 0.5 * (out[i].real + out[best_j].real)
            im = 0.5 * (abs(out[i].imag) + abs(out[best_j].imag))
            out[i] = complex(re, im if out[i].imag > 0 else -im)
            out[best_j] = out[i].conjugate()
    return out


def _max_residual(coeffs: np.ndarray, roots: np.ndarray) -> float:
    norm = float(np.linalg.norm(coeffs))
    n = len(coeffs) - 1
    worst = 0.0
    for r in roots:
        scale = norm * max(1.0, abs(r)) ** n
        worst = max(worst, abs(np.polyval(coeffs, r)) / scale)
    return worst


# ---------------------------------------------------------------------------
# Loop construction


def pid_tf(gains: PidGains) -> RationalTF:
    """Ideal continuous PID (kd s^2 + kp s + ki)/s."""
    return RationalTF(num=(gains.kd, gains.kp, gains.ki), den=(1.0, 0.0))


def series(a: RationalTF, b: RationalTF) -> RationalTF:
    return RationalTF(
        num=tuple(np.polymul(a.num, b.num)), den=tuple(np.polymul(a.den, b.den))
    )


def cancel_origin_pairs(tf: RationalTF, rel_tol: float = 1e-12) -> RationalTF:
    """Cancel structural pole/zero pairs at s = 0, e.g. the unobservable
    position integrator of the balance plant.  Trailing coefficients count
    as zero below rel_tol times the polynomial norm (the Faddeev recursion
    leaves roundoff residue in structurally-zero entries)."""
    num = list(tf.num)
    den = list(tf.den)
    ntol = rel_tol * float(np.linalg.norm(num))
    dtol = rel_tol * float(np.linalg.norm(den))
    while len(num) > 1 and len(den) > 1 and abs(num[-1]) <= ntol and abs(den[-1]) <= dtol:
        num.pop()
        den.pop()
    return RationalTF(num=tuple(num), den=tuple(den))


def closed_loop_poles(loop: RationalTF, gain: float = 1.0, tol: float = ROOT_TOL):
    """Poles of the unity-negative-feedback loop: roots of den + K num,
    after structural origin cancellations."""
    if not loop.proper:
        raise ValueError("loop transfer function must be proper")
    reduced = cancel_origin_pairs(loop)
    char = np.polyadd(np.asarray(reduced.den), gain * np.asarray(
        np.pad(reduced.num, (len(reduced.den) - len(reduced.num), 0))
    ))
    return np.array(poly_roots(char, tol).roots)


def root_locus(plant: RationalTF, compensator: RationalTF | None, gains) -> RootLocusData:
    """Closed-loop pole branches over an ascending positive gain grid.

    The loop transfer function is compensator * plant (plant alone when
    compensator is None) with structural origin pole/zero pairs cancelled;
    branches are matched across adjacent gains by greedy nearest-neighbor.
    """
    gains = tuple(float(g) for g in gains)
    if len(gains) == 0 or any(g <= 0 for g in gains) or list(gains) != sorted(gains):
        raise ValueError("gain grid must be positive and ascending")
    loop = series(compensator, plant) if compensator is not None else plant
    if not loop.proper:
        raise ValueError("loop transfer function must be proper")
    loop = cancel_origin_pairs(loop)
    den = np.asarray(loop.den)
    num = np.pad(np.asarray(loop.num), (len(den) - len(loop.num), 0))

    n_branches = len(den) - 1
    branches: list[list[complex]] = [[] for _ in range(n_branches)]
    prev: list[complex] | None = None
    for K in gains:
        roots = list(poly_roots(np.polyadd(den, K * num)).roots)
        if prev is None:
            ordered = sorted(roots, key=lambda r: (r.real, r.imag))
        else:
            ordered = _match_branches(prev, roots)
        for b, r in enumerate(ordered):
            branches[b].append(r)
        prev = ordered
    return RootLocusData(gains=gains, branches=tuple(tuple(b) for b in branches))


def _match_branches(prev: list[complex], roots: list[complex]) -> list[complex]:
    pairs = sorted(
        ((abs(prev[i] - roots[j]), i, j) for i in range(len(prev)) for j in range(len(roots))),
        key=lambda t: t[0],
    )
    assigned: dict[int, complex] = {}
    taken: set[int] = set()
    for _, i, j in pairs:
        if i in assigned or j in taken:
            continue
        assigned[i] = roots[j]
        taken.add(j)
    return [assigned[i] for i in range(len(prev))]


# ---------------------------------------------------------------------------
# Step-response metrics


def step_metrics(t, y, target: float, band_pct: float = 2.0) -> StepMetrics:
    """Settling/overshoot/steady-state metrics of a uniformly sampled signal.

    The settling band is +/- (band_pct/100) * |target|; for regulation-to-
    zero trajectories (target 0) the band falls back to |y[0]| so it stays
    well defined.  Settling time is the first sample time after the last
    band exit, None when the signal ends outside the band.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) != len(y) or len(t) < 2:
        raise ValueError("need matched t/y arrays with at least two samples")

    scale = abs(target) if target != 0.0 else abs(float(y[0]))
    half = band_pct / 100.0 * scale
    dev = np.abs(y - target)
    outside = np.nonzero(dev > half)[0]
    if len(outside) == 0:
        settling, settled = 0.0, True
    elif outside[-1] == len(y) - 1:
        settling, settled = None, False
    else:
        settling, settled = float(t[outside[-1] + 1]), True

    step_size = abs(target - float(y[0]))
    direction = np.sign(target - y[0]) if step_size > 0 else 1.0
    excursion = direction * (y - target)
    peak_idx = int(np.argmax(excursion))
    overshoot = max(0.0, float(excursion[peak_idx]))
    overshoot_pct = 100.0 * overshoot / step_size if step_size > 0 else 0.0

    tail = max(1, len(y) // 10)
    sse = float(np.mean(dev[-tail:]))
    return StepMetrics(
        settling_time=settling,
        overshoot_pct=overshoot_pct,
        steady_state_error=sse,
        peak_time=float(t[peak_idx]),
        settled=settled,
    )
