"""Closed orbits: recurrence search, Newton refinement and classification.

Near-recurrences of a trajectory are refined into exact closed orbits of the
same Hamiltonian by Newton shooting.  The Hamiltonian is never modified: if
no closed orbit lies within Newton's basin the refinement fails.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import (ClassificationError, ConditioningError, EscapeError, HamlabError,
                     RefinementError, RegularityError, StiffnessError)
from .flow import IntegratorConfig, TangentTrajectory, Trajectory, _energy_series
from .phase_space import DEFAULT_REGULARITY_FLOOR, J, HamiltonianSystem, as_state
from .transversal import TransversalCocycle, frame_change, normal_frame, transversal_cocycle

# Refinement integrates with a finer step than trajectory exploration; the
# implicit midpoint period error is about T h^2 / 12 per unit frequency.
DEFAULT_REFINE_CONFIG = IntegratorConfig(step=1e-4)
PARABOLIC_TOL = 1e-6


class OrbitClass(str, enum.Enum):
    ELLIPTIC = "Elliptic"
    PARABOLIC = "Parabolic"
    HYPERBOLIC = "Hyperbolic"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class RecurrenceCandidate:
    start: np.ndarray
    return_time: float
    gap: float
    start_time: float = 0.0


@dataclass
class PeriodicOrbit:
    point: np.ndarray
    least_period: float
    monodromy: np.ndarray
    multipliers: tuple
    orbit_class: OrbitClass
    unstable_dir: Optional[np.ndarray] = None
    stable_dir: Optional[np.ndarray] = None
    bundle_angle: Optional[float] = None
    residual: float = 0.0
    energy: float = float("nan")
    cocycle: Optional[TransversalCocycle] = field(default=None, repr=False)
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    @property
    def trace(self) -> float:
        return float(np.trace(self.monodromy))

    def record(self) -> dict:
        """Plain-data record for reports."""
        return {
            "point": [float(v) for v in self.point],
            "period": float(self.least_period),
            "energy": float(self.energy),
            "trace": self.trace,
            "multipliers": [[float(m.real), float(m.imag)] for m in self.multipliers],
            "class": self.orbit_class.value,
            "angle": None if self.bundle_angle is None else float(self.bundle_angle),
            "residual": float(self.residual),
        }


# ---------------------------------------------------------------------------
# recurrences


def _closest_on_segments(states, times, j, target):
    """Closest point to ``target`` on the polyline segments adjacent to sample j."""
    best_d, best_t = np.linalg.norm(states[j] - target), times[j]
    for a in (j - 1, j):
        if a < 0 or a + 1 >= len(states):
            continue
        p, q = states[a], states[a + 1]
        d = q - p
        dd = d @ d
        w = 0.0 if dd == 0 else min(1.0, max(0.0, (target - p) @ d / dd))
        dist = np.linalg.norm(p + w * d - target)
        if dist < best_d:
            best_d, best_t = dist, times[a] + w * (times[a + 1] - times[a])
    return best_d, best_t


def find_recurrences(trajectory: Trajectory, radius: float, min_period_floor: float,
                     max_candidates: Optional[int] = None, max_period: Optional[float] = None) -> list:
    """Near-returns of a trajectory to its own past samples.

    All sample pairs (i, j) with j later than i by at least
    ``min_period_floor`` and distance below ``radius`` are collected, pruned
    to local minima of the distance over the (i, j) grid, refined in return
    time on the piecewise-linear interpolant, and sorted by gap.  Candidates
    describing the same recurrence (same return time, starts within one
    ``min_period_floor``) are merged.  ``max_period`` discards returns that
    take longer.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    times, states = trajectory.times, trajectory.states
    if times[-1] - times[0] < min_period_floor:
        return []
    pairs = cKDTree(states).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return []
    i, j = pairs[:, 0], pairs[:, 1]
    dt = times[j] - times[i]
    keep = dt >= min_period_floor
    if max_period is not None:
        keep &= dt <= max_period
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return []
    gap = np.linalg.norm(states[i] - states[j], axis=1)

    # 2D local minima; ties broken by (i, j) order
    n = len(states)
    keys = i.astype(np.int64) * n + j
    order = np.argsort(keys)
    skeys, sgap = keys[order], gap[order]
    is_min = np.ones(len(i), dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nkeys = (i + di).astype(np.int64) * n + (j + dj)
            pos = np.searchsorted(skeys, nkeys)
            pos = np.minimum(pos, len(skeys) - 1)
            found = skeys[pos] == nkeys
            ngap = sgap[pos]
            before = (di < 0) | ((di == 0) & (dj < 0))
            beaten = found & ((ngap < gap) | ((ngap == gap) & before))
            is_min &= ~beaten
    i, j = i[is_min], j[is_min]

    cands = []
    for a, b in zip(i, j):
        g, t_ret = _closest_on_segments(states, times, int(b), states[a])
        cands.append((g, float(times[a]), float(t_ret - times[a]), int(a)))
    cands.sort(key=lambda c: (c[0], c[1]))

    step = float(times[1] - times[0])
    accepted = []
    for g, t0, rt, a in cands:
        dup = any(abs(rt - o[2]) <= 2 * step and abs(t0 - o[1]) < min_period_floor for o in accepted)
        if dup:
            continue
        accepted.append((g, t0, rt, a))
        if max_candidates is not None and len(accepted) >= max_candidates:
            break
    return [RecurrenceCandidate(states[a].copy(), rt, float(g), t0) for g, t0, rt, a in accepted]


# ---------------------------------------------------------------------------
# classification


def _unit_det(monodromy):
    m = np.asarray(monodromy, dtype=float).reshape(2, 2)
    det = float(np.linalg.det(m))
    if not abs(det - 1.0) <= 1e-4:
        raise ConditioningError(f"monodromy determinant {det:.8g} is not 1 within 1e-4")
    return m / math.sqrt(det)


def classify_trace(trace: float, tol: float = PARABOLIC_TOL) -> OrbitClass:
    t = abs(float(trace))
    if t < 2.0 - tol:
        return OrbitClass.ELLIPTIC
    if t > 2.0 + tol:
        return OrbitClass.HYPERBOLIC
    return OrbitClass.PARABOLIC


def classify(monodromy, tol: float = PARABOLIC_TOL) -> OrbitClass:
    """Elliptic, parabolic or hyperbolic by the trace of a unit-determinant matrix."""
    return classify_trace(np.trace(_unit_det(monodromy)), tol)


def multipliers(monodromy) -> tuple:
    ev = np.linalg.eigvals(_unit_det(monodromy))
    ev = sorted(ev, key=lambda z: (-abs(z), -z.imag))
    return tuple(complex(z) for z in ev)


def _canonical_sign(v):
    v = v / np.linalg.norm(v)
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def _dominant_eigvec(m):
    w, v = np.linalg.eig(m)
    return v[:, int(np.argmax(np.abs(w)))].real


def invariant_directions(monodromy, tol: float = PARABOLIC_TOL):
    """Unstable and stable eigendirections of a hyperbolic monodromy.

    Returns ``(unstable, stable, angle)`` where ``angle`` is the angle
    between the two lines, in (0, pi/2].
    """
    m = _unit_det(monodromy)
    cls = classify_trace(np.trace(m), tol)
    if cls is not OrbitClass.HYPERBOLIC:
        raise ClassificationError(f"invariant directions need a hyperbolic monodromy, got {cls.value}")
    # the stable line is the dominant eigenvector of the (exact) inverse,
    # which stays accurate when the multipliers are extreme
    inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
    u = _canonical_sign(_dominant_eigvec(m))
    s = _canonical_sign(_dominant_eigvec(inv))
    angle = math.acos(min(1.0, abs(float(u @ s))))
    return u, s, angle


# ---------------------------------------------------------------------------
# refinement


def _shoot(system, y, h, n, cfg, tangent=True):
    """Fixed-step-count run; ``h`` may vary continuously with the period."""
    if system.fast_path and cfg.scheme == "implicit-midpoint":
        poly = system.polynomial
        states, steps, status, last = _kernels.midpoint_run(
            poly.exponents, poly.coefficients, y, h, n, cfg.implicit_tol,
            cfg.implicit_max_iter, cfg.domain_radius, tangent,
        )
        if status == _kernels.STATUS_ESCAPE:
            raise EscapeError((last + 1) * h)
        if status == _kernels.STATUS_STIFF:
            raise StiffnessError(last * h)
        times = np.arange(n + 1) * h
        traj = Trajectory(times, states, _energy_series(system, states), cfg.scheme)
        return TangentTrajectory(traj, steps) if tangent else traj
    from .flow import integrate, integrate_tangent

    # generic path: integrate with step chosen so that exactly n steps are taken
    sub = cfg.with_step(h * (1 + 1e-12))
    return integrate_tangent(system, y, n * h, sub) if tangent else integrate(system, y, n * h, sub)


def _newton(system, x0, period, cfg, tol, max_iter, max_step, regularity_floor, energy=None):
    frame = normal_frame(system, x0, regularity_floor=regularity_floor)
    g = system.gradient(x0)
    basis = np.column_stack([frame.e1, frame.e2, g / np.linalg.norm(g)])
    n = max(1, int(math.ceil(period / cfg.step - 1e-9)))
    s = np.zeros(3)
    T = float(period)
    res = math.inf
    tt = None
    for _ in range(max_iter + 1):
        y = x0 + basis @ s
        tt = _shoot(system, y, T / n, n, cfg)
        end = tt.states[-1]
        F = end - y
        D = tt.jacobians[-1]
        M = np.column_stack([(D - np.eye(4)) @ basis, J @ system.gradient(end)])
        if energy is not None:
            F = np.append(F, system.energy(y) - energy)
            M = np.vstack([M, np.append(system.gradient(y) @ basis, 0.0)])
        res = float(np.linalg.norm(F))
        if res < tol:
            return y, T, res, tt, n
        delta = np.linalg.lstsq(M, -F, rcond=1e-12)[0]
        size = np.linalg.norm(delta)
        if size > max_step:
            delta *= max_step / size
        s += delta[:3]
        T += delta[3]
        if not T > 0:
            break
    raise RefinementError(f"Newton did not converge (residual {res:.3e} after {max_iter} iterations)")


def refine_periodic(system: HamiltonianSystem, candidate: RecurrenceCandidate,
                    cfg: Optional[IntegratorConfig] = None, *, max_gap: Optional[float] = None,
                    tol: float = 1e-10, max_iter: int = 30, max_step: float = 0.1,
                    divisors=range(2, 13), divisor_tol: float = 1e-8,
                    parabolic_tol: float = PARABOLIC_TOL,
                    regularity_floor: float = DEFAULT_REGULARITY_FLOOR,
                    fix_energy: bool = True, energy: Optional[float] = None) -> PeriodicOrbit:
    """Newton-refine a recurrence into a closed orbit and classify it.

    The unknowns are a point on the affine section through ``candidate.start``
    spanned by the normal frame and grad H, plus the return time.  With
    ``fix_energy`` (default) the equation H = ``energy`` joins the system,
    ``energy`` defaulting to H at the candidate start, so the orbit stays on
    that energy surface instead of sliding along its family.  Singular
    directions (isochronous families) are handled by least squares.  After
    convergence the return time is tested against its integer fractions
    T/k, k in ``divisors``; a fraction is accepted when Newton restarted at
    T/k converges back to the same point within ``divisor_tol``.

    Raises
    ------
    RefinementError
        Gap above ``max_gap`` or Newton failure.
    RegularityError
        The converged point is not regular.
    """
    cfg = cfg or DEFAULT_REFINE_CONFIG
    if max_gap is not None and candidate.gap > max_gap:
        raise RefinementError(f"candidate gap {candidate.gap:.3e} exceeds basin threshold {max_gap:.3e}")
    x0 = as_state(candidate.start)
    target = None
    if fix_energy:
        target = float(system.energy(x0)) if energy is None else float(energy)
    try:
        p, T, res, tt, n = _newton(system, x0, candidate.return_time, cfg, tol, max_iter, max_step,
                                   regularity_floor, target)
    except (EscapeError, StiffnessError) as exc:
        raise RefinementError(f"integration failed during Newton: {exc}") from exc

    # least period
    for k in sorted(divisors, reverse=True):
        t_k = T / k
        if t_k < 2 * cfg.step:
            continue
        probe = tt.base.at(t_k)
        if np.linalg.norm(probe - p) > 1e-5 * max(1.0, np.linalg.norm(p)):
            continue
        try:
            p2, T2, res2, tt2, n2 = _newton(system, p, t_k, cfg, tol, max_iter, max_step, regularity_floor,
                                            target)
        except (HamlabError, np.linalg.LinAlgError):
            continue
        if np.linalg.norm(p2 - p) < divisor_tol and abs(T2 - t_k) < divisor_tol:
            p, T, res, tt = p2, T2, res2, tt2
            break

    if np.linalg.norm(system.gradient(p)) < regularity_floor:
        raise RegularityError("converged orbit passes through a critical point")
    cocycle = transversal_cocycle(system, tt, regularity_floor)
    mono = frame_change(cocycle, 0, len(cocycle)) @ cocycle.accumulated[-1]
    cls = classify(mono, parabolic_tol)
    orbit = PeriodicOrbit(
        point=p, least_period=T, monodromy=mono, multipliers=multipliers(mono), orbit_class=cls,
        residual=res, energy=system.energy(p), cocycle=cocycle, trajectory=tt.base,
    )
    if cls is OrbitClass.HYPERBOLIC:
        orbit.unstable_dir, orbit.stable_dir, orbit.bundle_angle = invariant_directions(mono, parabolic_tol)
    return orbit


def same_orbit(a: PeriodicOrbit, b: PeriodicOrbit, tol: float = 1e-6) -> bool:
    """True when the periods match and b's point lies on a's sampled orbit."""
    if abs(a.least_period - b.least_period) > tol * max(1.0, a.least_period):
        return False
    if a.trajectory is None:
        return np.linalg.norm(a.point - b.point) < tol
    pts = a.trajectory.states
    seg = pts[1:] - pts[:-1]
    rel = b.point - pts[:-1]
    dd = np.einsum("ij,ij->i", seg, seg)
    w = np.clip(np.einsum("ij,ij->i", rel, seg) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    dist = np.linalg.norm(pts[:-1] + w[:, None] * seg - b.point, axis=1)
    return bool(dist.min() < tol)


def deduplicate(orbits, tol: float = 1e-6) -> list:
    unique = []
    for orb in orbits:
        if not any(same_orbit(u, orb, tol) for u in unique):
            unique.append(orb)
    return unique


def refine_many(system, candidates, cfg=None, workers: int = 1, **kwargs) -> list:
    """Refine candidates concurrently; returns orbits or exceptions in input order."""

    def task(c):
        try:
            return refine_periodic(system, c, cfg, **kwargs)
        except (HamlabError, np.linalg.LinAlgError) as exc:
            return exc

    if workers <= 1:
        return [task(c) for c in candidates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, candidates))
