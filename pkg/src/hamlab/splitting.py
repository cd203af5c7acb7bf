"""The m-dominated splitting test on sampled cocycles.

A splitting N = N- (+) N+ is m-dominated on a sample set when

    |Phi^m restricted to N-| / |Phi^m restricted to N+|  <=  1/2

at every sample.  Only finite orbit segments and closed orbits are tested;
no statement is made about invariant sets beyond the samples.  ``m`` counts
cocycle steps; reports also give it in time units.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConditioningError, ContractError, HamlabError, WindowRangeError
from .orbits import (OrbitClass, PeriodicOrbit, RecurrenceCandidate, invariant_directions,
                     refine_periodic)
from .phase_space import HamiltonianSystem, function_system, polynomial_system

DOMINATION_BOUND = 0.5
DEGENERACY_GAP = 1e-10


def _steps_times(cocycle):
    steps = np.ascontiguousarray(np.asarray(cocycle.steps, dtype=float).reshape(-1, 2, 2))
    times = np.asarray(cocycle.times, dtype=float)
    return steps, times


def window_product(steps, start, length, periodic=False):
    n = len(steps)
    m = np.eye(2)
    for k in range(start, start + length):
        if k >= n:
            if not periodic:
                raise WindowRangeError("window runs past the end of the cocycle")
            k %= n
        m = steps[k] @ m
    return m


def _canon(v):
    v = v / np.linalg.norm(v)
    if abs(v[0]) > 1e-12:
        return v if v[0] > 0 else -v
    return v if v[1] > 0 else -v


@dataclass
class FiniteTimeDirections:
    indices: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    degenerate: np.ndarray
    window_steps: int


def finite_time_directions(cocycle, window: Optional[float] = None, *, window_steps: Optional[int] = None,
                           periodic: bool = False) -> FiniteTimeDirections:
    """Most and least expanded initial directions over a forward window.

    ``plus``/``minus`` are the right singular vectors of the window product
    for the largest/smallest singular value.  When the singular values are
    within 1e-10 of each other the sample is flagged degenerate and the
    canonical basis is returned.
    """
    steps, times = _steps_times(cocycle)
    n = len(steps)
    if window_steps is None:
        if window is None:
            raise ContractError("give window (time) or window_steps")
        dt = (times[-1] - times[0]) / n
        window_steps = int(round(window / dt))
    if window_steps < 1:
        raise WindowRangeError("window must span at least 2 samples")
    if window_steps > n and not periodic:
        raise WindowRangeError(f"window of {window_steps} steps exceeds cocycle length {n}")
    last = n if periodic else n - window_steps + 1
    idx = np.arange(last)
    plus = np.empty((last, 2))
    minus = np.empty((last, 2))
    degenerate = np.zeros(last, dtype=bool)
    for r, i in enumerate(idx):
        a = window_product(steps, int(i), window_steps, periodic)
        _, sv, vt = np.linalg.svd(a)
        if sv[0] - sv[1] < DEGENERACY_GAP:
            degenerate[r] = True
            plus[r], minus[r] = (1.0, 0.0), (0.0, 1.0)
        else:
            plus[r], minus[r] = _canon(vt[0]), _canon(vt[1])
    return FiniteTimeDirections(idx, plus, minus, degenerate, window_steps)


def domination_ratio(cocycle, sample_index: int, m_steps: int, plus_dir, minus_dir) -> float:
    steps, _ = _steps_times(cocycle)
    if sample_index < 0 or sample_index + m_steps > len(steps):
        raise WindowRangeError("sample_index + m_steps outside the cocycle")
    a = window_product(steps, sample_index, m_steps)
    num = np.linalg.norm(a @ (np.asarray(minus_dir, float) / np.linalg.norm(minus_dir)))
    den = np.linalg.norm(a @ (np.asarray(plus_dir, float) / np.linalg.norm(plus_dir)))
    if den == 0 or not np.isfinite(den):
        raise ConditioningError("zero or non-finite denominator in domination ratio")
    return float(num / den)


@dataclass
class SplittingReport:
    m_tested: range
    ratios: np.ndarray  # (n_samples, m_max), NaN where the window is not admissible
    samples: np.ndarray
    minimal_m: Optional[int]
    dominated: bool
    directions_source: str
    step_duration: float
    degenerate_count: int = 0
    periodic: bool = False
    scope: str = "finite orbit segment"

    def ratio(self, sample_index: int, m: int) -> float:
        r = int(np.nonzero(self.samples == sample_index)[0][0])
        return float(self.ratios[r, m - 1])

    @property
    def max_ratio_by_m(self) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = np.full(self.ratios.shape[1], np.nan)
            for c in range(self.ratios.shape[1]):
                col = self.ratios[:, c]
                col = col[np.isfinite(col)]
                if len(col):
                    out[c] = col.max()
        return out

    @property
    def minimal_m_time(self) -> Optional[float]:
        return None if self.minimal_m is None else self.minimal_m * self.step_duration

    def record(self) -> dict:
        curve = [None if not np.isfinite(v) else float(v) for v in self.max_ratio_by_m]
        return {
            "scope": self.scope,
            "m_max": int(self.m_tested.stop - 1),
            "minimal_m_steps": self.minimal_m,
            "minimal_m_time": self.minimal_m_time,
            "dominated": self.dominated,
            "directions_source": self.directions_source,
            "step_duration": float(self.step_duration),
            "degenerate_samples": int(self.degenerate_count),
            "max_ratio_by_m": curve,
        }


def transported_eigendirections(cocycle, monodromy=None):
    """Invariant directions of a closed-orbit cocycle carried along every sample.

    The unstable line is pushed forward from sample 0 and the stable line is
    pulled back from sample N; each transport is then contracting, so
    rounding errors do not grow.
    """
    steps, _ = _steps_times(cocycle)
    if monodromy is None:
        monodromy = window_product(steps, 0, len(steps))
    u, s, _ = invariant_directions(monodromy)
    n = len(steps)
    plus, minus = np.empty((n, 2)), np.empty((n, 2))
    for k in range(n):
        plus[k] = u
        u = steps[k] @ u
        u = u / np.linalg.norm(u)
    for k in range(n - 1, -1, -1):
        s = np.linalg.solve(steps[k], s)
        s = s / np.linalg.norm(s)
        minus[k] = s
    return plus, minus


def minimal_m(cocycle, m_max: int, directions="svd", *, window_steps: Optional[int] = None,
              monodromy=None, periodic: bool = False) -> SplittingReport:
    """Smallest m <= m_max with ratio <= 1/2 at every admissible sample.

    ``directions`` is ``"svd"`` (finite-time singular directions over
    ``window_steps``, default ``m_max`` clipped to the length),
    ``"eigenvectors"`` (monodromy eigenvectors transported along a closed
    orbit, implies ``periodic``) or an explicit ``(plus, minus)`` pair of
    per-sample arrays.
    """
    if m_max < 1:
        raise ContractError("m_max must be >= 1")
    steps, times = _steps_times(cocycle)
    n = len(steps)
    degenerate = 0
    if isinstance(directions, str) and directions == "svd":
        w = window_steps or min(m_max, n)
        ftd = finite_time_directions(cocycle, window_steps=min(w, n) if not periodic else w, periodic=periodic)
        samples, plus, minus = ftd.indices, ftd.plus, ftd.minus
        degenerate = int(ftd.degenerate.sum())
        source = "finite-time-SVD"
    elif isinstance(directions, str) and directions == "eigenvectors":
        plus, minus = transported_eigendirections(cocycle, monodromy)
        samples = np.arange(n)
        periodic = True
        source = "eigenvectors"
    elif isinstance(directions, str):
        raise ContractError(f"unknown directions source {directions!r}")
    else:
        plus, minus = (np.asarray(d, dtype=float).reshape(-1, 2) for d in directions)
        samples = np.arange(len(plus))
        source = "explicit"
    plus = plus / np.linalg.norm(plus, axis=1, keepdims=True)
    minus = minus / np.linalg.norm(minus, axis=1, keepdims=True)
    with np.errstate(all="ignore"):
        table = _kernels.ratio_table(steps, samples.astype(np.int64), np.ascontiguousarray(plus),
                                     np.ascontiguousarray(minus), int(m_max), bool(periodic))
    found = None
    for m in range(1, m_max + 1):
        col = table[:, m - 1]
        col = col[~np.isnan(col)]
        if len(col) and np.all(col <= DOMINATION_BOUND):
            found = m
            break
    dt = float((times[-1] - times[0]) / n)
    return SplittingReport(range(1, m_max + 1), table, samples, found, found is not None, source, dt,
                           degenerate, periodic, "closed orbit" if periodic else "finite orbit segment")


# ---------------------------------------------------------------------------
# robustness


@dataclass
class ProbeResult:
    fraction: float
    retained: int
    surviving: int
    continuation_failures: int
    trials: int
    m: int
    m_prime: int
    details: list = field(default_factory=list)


def orbit_splitting(orbit: PeriodicOrbit, m_max: int = 64, unit: float = 1.0) -> SplittingReport:
    """Domination test of a hyperbolic closed orbit at about ``unit``-time steps."""
    if orbit.orbit_class is not OrbitClass.HYPERBOLIC or orbit.cocycle is None:
        raise ContractError("orbit_splitting needs a refined hyperbolic orbit")
    coarse = orbit.cocycle.coarsen_to(unit)
    mono = window_product(coarse.steps, 0, len(coarse.steps))
    return minimal_m(coarse, m_max, "eigenvectors", monodromy=mono)


def jittered_system(system: HamiltonianSystem, jitter: float, rng, center=None) -> HamiltonianSystem:
    """Copy of ``system`` with coefficients (or a smooth bump) moved by at most ``jitter``."""
    if jitter == 0:
        return system
    if system.polynomial is not None:
        poly = system.polynomial
        offsets = rng.uniform(-jitter, jitter, size=len(poly.coefficients))
        table = {tuple(e): c + o for e, c, o in zip(poly.exponents.tolist(), poly.coefficients, offsets)}
        return polynomial_system(table, name=f"{system.name}~", gradient_mode=system.gradient_mode,
                                 fd_step=system.fd_step, default_box=system.default_box)
    amp = rng.uniform(-jitter, jitter)
    c = np.zeros(4) if center is None else np.asarray(center, float) + rng.normal(scale=0.1, size=4)
    width2 = 0.25

    def bump(x):
        return amp * np.exp(-np.sum((x - c) ** 2) / (2 * width2))

    def energy(x):
        return system.energy_fn(x) + bump(x)

    def gradient(x):
        return system.gradient(x) - bump(x) * (x - c) / width2

    return function_system(f"{system.name}~", energy, gradient, fd_step=system.fd_step,
                           default_box=system.default_box)


def robustness_probe(system: HamiltonianSystem, orbit: PeriodicOrbit, jitter: float, trials: int,
                     seed: int = 0, *, cfg=None, m_max: int = 64, unit: float = 1.0,
                     workers: int = 1) -> ProbeResult:
    """Fraction of jittered systems whose continued orbit stays dominated at m' = 2m.

    Each trial perturbs the Hamiltonian by at most ``jitter``, re-finds the
    orbit by Newton from the original point and period, and tests the
    domination inequality at twice the original minimal m.  Continuation
    failures are reported separately and excluded from the fraction.  This
    is a finite-sample stand-in for persistence of domination under C^2
    perturbation, not a proof of it.
    """
    base = orbit_splitting(orbit, m_max, unit)
    if not base.dominated:
        raise ContractError("robustness_probe needs an orbit dominated at some m <= m_max")
    m = base.minimal_m
    m_prime = 2 * m
    seeds = np.random.SeedSequence(seed).spawn(trials)
    seed_point = RecurrenceCandidate(orbit.point, orbit.least_period, 0.0)

    def trial(ss):
        rng = np.random.Generator(np.random.Philox(ss))
        perturbed = jittered_system(system, jitter, rng, orbit.point)
        try:
            cont = refine_periodic(perturbed, seed_point, cfg)
        except (HamlabError, np.linalg.LinAlgError) as exc:
            return ("failed", str(exc))
        if cont.orbit_class is not OrbitClass.HYPERBOLIC:
            return ("lost", cont.orbit_class.value)
        rep = orbit_splitting(cont, max(m_max, m_prime), unit)
        col = rep.ratios[:, m_prime - 1]
        ok = bool(np.all(col[~np.isnan(col)] <= DOMINATION_BOUND))
        return ("retained" if ok else "lost", float(np.nanmax(col)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            details = list(pool.map(trial, seeds))
    else:
        details = [trial(ss) for ss in seeds]
    failures = sum(1 for d in details if d[0] == "failed")
    retained = sum(1 for d in details if d[0] == "retained")
    surviving = trials - failures
    fraction = retained / surviving if surviving else math.nan
    return ProbeResult(fraction, retained, surviving, failures, trials, m, m_prime, details)
