"""Lyapunov exponents of 2x2 cocycles and the Oseledets growth sandwich."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError, HamlabError, NumericError
from .flow import IntegratorConfig, integrate_tangent
from .phase_space import DEFAULT_REGULARITY_FLOOR, HamiltonianSystem
from .transversal import transversal_cocycle

DEFAULT_THRESHOLD = 1e-2
LYAPUNOV_CONFIG = IntegratorConfig(step=1e-2)
SAMPLING_MEASURE = "box-uniform-projected"


@dataclass
class LyapunovEstimate:
    exponent: float
    series: np.ndarray  # (k, 2): t, log|A(t)| / t
    converged: bool
    window: float

    def record(self) -> dict:
        return {"exponent": self.exponent, "converged": self.converged, "window": self.window}


def _steps_times(cocycle):
    steps = np.ascontiguousarray(np.asarray(cocycle.steps, dtype=float).reshape(-1, 2, 2))
    return steps, np.asarray(cocycle.times, dtype=float)


def log_norms(cocycle, renorm_every: int = 1) -> np.ndarray:
    """log of the norm of the accumulated product after every step."""
    steps, _ = _steps_times(cocycle)
    out = _kernels.log_norm_series(steps, int(renorm_every))
    if not np.all(np.isfinite(out)):
        raise NumericError("log-norm series is not finite despite renormalization")
    return out


def top_exponent(cocycle, renorm_every: int = 10, tail: float = 0.1) -> LyapunovEstimate:
    """Top Lyapunov exponent per unit time.

    The series holds log|A(t)|/t at the end of every renormalization block;
    the exponent is the average over the last ``tail`` fraction of it.
    ``converged`` compares the averages of the last two such windows.
    """
    steps, times = _steps_times(cocycle)
    n = len(steps)
    if renorm_every < 1 or n < 10 * renorm_every:
        raise ContractError(f"need at least 10 renormalization blocks ({10 * renorm_every} steps), got {n}")
    ln = log_norms(cocycle, renorm_every)
    ends = np.arange(renorm_every - 1, n, renorm_every)
    t = times[ends + 1] - times[0]
    series = np.column_stack([t, ln[ends] / t])
    k = max(1, int(round(tail * len(series))))
    last = series[-k:, 1]
    prev = series[-2 * k:-k, 1] if len(series) >= 2 * k else series[:k, 1]
    exponent = float(np.mean(last))
    converged = bool(abs(exponent - float(np.mean(prev))) < 1e-3)
    return LyapunovEstimate(exponent, series, converged, float(t[-1] - series[-k, 0]))


class _Steps:
    def __init__(self, steps, times):
        self.steps, self.times = steps, times


def inverse_transpose(cocycle):
    """Cocycle of inverse-transposed steps; its top exponent is minus the bottom one."""
    steps, times = _steps_times(cocycle)
    a, b, c, d = steps[:, 0, 0], steps[:, 0, 1], steps[:, 1, 0], steps[:, 1, 1]
    det = a * d - b * c
    inv_t = np.stack([np.stack([d, -c], axis=1), np.stack([-b, a], axis=1)], axis=1) / det[:, None, None]
    return _Steps(inv_t, times)


def bottom_exponent(cocycle, renorm_every: int = 10) -> LyapunovEstimate:
    est = top_exponent(inverse_transpose(cocycle), renorm_every)
    return LyapunovEstimate(-est.exponent, est.series * np.array([1.0, -1.0]), est.converged, est.window)


def oseledets_sandwich(cocycle, delta: float) -> Optional[float]:
    """Smallest sample time t_x with exp(-delta t) < |A(t)| < exp(delta t) for all later samples.

    Only samples with t > 0 are considered (at t = 0 both sides equal 1).
    Returns None when the bound fails at the final sample.
    """
    if not delta > 0:
        raise ContractError("delta must be positive")
    steps, times = _steps_times(cocycle)
    ln = log_norms(cocycle, 1)
    t = times[1:] - times[0]
    ok = (ln < delta * t) & (ln > -delta * t)
    if not ok[-1]:
        return None
    bad = np.nonzero(~ok)[0]
    first = 0 if len(bad) == 0 else int(bad[-1]) + 1
    return float(times[first + 1])


# ---------------------------------------------------------------------------
# energy-surface sampling


def project_to_level(system: HamiltonianSystem, x, energy: float, tol: float = 1e-10, max_iter: int = 50):
    """Newton projection along grad H onto H = energy; None on failure."""
    x = np.array(x, dtype=float)
    for _ in range(max_iter):
        err = system.energy(x) - energy
        if abs(err) < tol:
            return x
        g = system.gradient(x)
        gg = g @ g
        if gg == 0 or not np.isfinite(gg):
            return None
        x = x - err * g / gg
        if not np.all(np.isfinite(x)):
            return None
    return x if abs(system.energy(x) - energy) < tol else None


def sample_energy_surface(system: HamiltonianSystem, energy: float, count: int, rng, box=None,
                          max_attempts: int = 50, regularity_floor: float = DEFAULT_REGULARITY_FLOOR):
    """Draw points on H^{-1}(energy) inside ``box``.

    Uniform draws in the box are Newton-projected along grad H; draws whose
    projection fails, leaves the box or lands near a critical point are
    rejected.  Returns ``(points, skipped)`` where ``skipped`` counts samples
    that exhausted ``max_attempts``.  The resulting distribution is the
    box-uniform-projected measure, not the invariant measure on the surface.
    """
    lo, hi = _box_bounds(system, box)
    points, skipped = [], 0
    for _ in range(count):
        for _ in range(max_attempts):
            x = rng.uniform(lo, hi)
            y = project_to_level(system, x, energy)
            if y is None or np.any(y < lo) or np.any(y > hi):
                continue
            if np.linalg.norm(system.gradient(y)) < regularity_floor:
                continue
            points.append(y)
            break
        else:
            skipped += 1
    return np.array(points).reshape(-1, 4), skipped


def _box_bounds(system, box):
    if box is None:
        r = system.default_box
        return np.full(4, -r), np.full(4, r)
    box = np.asarray(box, dtype=float)
    if box.shape == (4, 2):
        return box[:, 0], box[:, 1]
    if box.shape == (2, 4):
        return box[0], box[1]
    raise ContractError("box must be shaped (4, 2) as [[lo, hi], ...] per coordinate")


def make_rng(seed):
    """Counter-based generator (Philox-4x64) seeded through SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ZeroExponentResult:
    fraction: float
    exponents: np.ndarray
    points: np.ndarray
    skipped: int
    threshold: float
    horizon: float
    sampling_measure: str = SAMPLING_MEASURE
    failures: list = field(default_factory=list)

    def record(self) -> dict:
        return {
            "fraction": None if math.isnan(self.fraction) else self.fraction,
            "estimated": int(len(self.exponents)),
            "skipped": int(self.skipped),
            "threshold": self.threshold,
            "horizon": self.horizon,
            "sampling_measure": self.sampling_measure,
        }


def exponent_from_point(system, x, horizon, cfg=None, renorm_every=10) -> LyapunovEstimate:
    tt = integrate_tangent(system, x, horizon, cfg or LYAPUNOV_CONFIG)
    return top_exponent(transversal_cocycle(system, tt), renorm_every)


def zero_exponent_fraction(system: HamiltonianSystem, energy: float, samples: int,
                           threshold: float = DEFAULT_THRESHOLD, horizon: float = 1000.0, seed=0, *,
                           box=None, cfg: Optional[IntegratorConfig] = None, renorm_every: int = 10,
                           workers: int = 1) -> ZeroExponentResult:
    """Fraction of sampled points on H^{-1}(energy) with |top exponent| < threshold.

    Samples whose projection or integration fails are skipped and tallied.
    """
    if samples < 1:
        raise ContractError("samples must be >= 1")
    rng = make_rng(seed)
    points, skipped = sample_energy_surface(system, energy, samples, rng, box)

    def task(x):
        try:
            return exponent_from_point(system, x, horizon, cfg, renorm_every).exponent
        except HamlabError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, points))
    else:
        results = [task(x) for x in points]
    exps = np.array([r for r in results if not isinstance(r, Exception)])
    failures = [str(r) for r in results if isinstance(r, Exception)]
    skipped += len(failures)
    frac = float(np.mean(np.abs(exps) < threshold)) if len(exps) else math.nan
    kept = np.array([x for x, r in zip(points, results) if not isinstance(r, Exception)]).reshape(-1, 4)
    return ZeroExponentResult(frac, exps, kept, skipped, threshold, horizon, failures=failures)
