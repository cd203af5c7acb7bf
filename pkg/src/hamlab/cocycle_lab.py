"""Perturbation experiments on unit-determinant 2x2 cocycles.

Everything here happens at the level of the linear cocycle: rotations
that turn a hyperbolic product elliptic, rotations that carry an unstable
line onto a stable one, and the two-stage taming of a non-dominated
cocycle.  No modification is ever realized as a change of a Hamiltonian.

The size of a per-step modification ``M`` applied as ``A -> M A`` is its
operator distance ``|M - I|`` in the spectral norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import BudgetError, ContractError
from .orbits import OrbitClass, classify_trace
from .splitting import DOMINATION_BOUND, minimal_m

LAB_M = 8
DEFAULT_THETA_FLOOR = 0.1
DEFAULT_BUDGET = 0.05
ELLIPTIC_MARGIN = 1e-3
DET_TOL = 1e-9
BISECTION_TOL = 1e-12


def rotation(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s], [s, c]])


def stretch(eta: float, axis=(1.0, 0.0)) -> np.ndarray:
    """Shrink ``axis`` by exp(-eta) and expand its normal by exp(eta)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    frame = np.array([[a[0], -a[1]], [a[1], a[0]]])
    return frame @ np.diag([math.exp(-eta), math.exp(eta)]) @ frame.T


def operator_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float), 2))


def _adjugate(m):
    """Inverse of unit-determinant 2x2 matrices (batched), computed exactly."""
    out = np.empty_like(m)
    out[..., 0, 0], out[..., 1, 1] = m[..., 1, 1], m[..., 0, 0]
    out[..., 0, 1], out[..., 1, 0] = -m[..., 0, 1], -m[..., 1, 0]
    return out


def _renormalize(steps) -> np.ndarray:
    steps = np.array(steps, dtype=float).reshape(-1, 2, 2)
    det = np.linalg.det(steps)
    if np.any(~np.isfinite(det)) or np.any(det <= 0):
        raise ContractError("cocycle steps need a positive determinant")
    return steps / np.sqrt(det)[:, None, None]


@dataclass
class AbstractCocycle:
    """A finite sequence of SL(2,R) steps, each lasting ``step_duration``."""

    steps: np.ndarray
    step_duration: float = 1.0

    def __post_init__(self):
        self.steps = _renormalize(self.steps)
        if len(self.steps) == 0:
            raise ContractError("cocycle needs at least one step")

    @classmethod
    def constant(cls, matrix, length: int, step_duration: float = 1.0) -> "AbstractCocycle":
        return cls(np.tile(np.asarray(matrix, float), (int(length), 1, 1)), step_duration)

    @classmethod
    def coerce(cls, cocycle) -> "AbstractCocycle":
        if isinstance(cocycle, cls):
            return cocycle
        steps = np.asarray(cocycle.steps, dtype=float)
        times = getattr(cocycle, "times", None)
        dt = 1.0 if times is None else float((times[-1] - times[0]) / len(steps))
        return cls(steps, dt)

    def __len__(self):
        return len(self.steps)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.steps) + 1) * self.step_duration

    @property
    def accumulated(self) -> np.ndarray:
        """``accumulated[k]`` = steps[k-1] ... steps[0]; ``accumulated[0] = I``."""
        with np.errstate(over="ignore", invalid="ignore"):
            return _kernels.cumulative_products(np.ascontiguousarray(self.steps))

    def total(self) -> np.ndarray:
        return self.accumulated[-1]

    def sup_norm(self) -> float:
        """Largest spectral norm among the accumulated products."""
        return float(np.max(np.linalg.norm(self.accumulated, ord=2, axis=(1, 2))))


@dataclass(frozen=True)
class Modification:
    index: int
    kind: str  # "rotation" or "stretch"
    parameter: float
    matrix: np.ndarray

    @property
    def distance(self) -> float:
        return operator_distance(self.matrix, np.eye(2))


@dataclass
class PerturbationSchedule:
    """Per-step modifications applied on the left of the cocycle steps.

    Rotation entries may be conjugated into the frame carried by the
    cocycle (then ``matrix`` is not a plain rotation); their ``parameter`` is
    still the rotation angle.  Several entries at one index compose in the
    order they were added.
    """

    budget: float
    entries: list = field(default_factory=list)

    def add(self, index, kind, parameter, matrix):
        self.entries.append(Modification(int(index), kind, float(parameter), np.asarray(matrix, float)))

    def extend(self, other: "PerturbationSchedule"):
        self.entries.extend(other.entries)

    def __len__(self):
        return len(self.entries)

    def _by_kind(self, kind):
        out: dict = {}
        for e in self.entries:
            if e.kind == kind:
                out[e.index] = out.get(e.index, 0.0) + e.parameter
        return out

    @property
    def rotations(self) -> dict:
        """index -> angle (summed when an index carries several rotations)."""
        return self._by_kind("rotation")

    @property
    def stretches(self) -> dict:
        """index -> eta."""
        return self._by_kind("stretch")

    def modifications(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out[e.index] = e.matrix @ out.get(e.index, np.eye(2))
        return out

    def distances(self) -> dict:
        return {k: operator_distance(m, np.eye(2)) for k, m in self.modifications().items()}

    def max_distance(self) -> float:
        d = self.distances()
        return max(d.values()) if d else 0.0

    def within_budget(self) -> bool:
        return self.max_distance() <= self.budget * (1 + 1e-12)

    def apply(self, cocycle) -> AbstractCocycle:
        c = AbstractCocycle.coerce(cocycle)
        steps = c.steps.copy()
        for k, m in self.modifications().items():
            if not 0 <= k < len(steps):
                raise ContractError(f"schedule index {k} outside the cocycle")
            steps[k] = m @ steps[k]
        return AbstractCocycle(steps, c.step_duration)

    def rows(self) -> list:
        """(index, kind, parameter, operator distance) per entry."""
        return [(e.index, e.kind, e.parameter, e.distance) for e in self.entries]

    def to_text(self) -> str:
        lines = ["index,kind,parameter,distance"]
        lines += [f"{i},{k},{p:.17g},{d:.17g}" for i, k, p, d in self.rows()]
        return "\n".join(lines) + "\n"


def _checked(schedule: PerturbationSchedule) -> PerturbationSchedule:
    if not schedule.within_budget():
        raise BudgetError(f"schedule distance {schedule.max_distance():.6g} exceeds budget {schedule.budget:g}")
    return schedule


def _unit_matrix(m, what="matrix"):
    m = np.asarray(m, dtype=float).reshape(2, 2)
    if not abs(np.linalg.det(m) - 1.0) <= DET_TOL:
        raise ContractError(f"{what} must have determinant 1 (got {np.linalg.det(m):.12g})")
    return m


# ---------------------------------------------------------------------------
# rotation ellipticization


def _first_angle(m, level: float, alpha_max: float, sign: float = 1.0) -> Optional[float]:
    """Smallest alpha in [0, alpha_max] with |trace(R_{sign*alpha} m)| < level.

    trace(R_a m) = A cos a + B sin a.  Its zeros are known in closed form,
    which brackets the first entry into the band; bisection then refines
    the boundary.  The bisection tests the rounded matrix product itself, so
    the returned angle is strictly inside the band as callers evaluate it.
    """
    a = m[0, 0] + m[1, 1]
    b = sign * (m[0, 1] - m[1, 0])

    def tr(x):
        return np.trace(rotation(sign * x) @ m)

    if abs(a) < level:
        return 0.0
    rho = math.hypot(a, b)
    if rho <= level:
        return 0.0
    phi = math.atan2(b, a)
    w = math.asin(level / rho)
    k = math.ceil((w - phi - math.pi / 2) / math.pi)
    z = phi + math.pi / 2 + k * math.pi
    while z - w <= 0:
        z += math.pi
    if z - w > alpha_max + 1e-9:
        return None
    lo, hi = max(0.0, z - math.pi / 2), z
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if abs(tr(mid)) < level:
            hi = mid
        else:
            lo = mid
    return hi if hi <= alpha_max else None


def ellipticize_by_rotation(monodromy, alpha_max: float = math.pi / 2) -> Optional[float]:
    """Smallest alpha in [0, alpha_max] making R_alpha @ monodromy elliptic.

    The value is the boundary of the elliptic band, accurate to about 1e-12.
    Returns 0.0 for a matrix that is already elliptic and None when no angle
    up to ``alpha_max`` works.
    """
    m = _unit_matrix(monodromy, "monodromy")
    if not 0 < alpha_max <= math.pi / 2 + 1e-15:
        raise ContractError("alpha_max must lie in (0, pi/2]")
    return _first_angle(m, 2.0, alpha_max)


# ---------------------------------------------------------------------------
# direction swap


def _max_angle(budget):
    """Largest rotation angle whose operator distance to I is within budget."""
    return 2 * math.asin(min(1.0, budget / 2))


def _unit(v, what):
    v = np.asarray(v, dtype=float).reshape(2)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ContractError(f"{what} must be nonzero")
    return v / n


def _swap_roots(steps, u, s):
    """Signed uniform angles alpha in [-pi/2, pi/2] for which
    prod_k (R_alpha A_k) maps u onto the line of s."""
    n = len(steps)
    g = max(4001, 64 * n + 1)
    alphas = np.linspace(-math.pi / 2, math.pi / 2, g)
    c, sn = np.cos(alphas), np.sin(alphas)
    v = np.tile(u, (g, 1))
    for a in steps:
        v = v @ a.T
        v = np.column_stack([c * v[:, 0] - sn * v[:, 1], sn * v[:, 0] + c * v[:, 1]])
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    theta = np.unwrap(np.arctan2(v[:, 1], v[:, 0]), period=math.pi)
    target = math.atan2(s[1], s[0])
    level = np.floor((theta - target) / math.pi)
    idx = np.nonzero(np.diff(level) != 0)[0]

    def cross(alpha):
        r = rotation(alpha)
        x = u
        for a in steps:
            x = r @ (a @ x)
            x = x / np.linalg.norm(x)
        return s[0] * x[1] - s[1] * x[0]

    roots = []
    for i in idx:
        lo, hi = float(alphas[i]), float(alphas[i + 1])
        flo = cross(lo)
        if flo == 0:
            roots.append(lo)
            continue
        for _ in range(200):
            if hi - lo <= BISECTION_TOL:
                break
            mid = 0.5 * (lo + hi)
            fm = cross(mid)
            if (fm > 0) == (flo > 0):
                lo, flo = mid, fm
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    return roots


def swap_directions(cocycle, window, u_dir, s_dir, budget: float) -> PerturbationSchedule:
    """Equal rotations over ``window`` so the window product carries u_dir onto the s_dir line.

    ``window`` is a ``(start, stop)`` pair of step indices.  The smallest
    admissible angle is chosen.  When it exceeds what ``budget`` allows per
    step, BudgetError reports the window length at which the same total
    angle would fit.
    """
    c = AbstractCocycle.coerce(cocycle)
    start, stop = (window.start, window.stop) if isinstance(window, range) else (int(window[0]), int(window[1]))
    if stop - start < 1:
        raise ContractError("window must contain at least one step")
    if start < 0 or stop > len(c):
        raise ContractError("window outside the cocycle")
    if not budget > 0:
        raise ContractError("budget must be positive")
    u, s = _unit(u_dir, "u_dir"), _unit(s_dir, "s_dir")
    if abs(u[0] * s[1] - u[1] * s[0]) < 1e-12:
        raise ContractError("u_dir and s_dir span the same line")
    steps = c.steps[start:stop]
    roots = _swap_roots(steps, u, s)
    if not roots:  # cannot happen for det-1 steps; kept as a guard
        raise BudgetError("no swapping angle found", None)
    alpha = min(roots, key=lambda a: (abs(a), -a))
    cap = _max_angle(budget)
    n = stop - start
    if abs(alpha) > cap:
        need = math.ceil(n * abs(alpha) / cap - 1e-12)
        raise BudgetError(f"swap needs {abs(alpha):.6g} rad per step, budget allows {cap:.6g}", need)
    sched = PerturbationSchedule(budget)
    r = rotation(alpha)
    for k in range(start, stop):
        sched.add(k, "rotation", alpha, r)
    return _checked(sched)


# ---------------------------------------------------------------------------
# franks step


def franks_step(step, target, delta: float) -> np.ndarray:
    """Accept ``target`` as the realized step if it is within ``delta`` of ``step``.

    At the level of linear cocycles every unit-determinant matrix close to
    the original step is directly realizable, so the result is ``target``;
    the call documents and checks the replacement.
    """
    t = _unit_matrix(target, "target")
    d = operator_distance(step, t)
    if d > delta:
        raise BudgetError(f"target is {d:.6g} from the step, more than delta={delta:g}")
    return t.copy()


# ---------------------------------------------------------------------------
# taming


@dataclass
class TameResult:
    schedule: PerturbationSchedule
    final_class: OrbitClass
    K: float
    final_product: np.ndarray
    swaps: int = 0
    family: Optional[str] = None
    perturbed: Optional[AbstractCocycle] = None

    def __iter__(self):
        yield self.schedule
        yield self.final_class

    def record(self) -> dict:
        return {
            "final_class": self.final_class.value,
            "K": self.K,
            "final_norm": float(np.linalg.norm(self.final_product, 2)),
            "trace": float(np.trace(self.final_product)),
            "swaps": self.swaps,
            "family": self.family,
            "budget": self.schedule.budget,
            "max_distance": self.schedule.max_distance(),
            "entries": len(self.schedule),
        }


def _trace_class(m) -> OrbitClass:
    return classify_trace(float(np.trace(m)))


def _bundle_directions(c: AbstractCocycle, total):
    """Unstable/stable lines of a hyperbolic total product, carried to every sample."""
    def dominant(m):
        w, v = np.linalg.eig(m)
        return v[:, int(np.argmax(np.abs(w)))].real

    scale = np.linalg.norm(total)
    u = dominant(total / scale)
    s = dominant(_adjugate(total) / scale)
    n = len(c)
    plus, minus = np.empty((n, 2)), np.empty((n, 2))
    for k in range(n):
        plus[k] = u / np.linalg.norm(u)
        u = c.steps[k] @ plus[k]
    for k in range(n - 1, -1, -1):
        s = _adjugate(c.steps[k]) @ s
        s = s / np.linalg.norm(s)
        minus[k] = s
    return plus, minus


def check_tame_preconditions(cocycle, theta_floor: float = DEFAULT_THETA_FLOOR, m: int = LAB_M):
    """Raise ContractError when the cocycle is m-dominated or its bundles get too close.

    Domination is tested at exactly ``m`` with finite-time singular
    directions over non-wrapping windows; cocycles shorter than ``m`` pass
    vacuously.  The angle test uses the unstable and stable lines of the
    total product, which exist only when that product is hyperbolic.
    """
    c = AbstractCocycle.coerce(cocycle)
    if len(c) >= m:
        rep = minimal_m(c, m, "svd", window_steps=m)
        col = rep.ratios[:, m - 1]
        col = col[np.isfinite(col)]
        if len(col) and np.all(col <= DOMINATION_BOUND):
            raise ContractError(f"cocycle is {m}-dominated (max ratio {col.max():.3g})")
    total = c.total()
    if _trace_class(total) is OrbitClass.HYPERBOLIC and np.all(np.isfinite(total)):
        plus, minus = _bundle_directions(c, total)
        angles = np.arccos(np.clip(np.abs(np.sum(plus * minus, axis=1)), 0.0, 1.0))
        k = int(np.argmin(angles))
        if angles[k] < theta_floor:
            raise ContractError(f"bundle angle {angles[k]:.3g} < theta_floor {theta_floor:g} at step {k}")


def _stretch_total(p, level):
    """Smallest t >= 0 with |trace(p G(t))| < level, G(t) = V diag(e^-t, e^t) V^T."""
    _, sv, vt = np.linalg.svd(p)
    v = vt.T
    hi = 2 * math.log(max(sv[0], 1.0)) + 1.0

    def f(t):
        return np.trace(p @ v @ np.diag([math.exp(-t), math.exp(t)]) @ v.T)

    grid = np.linspace(0.0, hi, 2001)
    vals = np.array([abs(f(t)) for t in grid])
    inside = np.nonzero(vals < level)[0]
    if len(inside) == 0:
        return None, v
    i = int(inside[0])
    if i == 0:
        return 0.0, v
    lo, up = float(grid[i - 1]), float(grid[i])
    while up - lo > BISECTION_TOL:
        mid = 0.5 * (lo + up)
        if abs(f(mid)) < level:
            up = mid
        else:
            lo = mid
    return up, v


def _stage2(c: AbstractCocycle, budget: float, margin: float, used: np.ndarray):
    """Telescoping correction: step k is modified by B_{k+1} G B_{k+1}^{-1}.

    With B the accumulated products, the perturbed total is exactly
    P G^N, so a total rotation (or stretch along the singular frame of P)
    is spread evenly along the cocycle.  Returns the best feasible plan or
    None together with the smallest maximal distance seen.
    """
    n = len(c)
    b = c.accumulated
    p = b[-1]
    level = 2.0 - margin
    plans = []
    for sign in (1.0, -1.0):
        a = _first_angle(p, level, math.pi / 2, sign)
        if a is not None:
            plans.append(("rotation", sign * a / n, rotation(sign * a / n)))
    t, v = _stretch_total(p, level)
    if t is not None:
        eta = t / n
        plans.append(("stretch", eta, v @ np.diag([math.exp(-eta), math.exp(eta)]) @ v.T))
    best, best_dist = None, math.inf
    inv = _adjugate(b[1:])
    for kind, param, g in plans:
        with np.errstate(over="ignore", invalid="ignore"):
            mods = np.matmul(np.matmul(b[1:], g), inv)
            dist = np.linalg.norm(mods - np.eye(2), ord=2, axis=(1, 2))
        if not np.all(np.isfinite(dist)):
            continue
        worst = float(np.max(dist + used))
        if kind == "stretch" and abs(param) > budget:
            worst = max(worst, abs(param))
        if worst < best_dist:
            best, best_dist = (kind, param, mods), worst
    if best is None or best_dist > budget:
        return None, best_dist
    return best, best_dist


def _left_dir(m):
    u, sv, _ = np.linalg.svd(m)
    return u[:, 0], sv[0]


def _right_min_dir(m):
    _, sv, vt = np.linalg.svd(m)
    return vt[1], sv[0]


def _stage1(c: AbstractCocycle, budget: float, block: int, width: int):
    """Direction swaps between consecutive growth blocks.

    After ``block`` steps of growth the accumulated unstable line is rotated,
    over the next ``width`` steps, onto the stable line of the following
    stretch, whose length is chosen so that its growth balances the
    accumulated one.  Returns (schedule, perturbed cocycle, swaps) or None.
    """
    n = len(c)
    steps = c.steps.copy()
    sched = PerturbationSchedule(budget)
    acc = np.eye(2)
    pos, swaps = 0, 0
    while pos + block + width < n:
        for k in range(pos, pos + block):
            acc = steps[k] @ acc
        u, sig = _left_dir(acc)
        w0, w1 = pos + block, pos + block + width
        if sig < 2.0:
            for k in range(w0, w1):
                acc = steps[k] @ acc
            pos = w1
            continue
        tail = np.eye(2)
        best_end, best_gap, best_tail = None, math.inf, None
        for e in range(w1, n):
            tail = steps[e] @ tail
            gap = abs(math.log(np.linalg.norm(tail, 2)) - math.log(sig))
            if gap < best_gap:
                best_end, best_gap, best_tail = e + 1, gap, tail.copy()
        if best_tail is None or np.linalg.norm(best_tail, 2) < 1.0 + 1e-9:
            break
        s, _ = _right_min_dir(best_tail)
        if abs(u[0] * s[1] - u[1] * s[0]) < 1e-12:
            for k in range(w0, best_end):
                acc = steps[k] @ acc
            pos = best_end
            continue
        try:
            part = swap_directions(AbstractCocycle(steps, c.step_duration), (w0, w1), u, s, budget)
        except BudgetError:
            return None
        sched.extend(part)
        for k, mod in part.modifications().items():
            steps[k] = mod @ steps[k]
        for k in range(w0, best_end):
            acc = steps[k] @ acc
        pos = best_end
        swaps += 1
    return sched, AbstractCocycle(steps, c.step_duration), swaps


STAGE1_BLOCKS = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32)
STAGE1_WIDTHS = (1, 2, 4, 8)


def tame_to_elliptic(cocycle, theta_floor: float = DEFAULT_THETA_FLOOR, budget: float = DEFAULT_BUDGET, *,
                     m: int = LAB_M, margin: float = ELLIPTIC_MARGIN) -> TameResult:
    """Make the total product elliptic with per-step modifications within ``budget``.

    Stage 1 (only when needed) inserts direction swaps so that all
    accumulated products stay below a constant K, reported in the result.
    Stage 2 spreads a rotation or a stretch along the frame carried by the
    cocycle until |trace| < 2 - margin.  The final product has norm at most
    K, since the stage-2 correction leaves the largest singular value of the
    total product unchanged or lowers it.

    Raises ContractError when the preconditions fail and BudgetError with a
    length estimate (ln K / budget steps) when the budget is too small.
    """
    if not budget > 0:
        raise ContractError("budget must be positive")
    c = AbstractCocycle.coerce(cocycle)
    total = c.total()
    if _trace_class(total) is OrbitClass.ELLIPTIC:
        return TameResult(PerturbationSchedule(budget), OrbitClass.ELLIPTIC, c.sup_norm(), total,
                          perturbed=c)
    check_tame_preconditions(c, theta_floor, m)

    def candidates():
        yield PerturbationSchedule(budget), c, 0
        for block in STAGE1_BLOCKS:
            for width in STAGE1_WIDTHS:
                if block + width < len(c):
                    out = _stage1(c, budget, block, width)
                    if out is not None and out[2] > 0:
                        yield out

    tried = []
    for sched1, c1, swaps in candidates():
        k_bound = c1.sup_norm()
        used = np.zeros(len(c1))
        for k, d in sched1.distances().items():
            used[k] = d
        plan, dist = _stage2(c1, budget, margin, used)
        tried.append((k_bound, dist))
        if plan is None:
            continue
        kind, param, mods = plan
        sched = PerturbationSchedule(budget, list(sched1.entries))
        for k in range(len(c1)):
            sched.add(k, kind, param, mods[k])
        _checked(sched)
        final = sched.apply(c)
        prod = final.total()
        cls = _trace_class(prod)
        if cls is not OrbitClass.ELLIPTIC:
            continue
        return TameResult(sched, cls, k_bound, prod, swaps, kind, final)
    k_min = min(k for k, _ in tried)
    need = max(len(c) + 1, math.ceil(math.log(max(k_min, 1.0 + 1e-12)) / budget))
    raise BudgetError(f"budget {budget:g} is not enough to tame a cocycle of length {len(c)} "
                      f"(K = {k_min:.4g})", need)


# ---------------------------------------------------------------------------
# test cocycles


def conjugated_blocks(seed, length: int = 200, sigma: float = 2.0, jitter: float = 0.01,
                      segment=(1, 2)) -> AbstractCocycle:
    """Non-dominated cocycle built from diag(sigma, 1/sigma) conjugated by rotations.

    Each segment of random length l repeats the block l times along the
    first axis and then l times along the second (conjugation by R_{pi/2}),
    so expansion is undone and the accumulated norm stays bounded.  Every
    conjugation angle carries a uniform jitter, which makes most totals
    weakly hyperbolic.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    base = np.diag([sigma, 1.0 / sigma])
    steps = []
    while len(steps) < length:
        n = int(rng.integers(segment[0], segment[1] + 1))
        for orient in (0.0, math.pi / 2):
            for _ in range(n):
                r = rotation(orient + rng.uniform(-jitter, jitter))
                steps.append(r @ base @ r.T)
    return AbstractCocycle(np.array(steps[:length]))
