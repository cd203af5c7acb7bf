"""Numerical Hamiltonian flow and its tangent (variational) flow.

Three schemes are available.  ``implicit-midpoint`` is the default and is
symplectic for any Hamiltonian; ``leapfrog`` (Stormer-Verlet) is admissible
only for separable systems; ``rk4-monitored`` is classical RK4 and reports
its energy drift because it is not symplectic.

Tangent propagation uses the exact derivative of each discrete step, so the
Jacobians inherit the symplecticity of the scheme.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError, EscapeError, StiffnessError
from .phase_space import J, HamiltonianSystem, as_state

log = logging.getLogger(__name__)

SCHEMES = ("implicit-midpoint", "leapfrog", "rk4-monitored")


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "implicit-midpoint"
    step: float = 1e-3
    implicit_tol: float = 1e-13
    implicit_max_iter: int = 50
    domain_radius: float = 1e3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.step > 0:
            raise ContractError("step must be positive")
        if not self.implicit_tol > 0:
            raise ContractError("implicit_tol must be positive")
        if self.implicit_max_iter < 1:
            raise ContractError("implicit_max_iter must be at least 1")
        if not self.domain_radius > 0:
            raise ContractError("domain_radius must be positive")

    def with_step(self, step) -> "IntegratorConfig":
        return IntegratorConfig(self.scheme, step, self.implicit_tol, self.implicit_max_iter, self.domain_radius)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy_series: np.ndarray
    scheme: str = "implicit-midpoint"

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.energy_series)):
            raise ContractError("trajectory arrays must have equal lengths")

    def __len__(self):
        return len(self.times)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def energy_drift(self) -> float:
        """max |H(x(t)) - H(x0)| / max(1, |H(x0)|)."""
        e0 = self.energy_series[0]
        return float(np.max(np.abs(self.energy_series - e0)) / max(1.0, abs(e0)))

    def at(self, t) -> np.ndarray:
        """Dense output by linear interpolation between samples."""
        t = float(t)
        if t < self.times[0] or t > self.times[-1]:
            raise ContractError(f"t={t} outside trajectory span")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1 - w) * self.states[k] + w * self.states[k + 1]


@dataclass
class TangentTrajectory:
    """Base trajectory plus Jacobians of the flow at the initial point.

    ``jacobians[k]`` is the accumulated D(t_k); ``step_jacobians[k]`` maps
    tangent vectors at sample k to sample k+1.  The per-step matrices stay
    well conditioned on long chaotic runs where the accumulated ones do not.
    """

    base: Trajectory
    step_jacobians: np.ndarray
    jacobians: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.jacobians is None:
            self.jacobians = _kernels.cumulative_products(np.ascontiguousarray(self.step_jacobians))

    @property
    def times(self):
        return self.base.times

    @property
    def states(self):
        return self.base.states


def symplecticity_defect(d) -> float:
    """Max-norm of D^T J D - J."""
    d = np.asarray(d, dtype=float)
    return float(np.max(np.abs(d.T @ J @ d - J)))


def _grid(horizon, step):
    if not horizon > 0:
        raise ContractError("horizon must be positive")
    n = max(1, int(math.ceil(horizon / step - 1e-9)))
    return n, horizon / n


def _energy_series(system: HamiltonianSystem, states) -> np.ndarray:
    if system.polynomial is not None:
        poly = system.polynomial
        out = np.empty(len(states))
        chunk = 65536
        for s in range(0, len(states), chunk):
            block = states[s : s + chunk]
            out[s : s + chunk] = np.prod(np.power(block[:, None, :], poly.exponents[None]), axis=2) @ poly.coefficients
        return out
    return np.array([system.energy(x) for x in states])


def _check_start(x0, cfg):
    x0 = as_state(x0)
    if np.linalg.norm(x0) > cfg.domain_radius:
        raise ContractError("initial point lies outside domain_radius")
    return x0


def _run(system, x0, horizon, cfg, tangent):
    cfg = cfg or IntegratorConfig()
    x0 = _check_start(x0, cfg)
    n, h = _grid(horizon, cfg.step)
    if cfg.scheme == "leapfrog" and not system.separable:
        raise ContractError(f"leapfrog requires a separable system; {system.name} is not declared separable")

    if cfg.scheme == "implicit-midpoint" and system.fast_path:
        poly = system.polynomial
        states, steps, status, last = _kernels.midpoint_run(
            poly.exponents, poly.coefficients, x0, h, n, cfg.implicit_tol,
            cfg.implicit_max_iter, cfg.domain_radius, tangent,
        )
    else:
        stepper = {
            "implicit-midpoint": _midpoint_step,
            "leapfrog": _leapfrog_step,
            "rk4-monitored": _rk4_step,
        }[cfg.scheme]
        states = np.empty((n + 1, 4))
        steps = np.empty((n if tangent else 0, 4, 4))
        states[0] = x0
        status, last = _kernels.STATUS_OK, n
        x = x0
        for k in range(n):
            try:
                xn, sj = stepper(system, x, h, cfg, tangent)
            except StiffnessError:
                status, last = _kernels.STATUS_STIFF, k
                break
            if not np.all(np.isfinite(xn)) or np.linalg.norm(xn) > cfg.domain_radius:
                status, last = _kernels.STATUS_ESCAPE, k
                break
            states[k + 1] = xn
            if tangent:
                steps[k] = sj
            x = xn

    if status == _kernels.STATUS_ESCAPE:
        raise EscapeError((last + 1) * h)
    if status == _kernels.STATUS_STIFF:
        raise StiffnessError(last * h)

    times = np.arange(n + 1) * h
    times[-1] = horizon
    traj = Trajectory(times, states, _energy_series(system, states), cfg.scheme)
    if cfg.scheme == "rk4-monitored":
        log.warning("rk4-monitored run on %s: relative energy drift %.3e", system.name, traj.energy_drift)
    return traj, steps


def integrate(system: HamiltonianSystem, x0, horizon: float, cfg: Optional[IntegratorConfig] = None) -> Trajectory:
    """Integrate the flow from ``x0`` up to ``horizon``.

    The step is shrunk to ``horizon / ceil(horizon / cfg.step)`` so the final
    sample lands exactly on ``horizon``.

    Raises
    ------
    EscapeError
        The state left the ball of radius ``cfg.domain_radius``.
    StiffnessError
        The implicit stage equation failed to converge.
    """
    traj, _ = _run(system, x0, horizon, cfg, tangent=False)
    return traj


def integrate_tangent(system: HamiltonianSystem, x0, horizon: float,
                      cfg: Optional[IntegratorConfig] = None) -> TangentTrajectory:
    traj, steps = _run(system, x0, horizon, cfg, tangent=True)
    return TangentTrajectory(traj, steps)


def flow_map(system, x0, t, cfg=None, tangent=False):
    """Final state (and final Jacobian when ``tangent``) of a run of length ``t``."""
    if tangent:
        tt = integrate_tangent(system, x0, t, cfg)
        return tt.states[-1], tt.jacobians[-1]
    return integrate(system, x0, t, cfg).states[-1]


# ---------------------------------------------------------------------------
# generic (pure Python) steppers


def _midpoint_step(system, x, h, cfg, tangent):
    y = x + 0.5 * h * (J @ system.gradient(x))
    eye = np.eye(4)
    for _ in range(cfg.implicit_max_iter):
        a = 0.5 * h * (J @ system.hessian(y))
        res = y - x - 0.5 * h * (J @ system.gradient(y))
        d = np.linalg.solve(eye - a, res)
        y = y - d
        if not np.all(np.isfinite(d)):
            break
        if np.max(np.abs(d)) <= cfg.implicit_tol * max(1.0, np.max(np.abs(y))):
            break
    else:
        raise StiffnessError(0.0)
    if not np.all(np.isfinite(y)):
        raise StiffnessError(0.0)
    sj = None
    if tangent:
        a = 0.5 * h * (J @ system.hessian(y))
        sj = np.linalg.solve(eye - a, eye + a)
    return 2.0 * y - x, sj


def _leapfrog_step(system, x, h, cfg, tangent):
    q, p = x[:2], x[2:]
    g0 = system.gradient(x)
    p_half = p - 0.5 * h * g0[:2]
    x_half = np.concatenate([q, p_half])
    q_new = q + h * system.gradient(x_half)[2:]
    x_tmp = np.concatenate([q_new, p_half])
    p_new = p_half - 0.5 * h * system.gradient(x_tmp)[:2]
    xn = np.concatenate([q_new, p_new])
    sj = None
    if tangent:
        eye2, zero = np.eye(2), np.zeros((2, 2))
        hqq0 = system.hessian(x)[:2, :2]
        hpp = system.hessian(x_half)[2:, 2:]
        hqq1 = system.hessian(x_tmp)[:2, :2]
        m1 = np.block([[eye2, zero], [-0.5 * h * hqq0, eye2]])
        m2 = np.block([[eye2, h * hpp], [zero, eye2]])
        m3 = np.block([[eye2, zero], [-0.5 * h * hqq1, eye2]])
        sj = m3 @ m2 @ m1
    return xn, sj


def _rk4_step(system, x, h, cfg, tangent):
    def f(z):
        return J @ system.gradient(z)

    def fv(z, v):
        return J @ system.hessian(z) @ v

    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    xn = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    sj = None
    if tangent:
        v = np.eye(4)
        x2, x3, x4 = x + 0.5 * h * k1, x + 0.5 * h * k2, x + h * k3
        l1 = fv(x, v)
        l2 = fv(x2, v + 0.5 * h * l1)
        l3 = fv(x3, v + 0.5 * h * l2)
        l4 = fv(x4, v + h * l3)
        sj = v + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    return xn, sj


# ---------------------------------------------------------------------------
# section crossings


def section_crossings(system: HamiltonianSystem, traj: Trajectory, normal, offset=0.0,
                      direction=1, newton_steps=5, tol=1e-12):
    """Crossings of the hyperplane ``normal . x = offset`` along ``traj``.

    Crossings are bracketed between samples, located by bisection on the
    linear interpolant, then corrected with at most ``newton_steps`` Newton
    steps along X_H.  ``direction`` selects upward (+1), downward (-1) or
    both (0) crossings.  Returns ``(times, points)``.
    """
    normal = np.asarray(normal, dtype=float)
    s = traj.states @ normal - offset
    lo, hi = s[:-1], s[1:]
    if direction > 0:
        idx = np.nonzero((lo < 0) & (hi >= 0))[0]
    elif direction < 0:
        idx = np.nonzero((lo > 0) & (hi <= 0))[0]
    else:
        idx = np.nonzero(np.sign(lo) != np.sign(hi))[0]
    times, points = [], []
    for k in idx:
        a, b = 0.0, 1.0
        sa = lo[k]
        xa, xb = traj.states[k], traj.states[k + 1]
        for _ in range(60):
            mid = 0.5 * (a + b)
            sm = (1 - mid) * xa @ normal + mid * xb @ normal - offset
            if (sm < 0) == (sa < 0):
                a, sa = mid, sm
            else:
                b = mid
            if b - a < 1e-15:
                break
        w = 0.5 * (a + b)
        t = traj.times[k] + w * (traj.times[k + 1] - traj.times[k])
        x = (1 - w) * xa + w * xb
        for _ in range(newton_steps):
            v = J @ system.gradient(x)
            rate = normal @ v
            if rate == 0:
                break
            dt = -(normal @ x - offset) / rate
            x = x + dt * v
            t += dt
            if abs(dt) < tol:
                break
        times.append(t)
        points.append(x)
    return np.array(times), np.array(points).reshape(-1, 4)
