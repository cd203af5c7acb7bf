"""Normal bundle and the transversal linear Poincare flow.

At a regular point x the normal plane is the Euclidean orthogonal
complement of span{X_H(x), grad H(x)}.  Because X_H = J grad H, the plane is
J-invariant and every frame is taken as (e1, e2) with e2 = -J e1, which fixes
the orientation so the 2x2 cocycle matrices have unit determinant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError, RegularityError
from .flow import TangentTrajectory
from .phase_space import DEFAULT_REGULARITY_FLOOR, HamiltonianSystem, as_state


@dataclass(frozen=True)
class NormalFrame:
    base_point: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        """4x2 matrix with columns e1, e2."""
        return np.column_stack([self.e1, self.e2])


def normal_frame(system: HamiltonianSystem, x, previous: Optional[NormalFrame] = None,
                 regularity_floor: float = DEFAULT_REGULARITY_FLOOR) -> NormalFrame:
    """Orthonormal frame of the normal plane at ``x``.

    With ``previous`` given, e1 is the projection of ``previous.e1`` onto the
    new plane, which keeps frames continuous along an orbit.
    """
    x = as_state(x)
    g = system.gradient(x)
    if np.linalg.norm(g) < regularity_floor:
        raise RegularityError(f"|grad H| = {np.linalg.norm(g):.3e} below regularity floor at {x}")
    hint = previous.e1 if previous is not None else np.zeros(4)
    e1, e2 = _kernels.frames_along(g[None, :], hint, previous is not None)
    return NormalFrame(x, e1[0], e2[0])


@dataclass
class TransversalCocycle:
    """Phi_H^t along a sampled orbit as a sequence of 2x2 matrices.

    ``steps[k]`` maps the frame at ``times[k]`` to the frame at
    ``times[k+1]``; ``accumulated[k]`` is the product up to ``times[k]``.
    """

    times: np.ndarray
    points: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    steps: np.ndarray
    accumulated: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.accumulated is None:
            with np.errstate(over="ignore", invalid="ignore"):
                self.accumulated = _kernels.cumulative_products(np.ascontiguousarray(self.steps))

    def __len__(self):
        return len(self.steps)

    def frame(self, k) -> NormalFrame:
        return NormalFrame(self.points[k], self.e1[k], self.e2[k])

    def basis(self, k) -> np.ndarray:
        return np.column_stack([self.e1[k], self.e2[k]])

    @property
    def det_defects(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.steps) - 1.0)

    def coarsen(self, stride: int, keep_remainder: bool = True) -> "TransversalCocycle":
        """Group consecutive blocks of ``stride`` steps into single steps."""
        stride = int(stride)
        if stride < 1:
            raise ContractError("stride must be >= 1")
        n = len(self.steps)
        cuts = list(range(0, n + 1, stride))
        if keep_remainder and cuts[-1] != n:
            cuts.append(n)
        return self._regroup(cuts)

    def coarsen_to(self, duration: float) -> "TransversalCocycle":
        """Regroup into equal-count blocks lasting about ``duration`` each.

        Used on closed orbits, where every block must have the same length
        for the periodic domination test to be meaningful.
        """
        n = len(self.steps)
        total = float(self.times[-1] - self.times[0])
        nb = int(min(n, max(1, round(total / duration))))
        cuts = [int(c) for c in np.round(np.linspace(0, n, nb + 1))]
        return self._regroup(cuts)

    def _regroup(self, cuts) -> "TransversalCocycle":
        blocks = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            m = np.eye(2)
            for k in range(a, b):
                m = self.steps[k] @ m
            blocks.append(m)
        idx = np.array(cuts)
        return TransversalCocycle(self.times[idx], self.points[idx], self.e1[idx], self.e2[idx],
                                  np.array(blocks).reshape(-1, 2, 2))

    def segment(self, start: int, stop: int) -> "TransversalCocycle":
        """Sub-cocycle between samples ``start`` and ``stop`` (re-based at identity)."""
        if not 0 <= start < stop <= len(self.steps):
            raise ContractError("invalid segment bounds")
        return TransversalCocycle(self.times[start:stop + 1], self.points[start:stop + 1],
                                  self.e1[start:stop + 1], self.e2[start:stop + 1],
                                  self.steps[start:stop].copy())


def frames_for_states(system: HamiltonianSystem, states, regularity_floor=DEFAULT_REGULARITY_FLOOR,
                      first_hint=None):
    states = np.ascontiguousarray(states, dtype=float)
    if system.polynomial is not None and system.gradient_mode == "analytic":
        poly = system.polynomial
        grads = _kernels.poly_gradients(poly.exponents, poly.coefficients, states)
    else:
        grads = np.array([system.gradient(x) for x in states])
    norms = np.linalg.norm(grads, axis=1)
    bad = np.nonzero(norms < regularity_floor)[0]
    if len(bad):
        k = int(bad[0])
        raise RegularityError(f"sample {k} is not regular: |grad H| = {norms[k]:.3e} < {regularity_floor:g}")
    hint = np.zeros(4) if first_hint is None else np.asarray(first_hint, dtype=float)
    return _kernels.frames_along(grads, hint, first_hint is not None)


def transversal_cocycle(system: HamiltonianSystem, tangent: TangentTrajectory,
                        regularity_floor: float = DEFAULT_REGULARITY_FLOOR,
                        first_frame: Optional[NormalFrame] = None) -> TransversalCocycle:
    """Project the tangent flow onto the normal planes along the orbit.

    ``steps[k] = E_{k+1}^T S_k E_k`` where ``E_k`` is the 4x2 frame basis and
    ``S_k`` the one-step Jacobian.  Dropping the X_H component is harmless
    because the flow maps X_H(x) to X_H(phi(x)).
    """
    states = tangent.states
    hint = None if first_frame is None else first_frame.e1
    e1, e2 = frames_for_states(system, states, regularity_floor, hint)
    basis = np.stack([e1, e2], axis=2)  # (N+1, 4, 2)
    steps = np.matmul(np.matmul(basis[1:].transpose(0, 2, 1), tangent.step_jacobians), basis[:-1])
    return TransversalCocycle(tangent.times.copy(), states, e1, e2, steps)


def restricted_norm(phi, direction) -> float:
    """Norm of ``phi`` applied to the normalized ``direction``."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if n == 0:
        raise ContractError("direction must be nonzero")
    return float(np.linalg.norm(np.asarray(phi, dtype=float) @ (d / n)))


def frame_change(cocycle: TransversalCocycle, i: int, j: int) -> np.ndarray:
    """2x2 matrix re-expressing frame-j coordinates in frame i (same plane)."""
    return cocycle.basis(i).T @ cocycle.basis(j)
