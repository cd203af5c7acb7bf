"""Hamiltonian systems on R^4 with the standard symplectic structure.

Coordinates are global Darboux coordinates ordered ``(q1, q2, p1, p2)``.
The Hamiltonian vector field is ``X_H = J grad H`` with ``J`` mapping
``(a, b, c, d) -> (c, d, -a, -b)``, so ``dq/dt = dH/dp`` and
``dp/dt = -dH/dq``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import CatalogLookupError, ContractError, EvaluationError

J = np.array(
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
    ]
)

VARIABLES = ("q1", "q2", "p1", "p2")
DEFAULT_FD_STEP = 1e-5
DEFAULT_REGULARITY_FLOOR = 1e-6


def as_state(x) -> np.ndarray:
    """Validate and return a phase-space point as a float array of shape (4,)."""
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (4,):
        raise ContractError(f"phase state must have 4 components, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("phase state has non-finite components")
    return arr


# ---------------------------------------------------------------------------
# polynomials

_MONOMIAL_FACTOR = re.compile(r"^(q1|q2|p1|p2)(?:\^(\d+))?$")


def parse_monomial(key) -> tuple:
    """Convert a monomial key to an exponent tuple ``(e_q1, e_q2, e_p1, e_p2)``.

    Accepted forms: an exponent tuple/list, a comma-separated string such as
    ``"2,0,0,0"``, or a product string such as ``"q1^2*q2"``; ``"1"`` is the
    constant monomial.
    """
    if isinstance(key, (tuple, list)):
        exps = tuple(int(e) for e in key)
    else:
        text = str(key).replace(" ", "")
        if "," in text:
            exps = tuple(int(e) for e in text.split(","))
        elif text in ("1", ""):
            exps = (0, 0, 0, 0)
        else:
            counts = dict.fromkeys(VARIABLES, 0)
            for factor in text.split("*"):
                m = _MONOMIAL_FACTOR.match(factor)
                if m is None:
                    raise ContractError(f"cannot parse monomial factor {factor!r} in {key!r}")
                counts[m.group(1)] += int(m.group(2) or 1)
            exps = tuple(counts[v] for v in VARIABLES)
    if len(exps) != 4 or any(e < 0 for e in exps):
        raise ContractError(f"invalid exponent tuple {exps!r}")
    return exps


def format_monomial(exps) -> str:
    parts = []
    for var, e in zip(VARIABLES, exps):
        if e == 1:
            parts.append(var)
        elif e > 1:
            parts.append(f"{var}^{e}")
    return "*".join(parts) or "1"


@dataclass(frozen=True)
class Polynomial:
    """Polynomial in (q1, q2, p1, p2) stored as exponent rows and coefficients."""

    exponents: np.ndarray  # (K, 4) int64
    coefficients: np.ndarray  # (K,) float64

    @classmethod
    def from_table(cls, table: Mapping) -> "Polynomial":
        merged: dict = {}
        for key, coef in table.items():
            exps = parse_monomial(key)
            merged[exps] = merged.get(exps, 0.0) + float(coef)
        items = sorted((k, v) for k, v in merged.items() if v != 0.0)
        if not items:
            raise ContractError("polynomial coefficient table is empty")
        exps = np.array([k for k, _ in items], dtype=np.int64)
        coefs = np.array([v for _, v in items], dtype=float)
        exps.setflags(write=False)
        coefs.setflags(write=False)
        return cls(exps, coefs)

    def table(self) -> dict:
        return {tuple(int(e) for e in row): float(c) for row, c in zip(self.exponents, self.coefficients)}

    @property
    def separable(self) -> bool:
        """True when no monomial mixes positions and momenta."""
        has_q = self.exponents[:, :2].sum(axis=1) > 0
        has_p = self.exponents[:, 2:].sum(axis=1) > 0
        return not bool(np.any(has_q & has_p))

    def _powers(self, x):
        # pw[k, j] = x_j ** e_kj, with 0**0 = 1
        return np.power(x[None, :], self.exponents)

    def value(self, x) -> float:
        return float(self.coefficients @ np.prod(self._powers(x), axis=1))

    def gradient(self, x) -> np.ndarray:
        g = np.zeros(4)
        for i in range(4):
            e = self.exponents[:, i]
            mask = e > 0
            if not np.any(mask):
                continue
            ex = self.exponents[mask].copy()
            ex[:, i] -= 1
            terms = np.prod(np.power(x[None, :], ex), axis=1)
            g[i] = np.sum(self.coefficients[mask] * e[mask] * terms)
        return g

    def hessian(self, x) -> np.ndarray:
        h = np.zeros((4, 4))
        for i in range(4):
            for k in range(i, 4):
                ex = self.exponents.copy()
                factor = ex[:, i].astype(float)
                ex[:, i] -= 1
                factor = factor * np.where(ex[:, i] >= 0, ex[:, k], 0)
                ex[:, k] -= 1
                mask = factor != 0
                if not np.any(mask):
                    continue
                terms = np.prod(np.power(x[None, :], ex[mask]), axis=1)
                h[i, k] = h[k, i] = np.sum(self.coefficients[mask] * factor[mask] * terms)
        return h

    def perturbed(self, offsets) -> "Polynomial":
        return Polynomial(self.exponents, self.coefficients + np.asarray(offsets, dtype=float))


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class HamiltonianSystem:
    """An energy function on R^4 with gradient and Hessian access.

    Instances are immutable and may be shared between threads.  When
    ``polynomial`` is set, the integrators use a compiled fast path.
    """

    name: str
    energy_fn: Callable = field(repr=False)
    gradient_fn: Optional[Callable] = field(default=None, repr=False)
    hessian_fn: Optional[Callable] = field(default=None, repr=False)
    gradient_mode: str = "analytic"
    fd_step: float = DEFAULT_FD_STEP
    separable: bool = False
    polynomial: Optional[Polynomial] = field(default=None, repr=False)
    default_box: float = 1.0

    def __post_init__(self):
        if self.gradient_mode not in ("analytic", "central-difference"):
            raise ContractError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.gradient_mode == "analytic" and self.gradient_fn is None:
            raise ContractError("analytic gradient_mode requires a gradient function")
        if self.fd_step <= 0:
            raise ContractError("fd_step must be positive")

    def energy(self, x) -> float:
        val = float(self.energy_fn(np.asarray(x, dtype=float)))
        if not math.isfinite(val):
            raise EvaluationError(f"{self.name}: non-finite energy at {x}")
        return val

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient_mode == "analytic":
            g = np.asarray(self.gradient_fn(x), dtype=float)
        else:
            g = central_difference_gradient(self.energy_fn, x, self.fd_step)
        if not np.all(np.isfinite(g)):
            raise EvaluationError(f"{self.name}: non-finite gradient at {x}")
        return g

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hessian_fn is not None and self.gradient_mode == "analytic":
            h = np.asarray(self.hessian_fn(x), dtype=float)
        else:
            h = central_difference_jacobian(self.gradient, x, self.fd_step)
            h = 0.5 * (h + h.T)
        if not np.all(np.isfinite(h)):
            raise EvaluationError(f"{self.name}: non-finite Hessian at {x}")
        return h

    @property
    def fast_path(self) -> bool:
        return self.polynomial is not None and self.gradient_mode == "analytic"


def central_difference_gradient(f, x, step) -> np.ndarray:
    g = np.empty(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def central_difference_jacobian(fun, x, step) -> np.ndarray:
    cols = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.stack(cols, axis=1)


def hamiltonian_field(system: HamiltonianSystem, x) -> np.ndarray:
    """Return X_H(x) = J grad H(x)."""
    return J @ system.gradient(as_state(x))


def polynomial_system(table: Mapping, name: str = "polynomial", gradient_mode="analytic",
                      fd_step=DEFAULT_FD_STEP, default_box=1.0) -> HamiltonianSystem:
    """Build a system from a coefficient table mapping monomials to coefficients."""
    poly = Polynomial.from_table(table)
    return HamiltonianSystem(
        name=name,
        energy_fn=poly.value,
        gradient_fn=poly.gradient,
        hessian_fn=poly.hessian,
        gradient_mode=gradient_mode,
        fd_step=fd_step,
        separable=poly.separable,
        polynomial=poly,
        default_box=default_box,
    )


def function_system(name: str, energy: Callable, gradient: Optional[Callable] = None,
                    hessian: Optional[Callable] = None, fd_step=DEFAULT_FD_STEP,
                    separable=False, default_box=1.0) -> HamiltonianSystem:
    """Wrap a user-supplied energy function; missing derivatives use central differences."""
    return HamiltonianSystem(
        name=name,
        energy_fn=energy,
        gradient_fn=gradient,
        hessian_fn=hessian,
        gradient_mode="analytic" if gradient is not None else "central-difference",
        fd_step=fd_step,
        separable=separable,
        default_box=default_box,
    )


SQRT2 = math.sqrt(2.0)

_CATALOG_TABLES = {
    "iso_oscillator": ({"q1^2": 0.5, "p1^2": 0.5, "q2^2": 0.5, "p2^2": 0.5}, 1.5),
    "aniso_oscillator": ({"q1^2": 0.5, "p1^2": 0.5, "q2^2": SQRT2 / 2, "p2^2": SQRT2 / 2}, 1.5),
    "harmonic_hyperbolic": ({"q1^2": 0.5, "p1^2": 0.5, "q2*p2": 1.0}, 1.5),
    "henon_heiles": (
        {"p1^2": 0.5, "p2^2": 0.5, "q1^2": 0.5, "q2^2": 0.5, "q1^2*q2": 1.0, "q2^3": -1.0 / 3.0},
        1.0,
    ),
    # two oscillators with a quartic coupling, an example of a table-built system
    "quartic_coupled": (
        {"p1^2": 0.5, "p2^2": 0.5, "q1^2": 0.5, "q2^2": 0.5, "q1^2*q2^2": 0.5},
        1.5,
    ),
}


def builtin_catalog() -> list:
    return [get_builtin(name) for name in _CATALOG_TABLES]


def builtin_names() -> list:
    return list(_CATALOG_TABLES)


def get_builtin(name: str) -> HamiltonianSystem:
    try:
        table, box = _CATALOG_TABLES[name]
    except KeyError:
        raise CatalogLookupError(f"unknown built-in system {name!r}; known: {', '.join(_CATALOG_TABLES)}") from None
    return polynomial_system(table, name=name, default_box=box)


@dataclass(frozen=True)
class EnergySurfaceSpec:
    system: HamiltonianSystem
    energy_value: float
    regularity_floor: float = DEFAULT_REGULARITY_FLOOR

    def __post_init__(self):
        if not self.regularity_floor > 0:
            raise ContractError("regularity_floor must be positive")


# ---------------------------------------------------------------------------
# definition files


def system_from_definition(data: Mapping) -> HamiltonianSystem:
    """Build a system from a parsed definition mapping (see docs/schema.md)."""
    known = {"name", "kind", "coefficients", "gradient_mode", "fd_step", "box"}
    unknown = set(data) - known
    if unknown:
        raise ContractError(f"unknown key(s) in Hamiltonian definition: {', '.join(sorted(unknown))}")
    if "name" not in data:
        raise ContractError("Hamiltonian definition: missing key 'name'")
    kind = data.get("kind", "builtin")
    if kind == "builtin":
        if "coefficients" in data:
            raise ContractError("Hamiltonian definition: 'coefficients' not allowed for kind = builtin")
        return get_builtin(data["name"])
    if kind != "polynomial":
        raise ContractError(f"Hamiltonian definition: key 'kind' must be builtin|polynomial, got {kind!r}")
    if "coefficients" not in data:
        raise ContractError("Hamiltonian definition: kind = polynomial requires a 'coefficients' table")
    return polynomial_system(
        data["coefficients"],
        name=str(data["name"]),
        gradient_mode=data.get("gradient_mode", "analytic"),
        fd_step=float(data.get("fd_step", DEFAULT_FD_STEP)),
        default_box=float(data.get("box", 1.0)),
    )


def load_definition(path) -> HamiltonianSystem:
    from .config import load_toml

    return system_from_definition(load_toml(Path(path)))
