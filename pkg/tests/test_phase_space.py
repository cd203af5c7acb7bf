import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from hamlab.errors import CatalogLookupError, ContractError, EvaluationError
from hamlab.phase_space import (
    J,
    builtin_names,
    format_monomial,
    function_system,
    get_builtin,
    hamiltonian_field,
    load_definition,
    parse_monomial,
    polynomial_system,
    system_from_definition,
)

q1, q2, p1, p2 = SYMS = sp.symbols("q1 q2 p1 p2")

SYMBOLIC = {
    "henon_heiles": (p1**2 + p2**2 + q1**2 + q2**2) / 2 + q1**2 * q2 - q2**3 / 3,
    "aniso_oscillator": (q1**2 + p1**2) / 2 + sp.sqrt(2) * (q2**2 + p2**2) / 2,
    "harmonic_hyperbolic": (q1**2 + p1**2) / 2 + q2 * p2,
    "iso_oscillator": (q1**2 + p1**2 + q2**2 + p2**2) / 2,
    "quartic_coupled": (p1**2 + p2**2 + q1**2 + q2**2) / 2 + q1**2 * q2**2 / 2,
}

coords = st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4).map(np.array)


def _sym_oracle(expr):
    grad = [sp.diff(expr, s) for s in SYMS]
    hess = [[sp.diff(g, s) for s in SYMS] for g in grad]
    return (sp.lambdify(SYMS, expr), sp.lambdify(SYMS, grad), sp.lambdify(SYMS, hess))


@pytest.mark.parametrize("name", sorted(SYMBOLIC))
@given(x=coords)
def test_builtin_matches_symbolic_derivatives(name, x):
    sysm = get_builtin(name)
    f, g, h = _sym_oracle(SYMBOLIC[name])
    assert sysm.energy(x) == pytest.approx(float(f(*x)), abs=1e-12)
    np.testing.assert_allclose(sysm.gradient(x), np.array(g(*x), float), atol=1e-12)
    np.testing.assert_allclose(sysm.hessian(x), np.array(h(*x), float), atol=1e-12)


def test_catalog_lists_every_symbolic_system():
    assert set(SYMBOLIC) == set(builtin_names())


def test_unknown_builtin():
    with pytest.raises(CatalogLookupError):
        get_builtin("nope")


@given(x=coords)
def test_field_is_j_gradient(x):
    hh = get_builtin("henon_heiles")
    v = hamiltonian_field(hh, x)
    np.testing.assert_allclose(v, J @ hh.gradient(x))
    # H is constant along its own field
    assert abs(v @ hh.gradient(x)) < 1e-12


def test_j_is_symplectic_unit():
    np.testing.assert_array_equal(J @ J, -np.eye(4))
    np.testing.assert_array_equal(J.T, -J)


@pytest.mark.parametrize("key, exps", [
    ("q1^2*q2", (2, 1, 0, 0)),
    ("p2", (0, 0, 0, 1)),
    ("q2*p2", (0, 1, 0, 1)),
    ("1", (0, 0, 0, 0)),
    ((0, 3, 1, 0), (0, 3, 1, 0)),
])
def test_parse_monomial(key, exps):
    assert parse_monomial(key) == exps
    assert parse_monomial(format_monomial(exps)) == exps


@pytest.mark.parametrize("bad", ["x1^2", "q1^", "q1**2", "q1^-1"])
def test_parse_monomial_rejects(bad):
    with pytest.raises(ContractError):
        parse_monomial(bad)


def test_central_difference_system_agrees_with_analytic():
    hh = get_builtin("henon_heiles")
    fd = function_system("hh-fd", hh.energy)
    x = np.array([0.1, -0.2, 0.3, 0.05])
    np.testing.assert_allclose(fd.gradient(x), hh.gradient(x), atol=1e-9)
    np.testing.assert_allclose(fd.hessian(x), hh.hessian(x), atol=1e-5)
    assert not fd.fast_path and hh.fast_path


def test_non_finite_energy_is_reported():
    bad = function_system("log", lambda x: np.log(x[0]))
    with np.errstate(invalid="ignore"), pytest.raises(EvaluationError):
        bad.energy([-1.0, 0, 0, 0])


def test_polynomial_separable_flag():
    assert get_builtin("henon_heiles").separable
    assert not get_builtin("harmonic_hyperbolic").separable


def test_definition_file_roundtrip(tmp_path):
    path = tmp_path / "h.toml"
    path.write_text('name = "toy"\nkind = "polynomial"\n[coefficients]\n"q1^2" = 0.5\n"p1^2" = 0.5\n'
                    '"q2^2" = 0.5\n"p2^2" = 0.5\n"q1^2*q2" = 1.0\n"q2^3" = -0.3333333333333333\n')
    toy = load_definition(path)
    hh = get_builtin("henon_heiles")
    x = np.array([0.2, 0.1, -0.3, 0.4])
    assert toy.energy(x) == pytest.approx(hh.energy(x), rel=1e-14)


@pytest.mark.parametrize("data", [
    {"kind": "polynomial", "coefficients": {"q1": 1.0}},
    {"name": "x", "kind": "spline"},
    {"name": "x", "kind": "polynomial"},
    {"name": "henon_heiles", "coefficients": {"q1": 1.0}},
    {"name": "x", "colour": "red"},
])
def test_definition_contract_errors(data):
    with pytest.raises(ContractError):
        system_from_definition(data)


def test_builtin_definition():
    assert system_from_definition({"name": "aniso_oscillator"}).name == "aniso_oscillator"


def test_polynomial_system_from_table():
    s = polynomial_system({"q1*p1": 2.0})
    assert s.energy([1.5, 0, 2.0, 0]) == pytest.approx(6.0)
