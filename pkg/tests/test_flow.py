import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamlab.errors import ContractError, EscapeError
from hamlab.flow import (
    IntegratorConfig,
    flow_map,
    integrate,
    integrate_tangent,
    section_crossings,
    symplecticity_defect,
)
from hamlab.phase_space import J, function_system, get_builtin


def cayley_power(a, h, n):
    """Implicit-midpoint map of the linear field x' = a x, applied n times."""
    eye = np.eye(4)
    step = np.linalg.solve(eye - 0.5 * h * a, eye + 0.5 * h * a)
    return np.linalg.matrix_power(step, n)


def test_grid_lands_on_horizon():
    tr = integrate(get_builtin("iso_oscillator"), [1, 0, 0, 0], 1.0, IntegratorConfig(step=0.3))
    assert len(tr) == 5
    assert tr.times[-1] == 1.0
    assert tr.step == pytest.approx(0.25)


@pytest.mark.parametrize("name", ["aniso_oscillator", "harmonic_hyperbolic"])
def test_linear_systems_match_discrete_oracle(name):
    sysm = get_builtin(name)
    x0 = np.array([0.7, 0.2, -0.1, 0.3])
    h, n = 0.01, 300
    a = J @ sysm.hessian(np.zeros(4))
    tt = integrate_tangent(sysm, x0, n * h, IntegratorConfig(step=h))
    m = cayley_power(a, h, n)
    np.testing.assert_allclose(tt.states[-1], m @ x0, atol=1e-12)
    np.testing.assert_allclose(tt.jacobians[-1], m, atol=1e-11)


def test_harmonic_oscillator_close_to_exact():
    tr = integrate(get_builtin("iso_oscillator"), [1, 0, 0, 0], 2 * math.pi, IntegratorConfig(step=1e-3))
    t = tr.times
    np.testing.assert_allclose(tr.states[:, 0], np.cos(t), atol=2e-6)
    np.testing.assert_allclose(tr.states[:, 2], -np.sin(t), atol=2e-6)


def test_quadratic_energy_preserved_to_roundoff():
    tr = integrate(get_builtin("aniso_oscillator"), [0.3, 0.4, 0.1, -0.2], 50, IntegratorConfig(step=0.05))
    assert tr.energy_drift < 1e-13


@given(st.lists(st.floats(-0.3, 0.3), min_size=4, max_size=4))
def test_tangent_is_symplectic_and_matches_finite_differences(x):
    hh = get_builtin("henon_heiles")
    x0 = np.array(x)
    cfg = IntegratorConfig(step=0.01)
    end, d = flow_map(hh, x0, 1.0, cfg, tangent=True)
    assert symplecticity_defect(d) < 1e-10
    eps = 1e-6
    cols = [(flow_map(hh, x0 + eps * e, 1.0, cfg) - flow_map(hh, x0 - eps * e, 1.0, cfg)) / (2 * eps)
            for e in np.eye(4)]
    np.testing.assert_allclose(d, np.stack(cols, axis=1), atol=1e-6)


def test_fast_path_agrees_with_generic_path():
    hh = get_builtin("henon_heiles")
    generic = function_system("hh", hh.energy, hh.gradient, hh.hessian)
    x0 = [0.1, 0.2, 0.3, -0.1]
    cfg = IntegratorConfig(step=0.01)
    a = integrate_tangent(hh, x0, 2.0, cfg)
    b = integrate_tangent(generic, x0, 2.0, cfg)
    np.testing.assert_allclose(a.states, b.states, atol=1e-12)
    np.testing.assert_allclose(a.jacobians[-1], b.jacobians[-1], atol=1e-10)


def test_leapfrog_needs_separable():
    with pytest.raises(ContractError):
        integrate(get_builtin("harmonic_hyperbolic"), [1, 0, 0, 0], 1.0, IntegratorConfig("leapfrog", 0.01))


@pytest.mark.parametrize("scheme, order", [("leapfrog", 2), ("rk4-monitored", 4), ("implicit-midpoint", 2)])
def test_scheme_convergence_order(scheme, order):
    hh = get_builtin("henon_heiles")
    x0 = [0.1, 0.2, 0.3, -0.1]
    ref = integrate(hh, x0, 1.0, IntegratorConfig("rk4-monitored", 1e-4)).states[-1]
    errs = [np.linalg.norm(integrate(hh, x0, 1.0, IntegratorConfig(scheme, h)).states[-1] - ref)
            for h in (0.02, 0.01)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.3)


def test_leapfrog_tangent_is_symplectic():
    tt = integrate_tangent(get_builtin("henon_heiles"), [0.1, 0.2, 0.3, -0.1], 1.0,
                           IntegratorConfig("leapfrog", 0.01))
    assert symplecticity_defect(tt.jacobians[-1]) < 1e-12


def test_escape_is_reported_with_time():
    with pytest.raises(EscapeError) as info:
        integrate(get_builtin("harmonic_hyperbolic"), [0, 1, 0, 1], 100, IntegratorConfig(step=0.01))
    assert 0 < info.value.exit_time < 100


@pytest.mark.parametrize("kwargs", [{"step": 0}, {"scheme": "euler"}, {"implicit_max_iter": 0}])
def test_bad_config(kwargs):
    with pytest.raises(ContractError):
        IntegratorConfig(**kwargs)


def test_bad_horizon():
    with pytest.raises(ContractError):
        integrate(get_builtin("iso_oscillator"), [1, 0, 0, 0], 0.0)


def test_section_crossings_of_oscillator():
    iso = get_builtin("iso_oscillator")
    tr = integrate(iso, [1, 0, 0, 0], 13.0, IntegratorConfig(step=0.01))
    t, pts = section_crossings(iso, tr, [1, 0, 0, 0], direction=1)
    # the discrete flow turns by 2 atan(h/2) per step, so q1 rises through
    # zero when that phase reaches 3 pi / 2 (mod 2 pi)
    rate = 2 * math.atan(0.005) / 0.01
    np.testing.assert_allclose(t, np.array([1.5, 3.5]) * math.pi / rate, atol=2e-7)
    np.testing.assert_allclose(pts[:, 0], 0.0, atol=1e-12)
    t_any, _ = section_crossings(iso, tr, [1, 0, 0, 0], direction=0)
    assert len(t_any) == 4


def test_dense_output_interpolates():
    tr = integrate(get_builtin("iso_oscillator"), [1, 0, 0, 0], 1.0, IntegratorConfig(step=0.01))
    assert tr.at(0.505)[0] == pytest.approx(math.cos(0.505), abs=1e-4)
    with pytest.raises(ContractError):
        tr.at(2.0)
