import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamlab.errors import ContractError, RegularityError
from hamlab.flow import IntegratorConfig, integrate_tangent
from hamlab.phase_space import J, get_builtin
from hamlab.transversal import frame_change, normal_frame, restricted_norm, transversal_cocycle

small = st.lists(st.floats(-0.3, 0.3), min_size=4, max_size=4).map(np.array)


@given(small)
def test_normal_frame_is_orthonormal_and_normal(x):
    hh = get_builtin("henon_heiles")
    g = hh.gradient(x)
    if np.linalg.norm(g) < 1e-3:
        return
    f = normal_frame(hh, x)
    b = f.basis
    np.testing.assert_allclose(b.T @ b, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(b.T @ g, 0, atol=1e-12)
    np.testing.assert_allclose(b.T @ (J @ g), 0, atol=1e-12)
    np.testing.assert_allclose(f.e2, -J @ f.e1, atol=1e-12)


def test_regularity_floor():
    with pytest.raises(RegularityError):
        normal_frame(get_builtin("henon_heiles"), np.zeros(4))


def _cocycle(name, x0, horizon=20.0, step=0.01):
    s = get_builtin(name)
    tt = integrate_tangent(s, x0, horizon, IntegratorConfig(step=step))
    return s, transversal_cocycle(s, tt)


def test_steps_have_unit_determinant():
    _, c = _cocycle("henon_heiles", [0.0, 0.1, 0.35, 0.05])
    assert c.det_defects.max() < 1e-6
    assert np.abs(np.linalg.det(c.accumulated) - 1).max() < 1e-6


def test_iso_oscillator_cocycle_is_a_rotation():
    # every orbit of the isotropic oscillator closes after 2 pi with identity monodromy
    _, c = _cocycle("iso_oscillator", [1.0, 0.0, 0.0, 0.5], horizon=2 * math.pi, step=2 * math.pi / 2000)
    end = frame_change(c, 0, len(c)) @ c.accumulated[-1]
    np.testing.assert_allclose(end, np.eye(2), atol=1e-5)


def test_hyperbolic_plane_orbit_stretches():
    _, c = _cocycle("harmonic_hyperbolic", [1.0, 0.0, 0.0, 0.0], horizon=2.0, step=1e-3)
    sv = np.linalg.svd(c.accumulated[-1], compute_uv=False)
    assert sv[0] == pytest.approx(math.e**2, rel=1e-5)
    assert sv[1] == pytest.approx(math.e**-2, rel=1e-5)


def test_coarsen_preserves_products():
    _, c = _cocycle("henon_heiles", [0.0, 0.1, 0.35, 0.05], horizon=5.0)
    k = c.coarsen(7)
    np.testing.assert_allclose(k.accumulated[-1], c.accumulated[-1], atol=1e-12)
    assert k.times[-1] == c.times[-1]
    with pytest.raises(ContractError):
        c.coarsen(0)
    u = c.coarsen_to(1.0)
    assert len(u) == 5
    np.testing.assert_allclose(np.diff(u.times), 1.0, atol=1e-12)


def test_segment_rebases():
    _, c = _cocycle("henon_heiles", [0.0, 0.1, 0.35, 0.05], horizon=2.0)
    seg = c.segment(50, 150)
    np.testing.assert_allclose(seg.accumulated[-1] @ c.accumulated[50], c.accumulated[150], atol=1e-12)
    with pytest.raises(ContractError):
        c.segment(10, 10)


def test_restricted_norm():
    assert restricted_norm(np.diag([2.0, 0.5]), [3.0, 0.0]) == pytest.approx(2.0)
    with pytest.raises(ContractError):
        restricted_norm(np.eye(2), [0, 0])
