import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamlab.errors import ClassificationError, ConditioningError, RefinementError
from hamlab.flow import IntegratorConfig, integrate
from hamlab.orbits import (
    OrbitClass,
    RecurrenceCandidate,
    classify,
    classify_trace,
    deduplicate,
    find_recurrences,
    invariant_directions,
    multipliers,
    refine_periodic,
    same_orbit,
)
from hamlab.phase_space import get_builtin

TWO_PI = 2 * math.pi


def cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def sl2(a, b, c):
    """Unit-determinant matrix with first row (a, b) and (1,0) entry c (a != 0)."""
    return np.array([[a, b], [c, (1 + b * c) / a]])


@pytest.mark.parametrize("trace, cls", [
    (0.0, OrbitClass.ELLIPTIC), (1.999, OrbitClass.ELLIPTIC), (-1.999, OrbitClass.ELLIPTIC),
    (2.0, OrbitClass.PARABOLIC), (-2.0 + 5e-7, OrbitClass.PARABOLIC),
    (2.001, OrbitClass.HYPERBOLIC), (-7.0, OrbitClass.HYPERBOLIC),
])
def test_trace_bands(trace, cls):
    assert classify_trace(trace) is cls


def test_classify_rejects_non_unit_determinant():
    with pytest.raises(ConditioningError):
        classify(np.diag([2.0, 2.0]))


angles = st.floats(0.01, math.pi - 0.01)
stretches = st.floats(1.01, 50.0)


@given(angles, st.floats(-3, 3))
def test_conjugated_rotation_is_elliptic_on_unit_circle(theta, shear):
    p = np.array([[1.0, shear], [0.0, 1.0]])
    r = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    m = p @ r @ np.linalg.inv(p)
    assert classify(m) is OrbitClass.ELLIPTIC
    mu = multipliers(m)
    np.testing.assert_allclose([abs(z) for z in mu], 1.0, atol=1e-9)
    assert mu[0].imag > 0 and mu[1] == pytest.approx(mu[0].conjugate())


@given(stretches, angles, st.sampled_from([1.0, -1.0]))
def test_invariant_directions_are_eigenvectors(sigma, phi, sign):
    # eigenlines at angles 0 and phi
    v = np.array([[1.0, math.cos(phi)], [0.0, math.sin(phi)]])
    m = sign * v @ np.diag([sigma, 1 / sigma]) @ np.linalg.inv(v)
    u, s, angle = invariant_directions(m)
    assert abs(cross(m @ u, u)) < 1e-9 * np.linalg.norm(m)
    assert abs(cross(m @ s, s)) < 1e-9 * np.linalg.norm(m)
    assert abs(u @ m @ u) == pytest.approx(sigma, rel=1e-8)
    assert angle == pytest.approx(min(phi, math.pi - phi), abs=1e-8)


def test_invariant_directions_need_hyperbolic():
    with pytest.raises(ClassificationError):
        invariant_directions(np.eye(2))


def test_extreme_multipliers_keep_stable_direction():
    m = sl2(1e6, 3.0, 2e5)  # nearly rank one
    u, s, _ = invariant_directions(m)
    lam = np.trace(m) / 2 - math.sqrt((np.trace(m) / 2) ** 2 - 1)
    np.testing.assert_allclose(m @ s, lam * s, atol=1e-9)


def test_aniso_plane_orbit_oracle():
    an = get_builtin("aniso_oscillator")
    orb = refine_periodic(an, RecurrenceCandidate(np.array([1.0, 0, 0, 0]), 6.2, 0.05))
    assert orb.least_period == pytest.approx(TWO_PI, abs=1e-8)
    assert orb.trace == pytest.approx(2 * math.cos(TWO_PI * math.sqrt(2)), abs=1e-6)
    assert orb.orbit_class is OrbitClass.ELLIPTIC
    assert orb.energy == pytest.approx(0.5, abs=1e-12)
    assert orb.bundle_angle is None


def test_hyperbolic_plane_orbit_oracle():
    hy = get_builtin("harmonic_hyperbolic")
    orb = refine_periodic(hy, RecurrenceCandidate(np.array([1.0, 0, 0, 0]), 6.3, 0.05))
    mods = sorted(abs(z) for z in orb.multipliers)
    assert mods[1] == pytest.approx(math.exp(TWO_PI), rel=1e-3)
    assert mods[0] == pytest.approx(math.exp(-TWO_PI), rel=1e-3)
    assert orb.bundle_angle == pytest.approx(math.pi / 2, abs=1e-4)
    rec = orb.record()
    assert rec["class"] == "Hyperbolic" and len(rec["multipliers"]) == 2


def test_double_return_time_is_reduced_to_least_period():
    an = get_builtin("aniso_oscillator")
    orb = refine_periodic(an, RecurrenceCandidate(np.array([1.0, 0, 0, 0]), 2 * TWO_PI + 0.05, 0.05))
    assert orb.least_period == pytest.approx(TWO_PI, abs=1e-8)


def test_energy_is_pinned():
    # the candidate start has H = 0.5 * 0.81; the orbit must stay on that level
    an = get_builtin("aniso_oscillator")
    orb = refine_periodic(an, RecurrenceCandidate(np.array([0.9, 0, 0.02, 0]), 6.2, 0.05))
    assert orb.energy == pytest.approx(an.energy([0.9, 0, 0.02, 0]), abs=1e-10)
    pinned = refine_periodic(an, RecurrenceCandidate(np.array([0.9, 0, 0.02, 0]), 6.2, 0.05), energy=0.5)
    assert pinned.energy == pytest.approx(0.5, abs=1e-10)


def test_max_gap_rejects():
    with pytest.raises(RefinementError):
        refine_periodic(get_builtin("aniso_oscillator"),
                        RecurrenceCandidate(np.array([1.0, 0, 0, 0]), 6.2, 0.5), max_gap=0.1)


def test_recurrences_of_plane_orbit():
    an = get_builtin("aniso_oscillator")
    tr = integrate(an, [1.0, 0, 0, 0], 20.0, IntegratorConfig(step=0.01))
    cands = find_recurrences(tr, 0.05, 1.0)
    assert cands
    assert cands[0].gap < 1e-3
    # returns come at multiples of the period; the shortest is the period
    times = np.array([c.return_time for c in cands])
    np.testing.assert_allclose(times / TWO_PI, np.round(times / TWO_PI), atol=0.005)
    assert times.min() == pytest.approx(TWO_PI, abs=0.02)
    assert all(c.return_time >= 1.0 for c in cands)
    assert not find_recurrences(tr, 0.05, 1.0, max_period=5.0)
    assert find_recurrences(tr, 0.05, 30.0) == []
    with pytest.raises(ValueError):
        find_recurrences(tr, 0.0, 1.0)


def test_same_orbit_and_deduplicate():
    an = get_builtin("aniso_oscillator")
    a = refine_periodic(an, RecurrenceCandidate(np.array([1.0, 0, 0, 0]), 6.2, 0.05))
    # a start a quarter period later lies on the same orbit
    b = refine_periodic(an, RecurrenceCandidate(np.array([0.0, 0, -1.0, 0]), 6.2, 0.05))
    c = refine_periodic(an, RecurrenceCandidate(np.array([0.0, 0.0, 0.0, 0.8]), 4.4, 0.05))
    assert same_orbit(a, b)
    assert not same_orbit(a, c)
    assert len(deduplicate([a, b, c])) == 2
