import numpy as np
import pytest

from hamlab.cocycle_lab import AbstractCocycle, rotation
from hamlab.errors import ContractError
from hamlab.flow import IntegratorConfig, integrate_tangent
from hamlab.io import read_cocycle, read_table, write_cocycle, write_rows, write_trajectory
from hamlab.phase_space import get_builtin
from hamlab.transversal import transversal_cocycle


@pytest.fixture
def cocycle():
    hh = get_builtin("henon_heiles")
    tt = integrate_tangent(hh, [0.0, 0.1, 0.3, 0.05], 1.0, IntegratorConfig(step=0.05))
    return tt, transversal_cocycle(hh, tt)


@pytest.mark.parametrize("accumulated", [True, False])
def test_cocycle_roundtrip(tmp_path, cocycle, accumulated):
    _, c = cocycle
    path = write_cocycle(tmp_path / "c.csv", c, accumulated=accumulated)
    back = read_cocycle(path)
    np.testing.assert_allclose(back.steps, c.steps, atol=1e-12)
    np.testing.assert_allclose(back.times, c.times, atol=1e-12)


def test_trajectory_file_layout(tmp_path, cocycle):
    tt, _ = cocycle
    path = write_trajectory(tmp_path / "t.csv", tt.base, tt.jacobians)
    kind, header, data = read_table(path)
    assert kind == "trajectory"
    assert header[:6] == ["t", "q1", "q2", "p1", "p2", "H"] and len(header) == 22
    np.testing.assert_array_equal(data[:, 1:5], tt.states)
    np.testing.assert_array_equal(data[-1, 6:].reshape(4, 4), tt.jacobians[-1])


def test_floats_roundtrip_exactly(tmp_path):
    vals = [[0.1, 1 / 3, np.float64(2.0) ** -60]]
    _, _, data = read_table(write_rows(tmp_path / "x.csv", ["a", "b", "c"], vals))
    assert data.tolist() == vals


def test_headerless_accumulated_file(tmp_path):
    rows = ["t,s11,s12,s21,s22"] + [",".join(str(float(v)) for v in [k, *np.linalg.matrix_power(rotation(0.2), k).ravel()])
                                    for k in range(5)]
    path = tmp_path / "r.csv"
    path.write_text("\n".join(rows) + "\n")
    c = AbstractCocycle.coerce(read_cocycle(path))
    np.testing.assert_allclose(c.steps, np.tile(rotation(0.2), (4, 1, 1)), atol=1e-14)


@pytest.mark.parametrize("text", ["", "# hamlab-csv x v1\n", "t,a\n1,zz\n", "t,x,y\n1,2,3\n"])
def test_bad_files(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ContractError):
        read_cocycle(path)
