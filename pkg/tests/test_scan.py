import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from hamlab.config import ConfigError
from hamlab.errors import EmptySurfaceError
from hamlab.scan import (
    ScanConfig,
    config_from_mapping,
    load_scan_config,
    report_schema,
    scan,
    write_report,
)

SMALL = dict(system="henon_heiles", energy=1 / 12, samples=6, horizon=100, seed=3, max_refinements=6)


@pytest.fixture(scope="module")
def small_report():
    return scan(ScanConfig(**SMALL))


def test_census_conservation(small_report):
    c = small_report.census
    assert c["Elliptic"] + c["Parabolic"] + c["Hyperbolic"] == c["refined"] == len(small_report.orbits)
    assert c["Elliptic"] >= 1


def test_every_record_has_residual_and_energy(small_report):
    for rec in small_report.orbits:
        assert rec["residual"] < 1e-8
        assert rec["energy"] == pytest.approx(1 / 12, abs=1e-9)
        assert (rec["splitting"] is not None) == (rec["class"] == "Hyperbolic")


def test_report_validates_against_schema(small_report):
    jsonschema.validate(json.loads(small_report.to_json()), report_schema())


def test_report_carries_config_and_disclaimer(small_report):
    d = small_report.to_dict()
    assert d["config"]["samples"] == 6 and d["seed"] == 3
    assert d["schema_version"] == "1.0" and d["tool"]["name"] == "hamlab"
    assert "Philox" in d["rng"]
    assert "does not certify" in d["disclaimer"]
    assert d["indicators"]["elliptic_orbit_found"]
    assert "Elliptic" in small_report.to_text()


def test_timestamp_from_environment(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    rep = scan(ScanConfig(**{**SMALL, "samples": 2, "max_refinements": 1}))
    assert rep.generated_at.startswith("1970-01-01T00:00:00")


def test_outputs_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    cfg = {**SMALL, "samples": 3, "max_refinements": 3}
    a = write_report(scan(ScanConfig(**cfg)), tmp_path / "a")
    b = write_report(scan(ScanConfig(**cfg, workers=3)), tmp_path / "b")
    assert set(a) == {"json", "text", "exponents", "orbits", "section_svg", "multipliers_svg"}
    for key in a:
        if key in ("json", "text"):
            # the worker count is echoed; everything else must agree
            ja, jb = (p.read_text().replace('"workers": 3', '"workers": 1') for p in (a[key], b[key]))
            assert ja == jb
        else:
            assert a[key].read_bytes() == b[key].read_bytes(), key
    assert a["section_svg"].read_text().lstrip().startswith("<?xml")


def test_hyperbolic_plane_orbit_in_census():
    cfg = ScanConfig(system="harmonic_hyperbolic", energy=0.5, samples=5, horizon=20, seed=1,
                     region=[[-1.5, 1.5], [-1e-12, 1e-12], [-1.5, 1.5], [-1e-12, 1e-12]])
    rep = scan(cfg)
    assert rep.census["Hyperbolic"] >= 1
    tr = [o["trace"] for o in rep.orbits if o["class"] == "Hyperbolic"]
    assert tr[0] == pytest.approx(2 * math.cosh(2 * math.pi), rel=1e-6)


@pytest.mark.slow
def test_integrable_surface_census():
    rep = scan(ScanConfig(system="aniso_oscillator", energy=1.0, samples=50, seed=0))
    assert rep.census["Hyperbolic"] == 0
    # pinned for seed 0: only the normal-mode orbits close up
    assert rep.census["Elliptic"] == 1 and rep.census["Parabolic"] == 0
    assert rep.zero_exponent["fraction"] == 1.0


def test_empty_surface():
    with pytest.raises(EmptySurfaceError):
        scan(ScanConfig(system="iso_oscillator", energy=100.0, samples=2))


@pytest.mark.parametrize("kwargs", [
    {"samples": 0}, {"horizon": 0.0}, {"recurrence_radius": -1.0}, {"m_max": 0}, {"seed": -1},
    {"region": [[0, 1]] * 3}, {"region": [[1, 0]] * 4}, {"section_coordinate": 5},
])
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        ScanConfig(system="henon_heiles", energy=0.1, **kwargs)


def test_config_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('system = "henon_heiles"\nenergy = "1/12"\nsamples = 4\n[numerics]\nstep = 0.02\n')
    cfg = load_scan_config(path)
    assert cfg.energy == 1 / 12 and cfg.step == 0.02 and cfg.samples == 4


@pytest.mark.parametrize("data, needle", [
    ({"energy": 0.1}, "system"),
    ({"system": "henon_heiles", "energy": "a lot"}, "energy"),
    ({"system": "henon_heiles", "energy": 0.1, "sample": 3}, "sample"),
    ({"system": "henon_heiles", "energy": 0.1, "samples": "3"}, "samples"),
    ({"system": "henon_heiles", "energy": 0.1, "numerics": {"stepsize": 1}}, "stepsize"),
])
def test_config_diagnostics_name_the_key(data, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_mapping(data)


def test_malformed_toml_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('system = "henon_heiles"\nenergy = \n')
    with pytest.raises(ConfigError, match="line 2"):
        load_scan_config(path)


def test_shipped_config_parses():
    cfg = load_scan_config(Path(__file__).parents[1] / "configs" / "hh_e12.toml")
    assert cfg.samples == 200 and cfg.horizon == 500 and cfg.energy == 1 / 12


def test_unknown_system():
    with pytest.raises(ConfigError):
        ScanConfig(system="nowhere.toml", energy=0.1).resolve_system()


def test_section_points_inside_energy_boundary(small_report):
    # on q1 = 0 the remaining energy p1^2 / 2 must be non-negative
    total = 0
    for _, _, pts in small_report.section:
        q2, p2 = pts[:, 0], pts[:, 1]
        assert np.all(q2**2 / 2 + p2**2 / 2 - q2**3 / 3 <= 1 / 12 + 1e-6)
        total += len(pts)
    assert total > 0
