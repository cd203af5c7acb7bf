"""Energy-surface scans and the dichotomy report.

A scan samples initial conditions on one energy surface, integrates each
with its transversal cocycle, looks for near-recurrences, refines them
into closed orbits, and summarizes classes, domination, bundle angles and
zero-exponent frequency.  The report lists indicators only; it never
decides whether a surface is Anosov.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, check_keys, load_toml, require_type
from .errors import EmptySurfaceError, HamlabError
from .flow import IntegratorConfig, Trajectory, integrate_tangent, section_crossings
from .lyapunov import SAMPLING_MEASURE, make_rng, sample_energy_surface, top_exponent
from .orbits import OrbitClass, find_recurrences, refine_periodic, same_orbit
from .phase_space import HamiltonianSystem, builtin_names, get_builtin, load_definition
from .splitting import DOMINATION_BOUND, minimal_m, orbit_splitting, transported_eigendirections
from .transversal import transversal_cocycle

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
RNG_NAME = "numpy Philox-4x64 (10 rounds) seeded by SeedSequence(seed)"
DISCLAIMER = (
    "Indicators only. Elliptic orbits, a positive zero-exponent fraction and undominated "
    "segments are finite-sample evidence that the surface is not uniformly hyperbolic; their "
    "absence does not certify an Anosov surface, and no statement is made about residual sets."
)

_TOP_KEYS = {"system", "energy", "region", "samples", "horizon", "recurrence_radius", "m_max", "seed",
             "output_dir", "numerics"}
_NUM_KEYS = {"step", "refine_step", "min_period", "max_period", "max_refinements", "candidates_per_sample",
             "zero_threshold", "unit", "workers", "section_coordinate", "plots"}


@dataclass
class ScanConfig:
    system: str
    energy: float
    samples: int = 200
    horizon: float = 500.0
    recurrence_radius: float = 0.05
    m_max: int = 64
    seed: int = 0
    output_dir: str = "scan-out"
    region: Optional[list] = None
    # numerics
    step: float = 1e-2
    refine_step: float = 1e-4
    min_period: float = 1.0
    max_period: float = 30.0
    max_refinements: int = 40
    candidates_per_sample: int = 2
    zero_threshold: float = 1e-2
    unit: float = 1.0
    workers: int = 1
    section_coordinate: int = 0
    plots: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not self.recurrence_radius > 0:
            raise ConfigError("recurrence_radius must be positive")
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.region is not None:
            box = np.asarray(self.region, dtype=float)
            if box.shape != (4, 2) or np.any(box[:, 0] >= box[:, 1]):
                raise ConfigError("region must be four [lo, hi] pairs with lo < hi")
        if self.section_coordinate not in range(4):
            raise ConfigError("section_coordinate must be 0..3")

    def echo(self) -> dict:
        return asdict(self)

    def resolve_system(self, base_dir=None) -> HamiltonianSystem:
        if self.system in builtin_names():
            return get_builtin(self.system)
        path = Path(self.system)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"system {self.system!r} is neither a built-in ({', '.join(builtin_names())}) "
                              "nor a definition file")
        return load_definition(path)


def _energy_value(raw, where):
    if isinstance(raw, bool):
        raise ConfigError(f"{where}: key 'energy' must be a number or a fraction string")
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        try:
            return float(Fraction(raw.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{where}: key 'energy' must be a number or a fraction string like \"1/12\"")


def config_from_mapping(data: dict, where: str = "config") -> ScanConfig:
    check_keys(data, _TOP_KEYS, where)
    for key in ("system", "energy"):
        if key not in data:
            raise ConfigError(f"{where}: missing required key '{key}'")
    require_type(data, "system", str, where)
    require_type(data, "samples", int, where)
    require_type(data, "m_max", int, where)
    require_type(data, "seed", int, where)
    require_type(data, "horizon", (int, float), where)
    require_type(data, "recurrence_radius", (int, float), where)
    require_type(data, "output_dir", str, where)
    require_type(data, "region", list, where)
    num = data.get("numerics", {})
    require_type(data, "numerics", dict, where)
    check_keys(num, _NUM_KEYS, f"{where} [numerics]")
    for key in ("max_refinements", "candidates_per_sample", "workers", "section_coordinate"):
        require_type(num, key, int, f"{where} [numerics]")
    for key in ("step", "refine_step", "min_period", "max_period", "zero_threshold", "unit"):
        require_type(num, key, (int, float), f"{where} [numerics]")
    require_type(num, "plots", bool, f"{where} [numerics]")
    kwargs = {k: v for k, v in data.items() if k not in ("numerics", "energy")}
    kwargs.update(num)
    kwargs["energy"] = _energy_value(data["energy"], where)
    return ScanConfig(**kwargs)


def report_schema() -> dict:
    """JSON schema that every ``report.json`` validates against."""
    from importlib import resources

    return json.loads(resources.files("hamlab").joinpath("schemas/report.schema.json").read_text())


def load_scan_config(path) -> ScanConfig:
    return config_from_mapping(load_toml(path), str(path))


# ---------------------------------------------------------------------------
# per-sample work


@dataclass
class SampleOutcome:
    index: int
    point: np.ndarray
    exponent: Optional[float] = None
    segment_dominated: Optional[bool] = None
    candidates: list = field(default_factory=list)
    section: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    error: Optional[str] = None


def _section_points(system, traj: Trajectory, coord: int, cap: int = 400):
    normal = np.zeros(4)
    normal[coord] = 1.0
    _, pts = section_crossings(system, traj, normal, 0.0, direction=1, newton_steps=2)
    # plot the configuration/momentum pair not tied to the section coordinate
    other = (coord + 1) % 2
    return pts[:cap][:, [other, other + 2]]


def _process_sample(system: HamiltonianSystem, cfg: ScanConfig, index: int, x) -> SampleOutcome:
    out = SampleOutcome(index, np.asarray(x, float))
    try:
        tt = integrate_tangent(system, x, cfg.horizon, IntegratorConfig(step=cfg.step))
        cocycle = transversal_cocycle(system, tt)
        out.exponent = float(top_exponent(cocycle).exponent)
        coarse = cocycle.coarsen_to(cfg.unit)
        m_max = min(cfg.m_max, len(coarse))
        out.segment_dominated = bool(minimal_m(coarse, m_max, "svd").dominated)
        base = tt.base
        stride = max(1, int(round(0.1 / base.step)))
        sub = Trajectory(base.times[::stride], base.states[::stride], base.energy_series[::stride], base.scheme)
        out.candidates = find_recurrences(sub, cfg.recurrence_radius, cfg.min_period,
                                          cfg.candidates_per_sample, cfg.max_period)
        if cfg.plots:
            out.section = _section_points(system, base, cfg.section_coordinate)
    except HamlabError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def _pool_map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# ---------------------------------------------------------------------------
# report


@dataclass
class DichotomyReport:
    config: dict
    seed: int
    census: dict
    orbits: list
    domination: dict
    min_bundle_angle: Optional[float]
    zero_exponent: dict
    skipped: dict
    segments: dict
    version: str = __version__
    schema_version: str = SCHEMA_VERSION
    generated_at: str = ""
    warnings: list = field(default_factory=list)
    section: list = field(default_factory=list, repr=False)
    exponents: list = field(default_factory=list, repr=False)
    orbit_objects: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool": {"name": "hamlab", "version": self.version},
            "generated_at": self.generated_at,
            "seed": self.seed,
            "rng": RNG_NAME,
            "config": self.config,
            "census": self.census,
            "orbits": self.orbits,
            "domination": self.domination,
            "min_bundle_angle": self.min_bundle_angle,
            "zero_exponent": self.zero_exponent,
            "segments": self.segments,
            "skipped": self.skipped,
            "warnings": self.warnings,
            "indicators": self.indicators(),
            "disclaimer": DISCLAIMER,
        }

    def indicators(self) -> dict:
        frac = self.zero_exponent.get("fraction")
        return {
            "elliptic_orbit_found": self.census["Elliptic"] > 0,
            "zero_exponent_fraction_positive": bool(frac is not None and frac > 0),
            "undominated_segment_found": self.segments.get("undominated", 0) > 0,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=False) + "\n"

    def to_text(self) -> str:
        c = self.census
        z = self.zero_exponent
        lines = [
            f"hamlab {self.version} dichotomy scan (schema {self.schema_version})",
            f"system {self.config['system']}  energy {self.config['energy']:.12g}  seed {self.seed}",
            f"samples requested {self.config['samples']}, skipped {self.skipped['total']}",
            "",
            f"closed orbits refined: {c['refined']}  (refinement failures {c['refinement_failures']})",
            f"  Elliptic   {c['Elliptic']}",
            f"  Parabolic  {c['Parabolic']}",
            f"  Hyperbolic {c['Hyperbolic']}",
        ]
        for i, o in enumerate(self.orbits):
            lines.append(f"  [{i}] {o['class']:<10} period {o['period']:.10g}  trace {o['trace']:.10g}  "
                         f"residual {o['residual']:.2e}")
        d = self.domination
        frac = "n/a" if z["fraction"] is None else f"{z['fraction']:.4f}"
        angle = "n/a" if self.min_bundle_angle is None else f"{self.min_bundle_angle:.6g}"
        mm = d["minimal_m"]
        mm = "n/a" if mm is None else f"min {mm['min']}, median {mm['median']:g}, max {mm['max']}"
        lines += [
            "",
            f"domination on hyperbolic orbits (m_max {d['m_max']}, unit {d['unit']:g}): "
            f"dominated {d['dominated']}, undominated {d['undominated']}, minimal m ({mm})",
            f"minimal bundle angle: {angle}",
            f"sampled segments undominated up to m_max: {self.segments['undominated']} of {self.segments['tested']}",
            f"zero-exponent fraction (|lambda| < {z['threshold']:g}): "
            f"{frac} over {z['estimated']} samples "
            f"[{z['sampling_measure']}]",
            "",
            "indicators: " + ", ".join(f"{k}={v}" for k, v in self.indicators().items()),
        ]
        lines += [f"warning: {w}" for w in self.warnings]
        lines += ["", DISCLAIMER, ""]
        return "\n".join(lines)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _refine_candidates(system, cfg: ScanConfig, cands):
    """Refine candidates in order of gap; skip ones that sit on a known orbit.

    Work is done in batches of ``workers``; skip decisions use completed
    batches only, so the outcome does not depend on thread scheduling.
    """
    rcfg = IntegratorConfig(step=cfg.refine_step)
    found, failures, attempted = [], 0, 0
    queue = list(cands)
    batch = max(1, cfg.workers)
    while queue and attempted < cfg.max_refinements:
        take = []
        while queue and len(take) < min(batch, cfg.max_refinements - attempted):
            idx, cand = queue.pop(0)
            if any(_near_known(o, cand) for _, o in found):
                continue
            take.append((idx, cand))
        if not take:
            break
        attempted += len(take)

        def task(item):
            try:
                return refine_periodic(system, item[1], rcfg, max_gap=4 * cfg.recurrence_radius,
                                       energy=cfg.energy)
            except (HamlabError, np.linalg.LinAlgError) as exc:
                return exc

        for (idx, _), res in zip(take, _pool_map(task, take, cfg.workers)):
            if isinstance(res, Exception):
                failures += 1
            else:
                found.append((idx, res))
    unique = []
    for idx, orb in found:
        if not any(same_orbit(o, orb, 1e-6) for _, o in unique):
            unique.append((idx, orb))
    return unique, failures, attempted


def _near_known(orbit, cand, tol=1e-3):
    if abs(orbit.least_period - cand.return_time) > 0.05 * orbit.least_period:
        return False
    pts = orbit.trajectory.states
    return bool(np.min(np.linalg.norm(pts - cand.start, axis=1)) < tol)


def scan(cfg: ScanConfig, system: Optional[HamiltonianSystem] = None) -> DichotomyReport:
    system = system or cfg.resolve_system()
    rng = make_rng(cfg.seed)
    points, proj_skipped = sample_energy_surface(system, cfg.energy, cfg.samples, rng, cfg.region)
    if len(points) == 0:
        raise EmptySurfaceError(f"no sample could be projected onto H = {cfg.energy:g} inside the region")
    warnings = []
    if proj_skipped:
        warnings.append(f"coverage: {proj_skipped} of {cfg.samples} samples could not be projected "
                        "onto the energy surface inside the region")

    outcomes = _pool_map(lambda ix: _process_sample(system, cfg, *ix), list(enumerate(points)), cfg.workers)
    outcomes.sort(key=lambda o: o.index)
    failed = [o for o in outcomes if o.error is not None]
    good = [o for o in outcomes if o.error is None]

    cands = [(o.index, c) for o in good for c in o.candidates]
    cands.sort(key=lambda ic: (ic[1].gap, ic[0], ic[1].start_time))
    unique, ref_failures, attempted = _refine_candidates(system, cfg, cands)

    records, m_values, angles = [], [], []
    dominated = undominated = 0
    for idx, orb in unique:
        rec = orb.record()
        rec["sample_index"] = int(idx)
        rec["splitting"] = None
        rec["min_angle_along_orbit"] = None
        if orb.orbit_class is OrbitClass.HYPERBOLIC:
            try:
                rep = orbit_splitting(orb, cfg.m_max, cfg.unit)
                rec["splitting"] = rep.record()
                if rep.dominated:
                    dominated += 1
                    m_values.append(rep.minimal_m)
                else:
                    undominated += 1
                coarse = orb.cocycle.coarsen_to(cfg.unit)
                plus, minus = transported_eigendirections(coarse, orb.monodromy)
                ang = float(np.min(np.arccos(np.clip(np.abs(np.sum(plus * minus, axis=1)), 0, 1))))
                rec["min_angle_along_orbit"] = ang
                angles.append(ang)
            except HamlabError as exc:
                rec["splitting_error"] = str(exc)
        records.append(rec)

    census = {cls.value: sum(1 for r in records if r["class"] == cls.value) for cls in OrbitClass}
    census.update(refined=len(records), refinement_attempts=attempted, refinement_failures=ref_failures,
                  candidates=len(cands))
    exps = [o.exponent for o in good]
    frac = float(np.mean(np.abs(exps) < cfg.zero_threshold)) if exps else None
    seg = [o.segment_dominated for o in good]
    report = DichotomyReport(
        config=cfg.echo(),
        seed=cfg.seed,
        census=census,
        orbits=records,
        domination={
            "m_max": cfg.m_max, "unit": cfg.unit, "bound": DOMINATION_BOUND,
            "dominated": dominated, "undominated": undominated,
            "minimal_m": None if not m_values else {
                "min": int(min(m_values)), "median": float(np.median(m_values)), "max": int(max(m_values))},
        },
        min_bundle_angle=min(angles) if angles else None,
        zero_exponent={"fraction": frac, "estimated": len(exps), "threshold": cfg.zero_threshold,
                       "horizon": cfg.horizon, "sampling_measure": SAMPLING_MEASURE},
        skipped={"projection": int(proj_skipped), "integration": len(failed),
                 "total": int(proj_skipped) + len(failed),
                 "reasons": [f"sample {o.index}: {o.error}" for o in failed]},
        segments={"tested": len(seg), "undominated": int(sum(1 for s in seg if not s)), "m_max": cfg.m_max},
        generated_at=_timestamp(),
        warnings=warnings,
    )
    report.section = [(o.index, o.exponent, o.section) for o in good]
    report.exponents = [(o.index, o.exponent) for o in good]
    report.orbit_objects = [orb for _, orb in unique]
    return report


def write_report(report: DichotomyReport, output_dir, plots: bool = True) -> dict:
    """Write report.json, report.txt, CSV series and (optionally) SVG plots."""
    from .io import write_rows

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "text": out / "report.txt",
             "exponents": out / "exponents.csv", "orbits": out / "orbits.csv"}
    paths["json"].write_text(report.to_json())
    paths["text"].write_text(report.to_text())
    write_rows(paths["exponents"], ["sample", "exponent"], report.exponents)
    write_rows(paths["orbits"], ["index", "class", "period", "trace", "residual", "sample"],
               [(i, o["class"], o["period"], o["trace"], o["residual"], o["sample_index"])
                for i, o in enumerate(report.orbits)])
    if plots:
        from .plots import multiplier_plot, section_plot

        paths["section_svg"] = out / "section.svg"
        paths["multipliers_svg"] = out / "multipliers.svg"
        section_plot(report.section, report.zero_exponent["threshold"], paths["section_svg"])
        multiplier_plot(report.orbits, paths["multipliers_svg"])
    return paths
