"""CSV series in and out.

Every file starts with a ``# hamlab-csv <kind> v1`` comment line followed
by a header row, so readers can check what they were handed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ContractError

CSV_VERSION = "v1"

TRAJECTORY_COLUMNS = ["t", "q1", "q2", "p1", "p2", "H"]
JACOBIAN_COLUMNS = [f"D{i}{j}" for i in range(1, 5) for j in range(1, 5)]
COCYCLE_COLUMNS = ["t", "s11", "s12", "s21", "s22", "det_defect"]
SERIES_COLUMNS = ["t", "value"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows, kind: str = "table"):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# hamlab-csv {kind} {CSV_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path):
    """Return ``(kind, header, float array)`` for a numeric hamlab CSV file."""
    path = Path(path)
    kind = None
    with path.open() as fh:
        lines = [ln for ln in fh if ln.strip()]
    if lines and lines[0].startswith("#"):
        parts = lines[0][1:].split()
        if len(parts) >= 2 and parts[0] == "hamlab-csv":
            kind = parts[1]
        lines = lines[1:]
    if not lines:
        raise ContractError(f"{path}: empty CSV file")
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ContractError(f"{path}: non-numeric or ragged row ({exc})") from exc
    return kind, header, data


def write_trajectory(path, traj, jacobians=None):
    header = list(TRAJECTORY_COLUMNS)
    cols = [traj.times[:, None], traj.states, traj.energy_series[:, None]]
    if jacobians is not None:
        header += JACOBIAN_COLUMNS
        cols.append(np.asarray(jacobians).reshape(len(traj.times), 16))
    return write_rows(path, header, np.hstack(cols).tolist(), "trajectory")


def write_cocycle(path, cocycle, accumulated: bool = True):
    """Accumulated (default) or per-step matrices with their determinant defect."""
    mats = np.asarray(cocycle.accumulated if accumulated else cocycle.steps)
    times = np.asarray(cocycle.times)
    if not accumulated:
        times = times[:-1]
    det = np.abs(np.linalg.det(mats) - 1.0)
    rows = np.column_stack([times, mats.reshape(-1, 4), det])
    kind = "cocycle-accumulated" if accumulated else "cocycle-steps"
    return write_rows(path, COCYCLE_COLUMNS, rows.tolist(), kind)


class _Steps:
    def __init__(self, steps, times):
        self.steps, self.times = steps, times


def read_cocycle(path):
    """Load a cocycle CSV as an object with ``steps`` and ``times``.

    Files of kind ``cocycle-accumulated`` (or without a kind line but with
    an identity first row) are converted to per-step matrices.
    """
    kind, header, data = read_table(path)
    need = ["t", "s11", "s12", "s21", "s22"]
    if header[:5] != need:
        raise ContractError(f"{path}: expected columns {', '.join(need)}")
    t, mats = data[:, 0], data[:, 1:5].reshape(-1, 2, 2)
    if kind == "cocycle-steps":
        dt = np.diff(t).mean() if len(t) > 1 else 1.0
        return _Steps(mats, np.append(t, t[-1] + dt))
    if len(mats) < 2:
        raise ContractError(f"{path}: an accumulated cocycle needs at least two rows")
    steps = np.array([mats[k + 1] @ np.linalg.inv(mats[k]) for k in range(len(mats) - 1)])
    return _Steps(steps, t)


def write_series(path, t, values, kind="series"):
    return write_rows(path, SERIES_COLUMNS, np.column_stack([t, values]).tolist(), kind)
