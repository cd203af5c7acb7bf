"""Static SVG figures written with a fixed hash salt and no date stamp,
so identical inputs give identical files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "hamlab", "svg.fonttype": "none", "path.simplify": False}
_META = {"Date": None, "Creator": "hamlab"}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def section_plot(samples, threshold, path, title="Poincare section"):
    """Scatter of section points; regular (|lambda| < threshold) and chaotic samples coloured apart."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        for label, color, pick in (("|lambda| < thr", "tab:blue", True), ("|lambda| >= thr", "tab:red", False)):
            pts = [p for _, lam, p in samples if lam is not None and (abs(lam) < threshold) == pick and len(p)]
            if pts:
                pts = np.vstack(pts)
                ax.scatter(pts[:, 0], pts[:, 1], s=0.5, c=color, label=label, rasterized=False)
        ax.set_xlabel("coordinate")
        ax.set_ylabel("conjugate momentum")
        ax.set_title(title)
        if ax.collections:
            ax.legend(loc="upper right", markerscale=10)
        _save(fig, path)


def multiplier_plot(orbit_records, path):
    """Multipliers of the refined orbits against the unit circle (log-radius for |mu| > 1)."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        th = np.linspace(0, 2 * np.pi, 361)
        ax.plot(np.cos(th), np.sin(th), color="0.5", lw=0.8)
        colors = {"Elliptic": "tab:green", "Parabolic": "tab:orange", "Hyperbolic": "tab:red"}
        for cls, color in colors.items():
            z = np.array([complex(*mu) for r in orbit_records if r["class"] == cls for mu in r["multipliers"]])
            if len(z):
                r = np.abs(z)
                shown = np.where(r > 1, 1 + np.log(r), r) * np.exp(1j * np.angle(z))
                ax.scatter(shown.real, shown.imag, s=14, c=color, label=cls)
        ax.set_aspect("equal")
        ax.set_title("multipliers (radius 1 + ln|mu| outside the circle)")
        if ax.collections:
            ax.legend(loc="upper right")
        _save(fig, path)
