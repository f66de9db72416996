"""Static SVG figures for sweeps, fits and comparisons."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.markersize": 5,
    "figure.figsize": (4.5, 3.4),
    "svg.fonttype": "none",
}


def _save(fig, path, seed: int) -> None:
    # fixed hash salt and no date keep the SVG bytes reproducible
    with plt.rc_context({"svg.hashsalt": f"lamegap-{seed}"}):
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def loglog_fit(eps, values, fit, path, ylabel: str = "value", title: str = "", seed: int = 0) -> None:
    """Data points and the fitted line ``exp(intercept) eps^slope``."""
    eps = np.asarray(eps, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.loglog(eps, values, "o", label="FEM")
        xx = np.geomspace(eps.min(), eps.max(), 50)
        ax.loglog(xx, np.exp(fit.intercept) * xx**fit.slope, "-",
                  label=f"slope {fit.slope:.3f} (R$^2$={fit.r2:.4f})")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend()
        _save(fig, path, seed)


def comparison_errors(table, path, seed: int = 0) -> None:
    """Relative error against eps for every (location, variant) series."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        keys = sorted({(r.location, r.variant) for r in table.rows})
        for loc, var in keys:
            e, err = table.errors(loc, var)
            ax.loglog(e, err, "o-", label=f"{loc}, {var}")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel("relative error")
        if not keys:
            ax.text(0.5, 0.5, table.note or "no data", ha="center", va="center", transform=ax.transAxes)
        else:
            ax.legend()
        _save(fig, path, seed)


def boundary_curves(geometry, path, n: int = 600, seed: int = 0) -> None:
    """Outer and inclusion boundaries with a zoom on the gap."""
    outer = geometry.outer_curve.polyline(n)
    inner = geometry.inner_curve.polyline(n)
    with plt.rc_context(_STYLE):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(7.5, 3.4))
        for ax in (a0, a1):
            ax.plot(*np.vstack([outer, outer[:1]]).T, "-", lw=1, label="outer")
            ax.plot(*np.vstack([inner, inner[:1]]).T, "-", lw=1, label="inclusion")
        a0.set_aspect("equal")
        a0.legend()
        w = geometry.window
        a1.set_xlim(-w, w)
        top = float(geometry.upper(w))
        a1.set_ylim(float(geometry.lower(0.0)) - 0.1 * top, 1.1 * top)
        a1.set_title("gap window")
        _save(fig, path, seed)
