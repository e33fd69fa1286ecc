"""Static SVG plots of country estimates and model criticism output.

One figure per country: posterior median and 90% band, the covariate-only
band, adjusted observations with 95% error bars colored by definition, and
unadjusted values as hollow markers. Output bytes are deterministic under
fixed inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# stable ids inside the SVG, and no timestamp, so reruns are byte-identical
plt.rcParams["svg.hashsalt"] = "sbrest"

DEFINITION_COLORS = {
    "Ge28Weeks": "#1f77b4",
    "Ge24Weeks": "#ff7f0e",
    "Ge22Weeks": "#2ca02c",
    "Ge1000g": "#9467bd",
    "Ge500g": "#8c564b",
}

SOURCE_MARKERS = {
    "Administrative": "o",
    "HMIS": "s",
    "PopulationStudy": "D",
    "Survey": "^",
}


def _savefig(fig, out_path):
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_country_plot(country, estimate_rows, observations, out_path):
    """Write one country's estimate plot as an SVG file.

    ``estimate_rows`` is the country's slice of the estimate table as dicts
    with keys year, median, q5, q95, cov_median, cov_q5, cov_q95;
    ``observations`` is a list of dicts with keys year, sbr, sbr_adjusted,
    lo, hi, definition, source_type (may be empty for covariate-only
    countries).
    """
    rows = sorted(estimate_rows, key=lambda r: r["year"])
    if not rows:
        raise ValueError(f"no estimates for country {country!r}")
    years = np.array([r["year"] for r in rows])

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.fill_between(
        years,
        [r["q5"] for r in rows],
        [r["q95"] for r in rows],
        color="#d62728",
        alpha=0.18,
        linewidth=0,
        label="90% credible interval",
    )
    ax.plot(years, [r["median"] for r in rows], color="#d62728", label="posterior median")
    ax.fill_between(
        years,
        [r["cov_q5"] for r in rows],
        [r["cov_q95"] for r in rows],
        color="#2ca02c",
        alpha=0.12,
        linewidth=0,
    )
    ax.plot(
        years,
        [r["cov_median"] for r in rows],
        color="#2ca02c",
        linestyle="--",
        label="covariate-only median",
    )

    seen_defs = set()
    for obs in sorted(observations, key=lambda o: (o["year"], o.get("id", 0))):
        color = DEFINITION_COLORS.get(obs["definition"], "#7f7f7f")
        marker = SOURCE_MARKERS.get(obs["source_type"], "o")
        label = obs["definition"] if obs["definition"] not in seen_defs else None
        seen_defs.add(obs["definition"])
        ax.errorbar(
            obs["year"], obs["sbr_adjusted"],
            yerr=[[obs["sbr_adjusted"] - obs["lo"]], [obs["hi"] - obs["sbr_adjusted"]]],
            fmt=marker, color=color, markersize=5, capsize=2, label=label,
        )
        if abs(obs["sbr"] - obs["sbr_adjusted"]) > 1e-9:
            ax.plot(
                obs["year"], obs["sbr"],
                marker=marker, markerfacecolor="none", markeredgecolor=color,
                linestyle="none", markersize=5,
            )

    ax.set_xlabel("year")
    ax.set_ylabel("stillbirths per 1000 total births")
    ax.set_title(country)
    ax.set_ylim(bottom=0)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _savefig(fig, out_path)


def emit_pareto_k_plot(loo_rows, out_path, threshold=0.7):
    """Scatter of Pareto-k diagnostics by observation index."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ids = [r["id"] for r in loo_rows]
    ks = [r["pareto_k"] for r in loo_rows]
    ax.scatter(ids, ks, s=12, color="#1f77b4")
    ax.axhline(threshold, color="#d62728", linestyle="--", linewidth=1)
    ax.set_xlabel("observation id")
    ax.set_ylabel("Pareto k")
    ax.set_title("importance-weight tail diagnostics")
    fig.tight_layout()
    _savefig(fig, out_path)


def write_index(plot_dir, countries, extra=()):
    """Minimal HTML index linking every emitted plot."""
    plot_dir = Path(plot_dir)
    lines = ["<!DOCTYPE html>", "<html><head><title>estimates</title></head><body>",
             "<h1>Country estimates</h1>", "<ul>"]
    for c in countries:
        lines.append(f'<li><a href="{c}.svg">{c}</a></li>')
    lines.append("</ul>")
    if extra:
        lines.append("<h1>Diagnostics</h1><ul>")
        for name in extra:
            lines.append(f'<li><a href="{name}">{name}</a></li>')
        lines.append("</ul>")
    lines.append("</body></html>")
    (plot_dir / "index.html").write_text("\n".join(lines) + "\n")
    return plot_dir / "index.html"
