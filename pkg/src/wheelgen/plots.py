"""Byte-stable SVG scatter plots of design attributes."""
from __future__ import annotations

from pathlib import Path

import numpy as np

PLOT_FILES = ("compliance-cost.svg", "novelty-compliance.svg", "novelty-cost.svg", "summary.svg")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "wheelgen"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def _get(r, k):
    return getattr(r, k) if not isinstance(r, dict) else r[k]


def write_pipeline_plots(directory: str | Path, records, front: dict) -> list[Path]:
    """Pairwise trade-off scatters (front highlighted) and a three-attribute summary."""
    from .pipeline import PAIRWISE

    plt = _pyplot()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    feas = np.array([bool(_get(r, "feasible")) for r in records], bool)
    vals = {k: np.array([float(_get(r, k)) for r in records]) for k in ("compliance", "cost", "novelty")}
    written = []
    for name, (a, b) in PAIRWISE.items():
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter(vals[a][feas], vals[b][feas], s=10, c="0.6", label="designs")
        idx = front["pairwise"].get(name, [])
        if idx:
            ax.scatter(vals[a][idx], vals[b][idx], s=18, c="tab:red", label="Pareto front")
        ax.set_xlabel(a)
        ax.set_ylabel(b)
        ax.legend(loc="best")
        fig.tight_layout()
        path = out / f"{name}.svg"
        _save(fig, path)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    sc = ax.scatter(vals["compliance"][feas], vals["cost"][feas], c=vals["novelty"][feas],
                    s=12, cmap="viridis")
    if front.get("pareto"):
        p = front["pareto"]
        ax.scatter(vals["compliance"][p], vals["cost"][p], s=40, facecolors="none",
                   edgecolors="k", label="3-attribute front")
        ax.legend(loc="best")
    fig.colorbar(sc, ax=ax, label="novelty")
    ax.set_xlabel("compliance")
    ax.set_ylabel("cost")
    fig.tight_layout()
    path = out / "summary.svg"
    _save(fig, path)
    plt.close(fig)
    written.append(path)
    return written


def write_history_plot(path: str | Path, history: list[dict]) -> Path:
    """Compliance and volume against iteration for one optimization run."""
    plt = _pyplot()
    it = [h["iteration"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(it, [h["compliance"] for h in history], color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("compliance")
    ax2 = ax.twinx()
    ax2.plot(it, [h["volume"] for h in history], color="tab:orange")
    ax2.set_ylabel("volume fraction")
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
    return Path(path)


def write_convergence_plot(path: str | Path, m_global) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(1, len(m_global) + 1), m_global)
    ax.set_xlabel("step")
    ax.set_ylabel("convergence measure")
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
    return Path(path)
