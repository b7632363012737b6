"""SVG figures for the command-line pipeline."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed element ids so that reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "floquet-layer"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_defects(history, path: Path) -> Path:
    """Periodicity defect per marched period on a log scale."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    h = np.maximum(np.asarray(history, float), 1e-300)
    ax.semilogy(np.arange(1, len(h) + 1), h, "o-", ms=3)
    ax.set_xlabel("period")
    ax.set_ylabel("periodicity defect")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_energy(times, E2, E4, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(times, E2, label="E2")
    ax.plot(times, E4, label="E4")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_multipliers(multipliers, path: Path, title: str = "") -> Path:
    """Floquet multipliers in the complex plane with the unit circle."""
    mu = np.asarray(multipliers)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    th = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(th), np.sin(th), "k-", lw=0.6)
    ax.plot(mu.real, mu.imag, ".", ms=4)
    ax.plot(mu[:1].real, mu[:1].imag, "r*", ms=10, label="leading")
    ax.set_aspect("equal")
    ax.set_xlabel("Re mu")
    ax.set_ylabel("Im mu")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left")
    return _save(fig, path)


def plot_dispersion(report: dict, kappa0: float, gamma: float, nu: float, A: float, path: Path) -> Path:
    """Re lambda against |eta'|^2 with the quadratic model and the lower reference line."""
    eta = np.asarray(report["eta"], float)
    lam = np.asarray(report["lambda"], float)
    r2 = (eta**2).sum(axis=1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(r2, lam[:, 0], "o", label="monodromy")
    x = np.linspace(0, r2.max() * 1.05, 50)
    ax.plot(x, -A * x, "-", label="-A |eta|^2")
    ax.plot(x, -kappa0 * gamma**2 / (2 * nu) * x, "--", label="-(kappa0 gamma^2 / 2 nu) |eta|^2")
    ax.set_xlabel("|eta'|^2")
    ax.set_ylabel("Re lambda")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
