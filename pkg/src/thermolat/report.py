"""Figure rendering for the report path: plots are written next to the CSVs."""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _save(fig, outdir, name):
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_profile(layers, series, outdir, name="profile.png",
                 ylabel="temperature", title=None):
    """Layer profiles; ``series`` maps label -> (values, errors-or-None)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (vals, err) in series.items():
        if err is not None:
            ax.errorbar(layers, vals, yerr=err, marker="o", ms=3,
                        capsize=2, label=label)
        else:
            ax.plot(layers, vals, marker="o", ms=3, label=label)
    ax.set_xlabel("layer x1")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, outdir, name)


def plot_current(layers, j, jerr, outdir, name="current.png"):
    fig, ax = plt.subplots(figsize=(6, 4))
    if jerr is not None:
        ax.errorbar(layers, j, yerr=jerr, marker="s", ms=3, capsize=2)
    else:
        ax.plot(layers, j, marker="s", ms=3)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("bond (x1-1, x1)")
    ax.set_ylabel("heat current j")
    ax.grid(alpha=0.3)
    return _save(fig, outdir, name)


def plot_decay(xs, series, outdir, name="decay.png", xlabel="refinement step",
               ylabel="residual norm"):
    """Log-scale decay curves, e.g. zero-mode residuals under refinement."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vals in series.items():
        ax.semilogy(xs, vals, marker="o", ms=4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _save(fig, outdir, name)


def plot_projection_spectrum(pvals, projections, outdir, name="projections.png",
                             ylabel="k-integral"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(pvals, np.abs(projections), marker="o", ms=3)
    ax.set_yscale("log")
    ax.set_xlabel("momentum p")
    ax.set_ylabel(f"|{ylabel}|")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, outdir, name)


def plot_convergence_trace(trace, outdir, name="refine_trace.png"):
    fig, ax = plt.subplots(figsize=(6, 4))
    it = np.arange(len(trace.residuals))
    ax.semilogy(it, trace.residuals, marker="o", ms=4, label="full residual")
    ax.semilogy(it, trace.projected, marker="s", ms=4, label="projected residual")
    ax.set_xlabel("iteration")
    ax.set_ylabel("max-norm")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _save(fig, outdir, name)
