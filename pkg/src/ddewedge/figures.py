"""Matplotlib rendering of the report figures, saved next to the CSV output."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "sweep_figure",
    "spectrum_figure",
    "structural_figure",
    "trajectory_figure",
    "oracle_figure",
]

_RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.linewidth": 0.7,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def sweep_figure(report, path, threshold: Optional[float] = None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        good = np.isfinite(report.alphas)
        ax.plot(report.omegas[good], report.alphas[good], color="#1f4e79", label=r"$\alpha_N(\omega)$")
        ax.plot(report.omega_at_sup, report.sup_alpha, "o", ms=4, color="#b03030")
        if threshold is not None and np.isfinite(threshold):
            ax.axhline(threshold, color="#b03030", ls="--", label=r"$1/\Lambda$")
        ax.set_xlabel(r"$\omega$")
        ax.set_ylabel(r"$\alpha_N$")
        title = f"norm sweep on the line Re p = {-report.nu0:g}"
        if report.verdict is not None:
            title += f"  [{report.verdict.value}]"
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def spectrum_figure(spec_report, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        base = np.array([r for r, _ in spec_report.base_roots], dtype=complex)
        if base.size:
            ax.plot(base.real, base.imag, "x", color="#1f4e79", ms=6, label="base roots")
        comp = np.array([e.value for e in spec_report.eigenvalues], dtype=complex)
        anti = np.array([e.antisym_mult > 0 for e in spec_report.eigenvalues], dtype=bool)
        if comp.size:
            ax.plot(comp[~anti].real, comp[~anti].imag, "s", mfc="none", color="#888888", ms=4, label="tensor only")
            ax.plot(comp[anti].real, comp[anti].imag, "o", color="#b03030", ms=4, label="wedge spectrum")
        if spec_report.nu0 is not None:
            ax.axvline(-spec_report.nu0, color="#2e7d32", ls="--", label=rf"line $-\nu_0$ = {-spec_report.nu0:g}")
        ax.axvline(0.0, color="black", lw=0.6)
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        ax.set_title(f"characteristic and {spec_report.m}-fold compound spectra")
        ax.legend(loc="best")
        return _save(fig, path)


def structural_figure(grid_sizes, residuals, fitted_order, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        hs = 1.0 / np.asarray(grid_sizes, dtype=float)
        ax.loglog(hs, residuals, "o-", color="#1f4e79", label="reconstruction residual")
        ref = residuals[0] * (hs / hs[0])
        ax.loglog(hs, ref, "--", color="#888888", label="order 1 reference")
        ax.set_xlabel("h")
        ax.set_ylabel("max relative residual")
        ax.set_title(f"structural Cauchy residual, fitted order {fitted_order:.2f}")
        ax.legend(loc="best")
        return _save(fig, path)


def trajectory_figure(times, values, path, title="trajectory"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        values = np.atleast_2d(values.T).T
        for i in range(values.shape[1]):
            ax.plot(times, values[:, i], label=f"x{i + 1}")
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(title)
        if values.shape[1] > 1:
            ax.legend(loc="best")
        return _save(fig, path)


def oracle_figure(check_names, errors, tolerances, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        idx = np.arange(len(check_names))
        errs = np.array([max(e, 1e-17) for e in errors])
        tols = np.asarray(tolerances, dtype=float)
        ax.bar(idx, errs, width=0.55, color="#1f4e79", label="measured error")
        ax.plot(idx, tols, "_", color="#b03030", ms=22, mew=2, label="tolerance")
        ax.set_yscale("log")
        ax.set_xticks(idx)
        ax.set_xticklabels(check_names, rotation=20, ha="right")
        ax.set_title("cross-route oracle battery")
        ax.legend(loc="best")
        return _save(fig, path)
