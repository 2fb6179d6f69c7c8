"""Optional figures for the CLI's ``--plot`` flag (matplotlib, Agg backend)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "savefig.dpi": 150,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _point_label(r) -> str:
    return f"N={r.n_sus} c={r.connectivity:g} L={r.L} {r.snr_db:g} dB a=b={r.alpha:g}"


def plot_roc(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        curves = defaultdict(list)
        for r in records:
            curves[(r.detector, _point_label(r), r.auc)].append((r.pf, r.pd))
        for (det, label, auc), pts in curves.items():
            pts = sorted([(0.0, 0.0)] + pts + [(1.0, 1.0)])
            ax.plot(*zip(*pts), marker="." if len(pts) < 6 else None, label=f"{det} {label} (AUC {auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
        ax.set_xlabel("Probability of false alarm")
        ax.set_ylabel("Probability of detection")
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_pd_vs_snr(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lines = defaultdict(list)
        for r in records:
            lines[(r.detector, r.L)].append((r.snr_db, r.pd))
        for (det, L), pts in sorted(lines.items()):
            ax.plot(*zip(*sorted(pts)), marker="o", ms=3, label=f"{det}, L={L}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("Probability of detection")
        ax.legend()
        return _save(fig, path)


def plot_err_surface(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lines = defaultdict(list)
        for r in records:
            if r.aggregate == "mean":
                lines[(r.n_sus, r.L)].append((r.snr_db, r.estimation_error))
        for (n, L), pts in sorted(lines.items()):
            ax.plot(*zip(*sorted(pts)), marker="o", ms=3, label=f"N={n}, L={L}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("State estimation error")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)


def plot_mse(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lines = defaultdict(list)
        for r in records:
            if r.aggregate == "mean":
                lines[(r.snr_db, r.L)].append((r.iterations, r.mse_theta))
        for (snr, L), pts in sorted(lines.items()):
            ax.plot(*zip(*sorted(pts)), label=f"{snr:g} dB, L={L}")
        ax.set_xlabel("EM iteration")
        ax.set_ylabel("MSE of model parameters")
        ax.legend()
        return _save(fig, path)


def plot_consensus(traces, path, seed_index=0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        groups = defaultdict(lambda: defaultdict(list))
        for t in traces:
            if t.seed_index == seed_index:
                groups[(t.n_sus, t.connectivity)][t.su].append((t.k, t.value))
        styles = ["-", "--", ":", "-."]
        for j, ((n, c), sus) in enumerate(sorted(groups.items())):
            for i, pts in sorted(sus.items()):
                ax.plot(*zip(*pts), ls=styles[j % len(styles)], lw=0.8,
                        label=f"N={n}, c={c:g}" if i == 0 else None)
        ax.set_xlabel("Consensus iteration")
        ax.set_ylabel("SU value")
        ax.legend()
        return _save(fig, path)


def plot_dist(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        hists = defaultdict(list)
        for r in records:
            if r.kind == "hist":
                hists[(r.C, r.hypothesis)].append((0.5 * (r.bin_lo + r.bin_hi), r.density))
        for (C, h), pts in sorted(hists.items()):
            ax.plot(*zip(*pts), ls="-" if h else "--", label=f"C={C}, H{h}")
        ax.set_xlabel("Test statistic")
        ax.set_ylabel("Density")
        ax.legend(ncol=2)
        return _save(fig, path)


def figure_path(out_path) -> Path:
    p = Path(out_path)
    return p.with_suffix(".png") if p.suffix != ".png" else p.with_name(p.stem + "_fig.png")


__all__ = ["plot_roc", "plot_pd_vs_snr", "plot_err_surface", "plot_mse", "plot_consensus",
           "plot_dist", "figure_path"]
