"""Write evaluation reports: JSON, delimited tables and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from dpsynth.evaluation import EvalReport  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def write_tables(report: EvalReport, out_dir: Path) -> list[Path]:
    kld_path = out_dir / "kld.csv"
    with kld_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "kld"])
        for lam, value in sorted(report.kld.items()):
            w.writerow([lam, repr(value)])
    q_path = out_dir / "qerror.csv"
    with q_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "card_orig", "card_synth", "qerror"])
        for i, ((a, b), q) in enumerate(zip(report.cardinalities, report.qerrors)):
            w.writerow([i, a, b, repr(q)])
    return [kld_path, q_path]


def plot_qerror_cdf(report: EvalReport, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if report.qerrors:
            q = np.sort(np.asarray(report.qerrors))
            ax.step(q, np.arange(1, q.size + 1) / q.size, where="post", color="k", lw=1.2)
            ax.set_xscale("log")
        ax.set_xlabel("Q-error")
        ax.set_ylabel("fraction of queries")
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def plot_kld(report: EvalReport, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lams = sorted(report.kld)
        ax.bar([str(l) for l in lams], [report.kld[l] for l in lams], color="0.4", width=0.6)
        ax.set_xlabel(r"marginal order $\lambda$")
        ax.set_ylabel("mean KL divergence (nats)")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def write_report(report: EvalReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    written = [json_path, *write_tables(report, out_dir)]
    if figures:
        written.append(plot_qerror_cdf(report, out_dir / "qerror_cdf.png"))
        if report.kld:
            written.append(plot_kld(report, out_dir / "kld.png"))
    return written


def summary_lines(report: EvalReport) -> list[str]:
    s = report.summary
    lines = []
    for lam, value in sorted(report.kld.items()):
        lines.append(f"{lam}-way KLD\t{value:.4f}")
    if s["count"]:
        lines.append(
            f"Q-error\tmean {s['mean']:.3f}\tmedian {s['median']:.3f}\t"
            f"p75 {s['p75']:.3f}\tmax {s['max']:.3f}\t({s['count']} queries)"
        )
    return lines
