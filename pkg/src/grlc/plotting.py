"""Recall-versus-candidates figures rendered next to the delimited reports.

Reads the eval CSV convention ('# key=value' metadata lines, then a header
row) and draws the two standard panels: Recall@1 and Recall10@10 against the
mean number of candidates whose exact distance was computed. Axis values are
the CSV values verbatim; nothing is normalized.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

RC = {
    "figure.figsize": (9.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.markersize": 5,
}

MARKERS = ["o", "s", "^", "D", "v", "P", "X", "*"]


def read_eval_csv(path: str) -> tuple[dict, list[dict]]:
    """Metadata dict and data rows (floats parsed) from one eval report."""
    metadata: dict = {}
    rows: list[dict] = []
    with open(path, newline="") as f:
        data_lines = []
        for line in f:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                metadata[key.strip()] = val
            else:
                data_lines.append(line)
        for rec in csv.DictReader(data_lines):
            row = dict(rec)
            for key in ("probe_ratio", "recall_at_1", "recall_10_at_10",
                        "mean_candidates", "mean_bins_probed",
                        "mean_buckets_probed", "wall_time_s"):
                if row.get(key):
                    row[key] = float(row[key])
            rows.append(row)
    return metadata, rows


def plot_eval_reports(csv_paths: list[str], out_path: str, logx: bool = False,
                      title: str | None = None) -> str:
    """One series per report file on both recall panels; returns out_path."""
    with plt.rc_context(RC):
        fig, (ax1, ax10) = plt.subplots(1, 2)
        for i, path in enumerate(csv_paths):
            metadata, rows = read_eval_csv(path)
            label = metadata.get("label", path)
            rows = sorted(rows, key=lambda r: r["mean_candidates"])
            xs = [r["mean_candidates"] for r in rows]
            marker = MARKERS[i % len(MARKERS)]
            ax1.plot(xs, [r["recall_at_1"] for r in rows], marker=marker, label=label)
            ax10.plot(xs, [r["recall_10_at_10"] for r in rows], marker=marker, label=label)
        for ax, name in ((ax1, "Recall@1"), (ax10, "Recall10@10")):
            ax.set_xlabel("mean candidates examined")
            ax.set_ylabel(name)
            if logx:
                ax.set_xscale("log")
            ax.legend()
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return out_path


def plot_training_log(csv_path: str, out_path: str) -> str:
    """Loss components and active count over epochs from a training CSV."""
    epochs, parts, active = [], {"l_div": [], "l_cov": [], "l_anchor": [], "total": []}, []
    with open(csv_path, newline="") as f:
        for rec in csv.DictReader(f):
            if rec["row_type"] != "epoch":
                continue
            epochs.append(int(rec["epoch"]))
            active.append(int(rec["active_k"]))
            for key in parts:
                parts[key].append(float(rec[key]))
    with plt.rc_context(RC):
        fig, (ax_loss, ax_k) = plt.subplots(1, 2)
        for key, series in parts.items():
            ax_loss.plot(epochs, series, label=key)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_loss.set_yscale("log")
        ax_loss.legend()
        ax_k.plot(epochs, active, drawstyle="steps-post")
        ax_k.set_xlabel("epoch")
        ax_k.set_ylabel("active Gaussians")
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return out_path
