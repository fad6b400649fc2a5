"""Charts and raw CSV tables from an evaluation report.

CSV files (one header row, comma separated):

``pr_curves.csv``
    ``iou_threshold,recall,precision``: one row per PR point.
``by_snr.csv``
    ``snr_db,truths,detected,recall50,accuracy``: truth-level rows;
    ``accuracy`` is empty in detection mode.
``snr_summary.csv``
    ``snr_db,ap50,ap_mean,accuracy``: one row per single-SNR report.

Several reports (one per point of an SNR sweep) may be plotted together;
PR curves come from the first. SVG files: ``pr_curves.svg``,
``ap_vs_snr.svg`` (AP@0.50 of each single-SNR report, plus recall at IoU
0.5 per SNR) and ``accuracy_vs_snr.svg`` (joint mode only).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PR_COLUMNS = ("iou_threshold", "recall", "precision")
SNR_COLUMNS = ("snr_db", "truths", "detected", "recall50", "accuracy")
SUMMARY_COLUMNS = ("snr_db", "ap50", "ap_mean", "accuracy")


class PlotError(ValueError):
    pass


def _as_list(reports) -> list[dict]:
    reports = [reports] if isinstance(reports, dict) else list(reports)
    if not reports or not any((r.get("counts") or {}).get("truths") for r in reports):
        raise PlotError("report is empty: no ground truths were evaluated")
    return reports


def _snr_rows(reports: list[dict]) -> list[dict]:
    rows = sorted((row for r in reports for row in r.get("by_snr", [])), key=lambda r: r["snr_db"])
    merged: list[dict] = []
    for row in rows:
        if merged and merged[-1]["snr_db"] == row["snr_db"]:
            m = merged[-1]
            m["truths"] += row["truths"]
            m["detected"] += row["detected"]
            m["correct"] += row.get("correct", 0)
        else:
            merged.append({"snr_db": row["snr_db"], "truths": row["truths"],
                           "detected": row["detected"], "joint": row.get("accuracy") is not None,
                           "correct": row.get("correct", 0)})
    for m in merged:
        m["recall50"] = m["detected"] / m["truths"]
        m["accuracy"] = m["correct"] / m["truths"] if m["joint"] else None
    return merged


def _summary_rows(reports: list[dict]) -> list[dict]:
    rows = [{"snr_db": r["snr_db"], "ap50": r.get("ap50"), "ap_mean": r.get("ap_mean"),
             "accuracy": r.get("accuracy")} for r in reports if r.get("snr_db") is not None]
    return sorted(rows, key=lambda r: r["snr_db"])


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_csv(reports, out_dir) -> list[Path]:
    reports = _as_list(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.csv" for name in ("pr_curves", "by_snr", "snr_summary")}
    with open(paths["pr_curves"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PR_COLUMNS)
        for thr, curve in sorted(reports[0].get("pr_curves", {}).items()):
            for r, p in zip(curve["recall"], curve["precision"]):
                w.writerow([thr, _fmt(r), _fmt(p)])
    with open(paths["by_snr"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNR_COLUMNS)
        for row in _snr_rows(reports):
            w.writerow([_fmt(row["snr_db"]), row["truths"], row["detected"],
                        _fmt(row["recall50"]), _fmt(row["accuracy"])])
    with open(paths["snr_summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in _summary_rows(reports):
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return list(paths.values())


def _line_chart(path: Path, series: dict, xlabel: str, ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (x, y) in series.items():
        ax.plot(x, y, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_svg(reports, out_dir) -> list[Path]:
    reports = _as_list(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for thr, curve in sorted(reports[0].get("pr_curves", {}).items()):
        ax.step(curve["recall"], curve["precision"], where="post", label=f"IoU {thr}")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title("Precision-recall")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    written = [out_dir / "pr_curves.svg"]
    fig.savefig(written[0], format="svg")
    plt.close(fig)

    rows, summary = _snr_rows(reports), _summary_rows(reports)
    series = {"recall@0.50": ([r["snr_db"] for r in rows], [r["recall50"] for r in rows])}
    if summary:
        series["AP@0.50"] = ([r["snr_db"] for r in summary], [r["ap50"] or 0.0 for r in summary])
    written.append(out_dir / "ap_vs_snr.svg")
    _line_chart(written[-1], series, "SNR (dB)", "score", "Detection vs SNR")
    joint = [r for r in rows if r["accuracy"] is not None]
    if joint:
        written.append(out_dir / "accuracy_vs_snr.svg")
        _line_chart(written[-1], {"accuracy": ([r["snr_db"] for r in joint],
                                               [r["accuracy"] for r in joint])},
                    "SNR (dB)", "accuracy", "Classification accuracy vs SNR")
    return written


def plot_report(reports, out_dir, fmt: str = "svg") -> list[Path]:
    """Write SVG charts with their CSV data, or the CSV tables alone."""
    if fmt == "csv":
        return write_csv(reports, out_dir)
    if fmt == "svg":
        return write_csv(reports, out_dir) + write_svg(reports, out_dir)
    raise PlotError(f"unknown format {fmt!r}")
