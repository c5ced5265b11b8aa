"""Report serialization and figure rendering.

BatchReport goes out as JSON (full) and CSV (one row per input); theory
sweeps as CSV. Population files hold one input vector per row. Every file
embeds the schema version and the resolved run configuration, and float
cells use repr so a rerun with the same seed and config is byte-identical.
Figures are rendered headlessly to image files next to the delimited
output.
"""

from __future__ import annotations

import csv
import json

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .certify import ABSTAIN, BatchReport  # noqa: E402
from .theory import TheorySweepRow  # noqa: E402

__all__ = [
    "SCHEMA_VERSION",
    "write_report_csv",
    "write_report_json",
    "write_sweep_csv",
    "read_sweep_csv",
    "write_population_csv",
    "read_population_csv",
    "certified_accuracy_figure",
    "stage_share_figure",
    "sweep_figure",
]

SCHEMA_VERSION = 1

REPORT_COLUMNS = [
    "id",
    "prediction",
    "radius",
    "p_lower",
    "samples_used",
    "stage",
    "models_evaluated",
]

SWEEP_COLUMNS = [
    "k",
    "var_ratio_p",
    "var_ratio_c",
    "p1",
    "p1_se",
    "chebyshev",
    "expected_radius",
]


def _config_comment(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def write_report_csv(report: BatchReport, path) -> None:
    """One row per input; abstentions carry prediction -1 and radius 0."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# smoothcert batch report, schema {SCHEMA_VERSION}\n")
        fh.write(f"# config {_config_comment(report.config)}\n")
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for rid, res in zip(report.ids, report.results):
            writer.writerow(
                [
                    rid,
                    res.predicted_class,
                    repr(res.radius),
                    repr(res.p_lower),
                    res.samples_used,
                    "" if res.stage_returned is None else res.stage_returned,
                    res.models_evaluated,
                ]
            )


def write_report_json(report: BatchReport, path) -> None:
    """Full report: metrics, per-input results, config, schema version."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": report.config,
        "metrics": {
            "acr": report.acr,
            "certified_accuracy": [list(point) for point in report.certified_accuracy],
            "sample_rf": report.sample_rf,
            "time_rf": report.time_rf,
            "kcr": report.kcr,
            "asr": None if report.asr is None else list(report.asr),
            "mean_samples": report.mean_samples,
            "baseline_samples": report.baseline_samples,
        },
        "results": [
            {
                "id": rid,
                "label": label,
                "prediction": res.predicted_class,
                "abstained": res.predicted_class == ABSTAIN,
                "radius": res.radius,
                "p_lower": res.p_lower,
                "samples_used": res.samples_used,
                "stage": res.stage_returned,
                "models_evaluated": res.models_evaluated,
                "consensus_hits": res.consensus_hits,
            }
            for rid, label, res in zip(report.ids, report.labels, report.results)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def write_sweep_csv(rows, path, config: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# smoothcert theory sweep, schema {SCHEMA_VERSION}\n")
        if config is not None:
            fh.write(f"# config {_config_comment(config)}\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.k,
                    repr(row.var_ratio_p),
                    repr(row.var_ratio_c),
                    repr(row.p1),
                    repr(row.p1_se),
                    repr(row.chebyshev),
                    repr(row.expected_radius),
                ]
            )


def read_sweep_csv(path) -> list[TheorySweepRow]:
    rows = []
    with open(path, newline="") as fh:
        filtered = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(filtered)
        if reader.fieldnames != SWEEP_COLUMNS:
            raise ValueError(f"sweep CSV must have columns {','.join(SWEEP_COLUMNS)}")
        for line in reader:
            rows.append(
                TheorySweepRow(
                    k=int(line["k"]),
                    var_ratio_p=float(line["var_ratio_p"]),
                    var_ratio_c=float(line["var_ratio_c"]),
                    p1=float(line["p1"]),
                    p1_se=float(line["p1_se"]),
                    chebyshev=float(line["chebyshev"]),
                    expected_radius=float(line["expected_radius"]),
                )
            )
    return rows


def write_population_csv(ids, xs, labels, path) -> None:
    """Inputs as rows: id, label, then one column per coordinate."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or len(xs) != len(ids) or len(xs) != len(labels):
        raise ValueError("ids, labels, and xs rows must align")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"x{i}" for i in range(xs.shape[1])])
        for rid, label, row in zip(ids, labels, xs):
            writer.writerow([rid, int(label)] + [repr(float(v)) for v in row])


def read_population_csv(path):
    """-> (ids, xs, labels) from a file written by write_population_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (
            header is None
            or header[:2] != ["id", "label"]
            or header[2:] != [f"x{i}" for i in range(len(header) - 2)]
            or len(header) < 3
        ):
            raise ValueError("population CSV must have columns id,label,x0,...")
        ids, labels, rows = [], [], []
        for line in reader:
            if len(line) != len(header):
                raise ValueError("population CSV row width mismatch")
            ids.append(line[0])
            labels.append(int(line[1]))
            rows.append([float(v) for v in line[2:]])
    if not rows:
        raise ValueError("population CSV is empty")
    return ids, np.array(rows), labels


# ---------------------------------------------------------------------------
# Figures


def certified_accuracy_figure(report: BatchReport, path) -> None:
    """Step curve of certified accuracy against the radius grid."""
    radii = [r for r, _ in report.certified_accuracy]
    values = [v for _, v in report.certified_accuracy]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.step(radii, values, where="post")
    ax.set_xlabel("radius")
    ax.set_ylabel("certified accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(f"ACR = {report.acr:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def stage_share_figure(report: BatchReport, path) -> None:
    """Bars of the fraction of inputs returned at each adaptive stage."""
    if report.asr is None:
        raise ValueError("stage shares exist only for adaptive reports")
    stages = list(range(1, len(report.asr) + 1))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(stages, report.asr)
    ax.set_xticks(stages)
    ax.set_xlabel("stage returned")
    ax.set_ylabel("fraction of inputs")
    ax.set_ylim(0, 1.02)
    ax.set_title(
        f"mean samples {report.mean_samples:.0f}"
        f" (sample reduction {report.sample_rf:.1f}x)"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(rows, path) -> None:
    """Two panels: success probability bounds and expected radius vs k."""
    ks = [row.k for row in rows]
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
    left.errorbar(
        ks,
        [row.p1 for row in rows],
        yerr=[3 * row.p1_se for row in rows],
        label="p1 (MC, 3 SE)",
        marker="o",
        markersize=3,
    )
    left.plot(ks, [row.chebyshev for row in rows], label="Chebyshev bound", marker="s", markersize=3)
    left.set_xlabel("ensemble size k")
    left.set_ylabel("success probability")
    left.legend()
    left.grid(alpha=0.3)
    right.plot(ks, [row.expected_radius for row in rows], marker="o", markersize=3)
    right.set_xlabel("ensemble size k")
    right.set_ylabel("expected certified radius")
    right.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
