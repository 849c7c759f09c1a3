"""Coverage reports: JSON, a fixed-column table, per-run CSV and a plot."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from .litreview import AblationReport, CoverageReport

TABLE_COLUMNS = ("Setting", "Model", "Max", "Min", "Avg")


def aggregate(rep: CoverageReport) -> dict:
    return {"max": rep.max, "min": rep.min, "avg": float(rep.avg),
            "avg_exact": str(rep.avg), "variance": rep.variance, "runs": len(rep.runs)}


def report_dict(rep: CoverageReport) -> dict:
    per_run = [{
        "run": r.run_index,
        "seed": r.seed,
        "coverage": r.coverage,
        "status": r.outcome.status if r.outcome else "crashed",
        "crash": r.crash,
        "overflows": r.overflows,
        "task_dir": str(r.task_dir),
        "ungrounded": [j.item_id for j in r.judgments if not j.grounded],
    } for r in rep.runs]
    config = {k: v for k, v in rep.config.items()}
    return {"config": config, "setting": rep.mode, "model": rep.model,
            "per_run": per_run, "aggregate": aggregate(rep)}


def render_table(reports: list[CoverageReport]) -> str:
    rows = [TABLE_COLUMNS] + [
        (r.mode, r.model, str(r.max), str(r.min), f"{float(r.avg):.1f}") for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]

    def line(row):
        cells = [row[i].ljust(widths[i]) if i < 2 else row[i].rjust(widths[i])
                 for i in range(len(row))]
        return "| " + " | ".join(cells) + " |"

    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(rows[0]), sep, *(line(r) for r in rows[1:])]) + "\n"


def write_csv(path: Path, reports: list[CoverageReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "model", "run", "seed", "coverage", "status"])
        for rep in reports:
            for r in rep.runs:
                w.writerow([rep.mode, rep.model, r.run_index, r.seed, r.coverage,
                            r.outcome.status if r.outcome else "crashed"])


def plot_coverage(path: Path, reports: list[CoverageReport], n_items: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.ticker import MaxNLocator

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for rep in reports:
        xs = [r.run_index for r in rep.runs]
        ax.plot(xs, rep.per_run_coverage, marker="o", label=f"{rep.mode} (avg {float(rep.avg):.1f})")
    ax.set_xlabel("run")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("coverage")
    ax.set_ylim(0, n_items * 1.05)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_reports(out_dir: str | os.PathLike, result: CoverageReport | AblationReport,
                  *, plot: bool = True) -> dict[str, Path]:
    """Write report.json, coverage_table.md, per_run.csv and coverage.png to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, AblationReport):
        reports = [result.file_centric, result.compressed_context]
        data = {
            "file_centric": report_dict(result.file_centric),
            "compressed_context": report_dict(result.compressed_context),
            "gap": {"avg_gap": float(result.gap), "avg_gap_exact": str(result.gap),
                    "variance_file_centric": result.file_centric.variance,
                    "variance_compressed_context": result.compressed_context.variance},
        }
    else:
        reports = [result]
        data = report_dict(result)
    paths = {"json": out / "report.json", "table": out / "coverage_table.md",
             "csv": out / "per_run.csv"}
    paths["json"].write_text(json.dumps(data, indent=2, default=str) + "\n")
    table = render_table(reports)
    if isinstance(result, AblationReport):
        table += (f"\ncoverage gap (avg): {float(result.gap):.1f}; variance "
                  f"file_centric {result.file_centric.variance:.2f}, compressed_context "
                  f"{result.compressed_context.variance:.2f}\n")
    paths["table"].write_text(table)
    write_csv(paths["csv"], reports)
    if plot:
        paths["plot"] = out / "coverage.png"
        plot_coverage(paths["plot"], reports, int(reports[0].config.get("n_items", 80)))
    return paths
