"""
Report emission from a results file.

Reads ``results.jsonl`` (or a previously emitted ``run.csv``) and writes:

- ``run.csv``: one row per (cell x seed) result; failed cells have an empty
  accuracy and their error in the trailing ``status`` and ``error`` columns
- ``report.md``: per-dataset tables of mean ± sample std accuracy over seeds
- ``accuracy_<dataset>_<test set>.png``: accuracy against synthetic fraction

Everything except the timestamp line of ``report.md`` is a pure function of
the results file.
"""

from __future__ import annotations

import io
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from mixer import parse_ratio  # noqa: E402
from results_store import STATUS_OK, load_results  # noqa: E402
from utils.artifacts import save_artifact  # noqa: E402
from utils.errors import FormatError  # noqa: E402
from utils.logging import get_logger  # noqa: E402

logger = get_logger()

CSV_COLUMNS = [
    "dataset",
    "train_composition",
    "test_set",
    "seed",
    "accuracy",
    "n_original",
    "n_synthetic",
    "wall_time_s",
]
RUN_COLUMNS = CSV_COLUMNS + ["status", "error"]
TEST_ORDER = {"original": 0, "synthetic": 1, "corrupted": 2}
CSV_FILE_NAME = "run.csv"
REPORT_FILE_NAME = "report.md"


def synthetic_fraction(train_composition: str) -> float:
    """b / (a + b) of a composition label; pure original is 0, pure synthetic is 1."""
    if train_composition == "original":
        return 0.0
    if train_composition == "synthetic":
        return 1.0
    a, b = parse_ratio(train_composition)
    return b / (a + b)


def _train_group(train_composition: str) -> int:
    """Pure original, then pure synthetic, then ratio mixtures."""
    return {"original": 0, "synthetic": 1}.get(train_composition, 2)


def _load_frame(results_path: Path) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Return (successful rows, failed rows)."""
    if not results_path.exists():
        raise FormatError(f"Results file not found: {results_path}")
    if results_path.suffix == ".csv":
        try:
            frame = pd.read_csv(results_path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise FormatError(f"{results_path}: malformed CSV: {e}") from e
    else:
        frame = pd.DataFrame(load_results(results_path, strict=True))
    if frame.empty:
        return pd.DataFrame(columns=CSV_COLUMNS), pd.DataFrame(columns=RUN_COLUMNS)

    if "status" in frame.columns:
        failed = frame[frame["status"] != STATUS_OK].reindex(columns=RUN_COLUMNS)
        frame = frame[frame["status"] == STATUS_OK].copy()
    else:
        failed = pd.DataFrame(columns=RUN_COLUMNS)

    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing and not frame.empty:
        raise FormatError(f"{results_path}: missing result columns {missing}")
    frame = frame.reindex(columns=CSV_COLUMNS)
    try:
        frame = frame.astype({
            "seed": "int64", "accuracy": "float64", "n_original": "int64",
            "n_synthetic": "int64", "wall_time_s": "float64",
        })
    except (ValueError, TypeError) as e:
        raise FormatError(f"{results_path}: non-numeric result values: {e}") from e
    if ((frame["accuracy"] < 0) | (frame["accuracy"] > 1)).any():
        raise FormatError(f"{results_path}: accuracy outside [0, 1]")
    for composition in frame["train_composition"].unique():
        try:
            synthetic_fraction(str(composition))
        except ValueError as e:
            raise FormatError(f"{results_path}: bad train composition {composition!r}") from e
    return frame, failed


def _sorted(frame: pd.DataFrame) -> pd.DataFrame:
    keys = frame.assign(
        _group=frame["train_composition"].map(_train_group),
        _fraction=frame["train_composition"].map(synthetic_fraction),
        _test=frame["test_set"].map(lambda t: TEST_ORDER.get(t, len(TEST_ORDER))),
    )
    keys = keys.sort_values(
        ["dataset", "_group", "_fraction", "train_composition", "_test", "test_set", "seed"], kind="mergesort"
    )
    return keys.drop(columns=["_group", "_fraction", "_test"]).reset_index(drop=True)


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean, sample std and seed count of accuracy per (dataset, train, test)."""
    grouped = frame.groupby(["dataset", "train_composition", "test_set"], sort=False)
    summary = grouped.agg(
        accuracy_mean=("accuracy", "mean"),
        accuracy_std=("accuracy", "std"),
        seeds=("seed", "count"),
        n_original=("n_original", "first"),
        n_synthetic=("n_synthetic", "first"),
    ).reset_index()
    return _sorted(summary.assign(seed=0)).drop(columns=["seed"])


def _format_accuracy(mean: float, std: float, seeds: int) -> str:
    if seeds < 2 or pd.isna(std):
        return f"{mean:.4f}"
    return f"{mean:.4f} ± {std:.4f}"


def render_markdown(summary: pd.DataFrame, failed: pd.DataFrame, timestamp: str) -> str:
    lines = ["# Experiment report", "", f"Generated: {timestamp}", ""]
    if summary.empty:
        lines += ["No successful results.", ""]
    for dataset, block in summary.groupby("dataset", sort=False):
        lines += [
            f"## {dataset}",
            "",
            "| Train | Test | Accuracy | Seeds | n_original | n_synthetic |",
            "|---|---|---|---|---|---|",
        ]
        for row in block.itertuples(index=False):
            lines.append(
                f"| {row.train_composition} | {row.test_set} | "
                f"{_format_accuracy(row.accuracy_mean, row.accuracy_std, row.seeds)} | "
                f"{row.seeds} | {row.n_original} | {row.n_synthetic} |"
            )
        lines.append("")
    if not failed.empty:
        lines += ["## Failed cells", ""]
        for row in failed.to_dict("records"):
            lines.append(
                f"- {row.get('dataset')} {row.get('train_composition')} -> {row.get('test_set')} "
                f"(seed {row.get('seed')}): {row.get('error')}"
            )
        lines.append("")
    return "\n".join(lines)


def plot_accuracy_vs_fraction(summary: pd.DataFrame, dataset: str, test_set: str, path: Path) -> Path:
    block = summary[(summary["dataset"] == dataset) & (summary["test_set"] == test_set)].copy()
    block["fraction"] = block["train_composition"].map(synthetic_fraction)
    block = block.sort_values(["fraction", "train_composition"], kind="mergesort")

    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    ax.errorbar(
        block["fraction"], block["accuracy_mean"], yerr=block["accuracy_std"].fillna(0.0),
        marker="o", capsize=3,
    )
    for row in block.itertuples(index=False):
        ax.annotate(row.train_composition, (row.fraction, row.accuracy_mean), fontsize=7,
                    textcoords="offset points", xytext=(3, 3))
    ax.set_title(f"{dataset}: test on {test_set}")
    ax.set_xlabel("Synthetic fraction of training set")
    ax.set_ylabel("Accuracy")
    ax.set_xlim(-0.05, 1.05)
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)

    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=120, metadata={"Software": None})
    plt.close(fig)
    return save_artifact(buffer, path)


def _run_table(frame: pd.DataFrame, failed: pd.DataFrame) -> pd.DataFrame:
    """Successful rows in report order, then failed rows with empty accuracy."""
    failed = failed.sort_values(["dataset", "train_composition", "test_set", "seed"], kind="mergesort")
    parts = [part for part in (frame.assign(status=STATUS_OK, error=None), failed) if not part.empty]
    if not parts:
        return pd.DataFrame(columns=RUN_COLUMNS)
    table = pd.concat(parts, ignore_index=True).reindex(columns=RUN_COLUMNS)
    return table.astype({"seed": "Int64", "n_original": "Int64", "n_synthetic": "Int64"})


def emit_report(
    results_path: Union[str, Path],
    out_dir: Optional[Union[str, Path]] = None,
    *,
    timestamp: Optional[str] = None,
) -> dict[str, list[Path]]:
    """
    Write run.csv, report.md and accuracy plots next to (or into ``out_dir``).

    Raises:
        FormatError: If the results file is missing or malformed.
    """
    results_path = Path(results_path)
    out_dir = Path(out_dir) if out_dir is not None else results_path.parent
    frame, failed = _load_frame(results_path)
    frame = _sorted(frame) if not frame.empty else frame
    summary = aggregate(frame) if not frame.empty else pd.DataFrame(
        columns=["dataset", "train_composition", "test_set", "accuracy_mean", "accuracy_std", "seeds",
                 "n_original", "n_synthetic"]
    )

    table = _run_table(frame, failed)
    csv_path = save_artifact(table.to_csv(index=False, float_format="%.6f"), out_dir / CSV_FILE_NAME)
    timestamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    report_path = save_artifact(render_markdown(summary, failed, timestamp), out_dir / REPORT_FILE_NAME)

    plots = []
    for (dataset, test_set), _ in summary.groupby(["dataset", "test_set"], sort=False):
        plots.append(plot_accuracy_vs_fraction(
            summary, dataset, test_set, out_dir / f"accuracy_{dataset}_{test_set}.png"
        ))
    logger.info("Report written to %s (%d rows, %d plots)", out_dir, len(table), len(plots))
    return {"csv": [csv_path], "markdown": [report_path], "plots": plots}
