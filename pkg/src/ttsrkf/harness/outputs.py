"""CSV and plot emission for experiment results."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..errors import DataIOError
from .metrics import MetricsRow

METRICS_HEADER = ("t", "rmse", "nll", "wall_ms")
PREDICTIONS_HEADER = ("index", "mean", "variance", "y_true")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def metrics_columns(rows: list[MetricsRow], with_min_eig: bool, with_diverged: bool) -> list[str]:
    cols = list(METRICS_HEADER)
    if with_min_eig:
        cols.append("min_eig")
    if with_diverged:
        cols.append("diverged_at")
    return cols


def metrics_lines(rows: list[MetricsRow], with_min_eig: bool, with_diverged: bool) -> list[str]:
    lines = [",".join(metrics_columns(rows, with_min_eig, with_diverged))]
    for r in rows:
        vals = [fmt(r.t), fmt(r.rmse), fmt(r.nll), fmt(r.wall_ms)]
        if with_min_eig:
            vals.append(fmt(r.min_eig))
        if with_diverged:
            vals.append(fmt(r.diverged_at))
        lines.append(",".join(vals))
    return lines


def _write(path: Path, lines: list[str]) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def write_metrics_csv(path, rows, with_min_eig=False, with_diverged=False) -> None:
    _write(Path(path), metrics_lines(rows, with_min_eig, with_diverged))


def write_predictions_csv(path, means, variances, targets) -> None:
    lines = [",".join(PREDICTIONS_HEADER)]
    if means is not None:
        for k, (m, v, y) in enumerate(zip(means, variances, targets)):
            lines.append(",".join([str(k), fmt(m), fmt(v), fmt(y)]))
    _write(Path(path), lines)


def plot_metrics(path, rows: list[MetricsRow], title: str = "") -> None:
    """Static RMSE and NLL curves against the number of updates."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in rows if math.isfinite(r.rmse)]
    t = [r.t for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(t, [r.rmse for r in rows], marker=".")
    axes[0].set_ylabel("RMSE")
    axes[1].plot(t, [r.nll for r in rows], marker=".")
    axes[1].set_ylabel("NLL")
    for ax in axes:
        ax.set_xlabel("t")
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def emit_outputs(result, out_dir, plot: bool = False) -> dict:
    """Write ``metrics.csv``, ``predictions.csv`` and optionally ``metrics.png``."""
    out = Path(out_dir)
    cfg = result.config
    with_min_eig = cfg.track_min_eig and any(r.min_eig is not None for r in result.rows)
    with_diverged = cfg.filter == "tnkf" or result.diverged_at is not None
    paths = {"metrics": out / "metrics.csv", "predictions": out / "predictions.csv"}
    write_metrics_csv(paths["metrics"], result.rows, with_min_eig, with_diverged)
    write_predictions_csv(paths["predictions"], result.means, result.variances, result.targets)
    if plot:
        paths["plot"] = out / "metrics.png"
        plot_metrics(paths["plot"], result.rows, cfg.name)
    return paths
