"""CSV writers and the temperature-ablation table layout."""

from __future__ import annotations

import csv
import io
from typing import Sequence

import numpy as np

from .metrics import MetricsReport

METRICS_HEADER = ("dataset", "absrel", "delta1", "scale", "shift", "n_valid")


def fmt(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def metrics_csv(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for name, r in rows:
        w.writerow([name, fmt(r.absrel), fmt(r.delta1), fmt(r.scale), fmt(r.shift), int(r.n_valid)])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[tuple[str, MetricsReport]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise ValueError("not a metrics report")
    return [
        (r[0], MetricsReport(float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5])))
        for r in rows[1:]
    ]


def loss_log_csv(log: Sequence[tuple[int, float, float]]) -> str:
    lines = ["step,lr,loss"]
    lines += [f"{step},{fmt(lr)},{fmt(loss)}" for step, lr, loss in log]
    return "\n".join(lines) + "\n"


def ablation_csv(taus: Sequence[float], columns: Sequence[str], table: np.ndarray, ranks: np.ndarray) -> str:
    lines = [",".join(["tau", *columns, "avg_rank"])]
    for tau, row, rank in zip(taus, table, ranks):
        lines.append(",".join([fmt(tau), *(fmt(v) for v in row), fmt(rank)]))
    return "\n".join(lines) + "\n"


def _short(x: float, digits: int) -> str:
    return f"{round(float(x), digits):g}"


def format_rank_table(taus: Sequence[float], ranks: Sequence[float], digits: int = 1) -> str:
    """Two-row markdown table of average rank per temperature; the best (lowest) is bold."""
    shown = [round(float(r), digits) for r in ranks]
    best = min(shown)
    head = ["Temperature Scaling Factor", *(f"{float(t):g}" for t in taus)]
    cells = [f"**{_short(r, digits)}**" if r == best else _short(r, digits) for r in shown]
    body = ["Avg. Rank (↓)", *cells]
    sep = ["---"] * len(head)
    return "\n".join("| " + " | ".join(row) + " |" for row in (head, sep, body)) + "\n"
