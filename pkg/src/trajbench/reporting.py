"""Aggregation of per-run ATE results into statistics and CSV reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError

ATE_SUMMARY_FIELDS = (
    "experiment",
    "method",
    "dataset",
    "sequence",
    "run",
    "status",
    "ate_rmse_m",
    "num_pairs",
    "num_estimated",
    "num_gt",
    "num_total",
)

STATUS_OK = "ok"
STATUS_FAILED = "failed"


class EmptyInput(EvaluationError):
    pass


class ZeroDenominator(EvaluationError):
    pass


@dataclass(frozen=True)
class RunAteRecord:
    """One evaluated run; ``rmse`` is None exactly when the run failed."""

    experiment: str
    method: str
    dataset: str
    sequence: str
    run_index: int
    status: str
    rmse: float | None
    num_pairs: int
    num_estimated: int
    num_gt: int
    num_total: int

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    @property
    def sequence_key(self) -> tuple[str, str]:
        return (self.dataset, self.sequence)

    @property
    def sequence_label(self) -> str:
        return f"{self.dataset}/{self.sequence}"


@dataclass(frozen=True)
class BoxplotStats:
    """Five-number summary with 1.5 IQR whiskers and explicit outliers."""

    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]
    n: int


def boxplot_stats(values) -> BoxplotStats:
    """Boxplot summary of nonnegative finite values.

    Quartiles interpolate linearly at rank ``p * (n - 1)``; whiskers sit on
    the most extreme data inside ``[q1 - 1.5 IQR, q3 + 1.5 IQR]`` and
    everything outside is an outlier.
    """
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise EmptyInput("boxplot needs at least one value")
    if not np.isfinite(arr).all():
        raise ValueError("boxplot values must be finite")
    q1, median, q3 = (float(q) for q in np.percentile(arr, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    outliers = arr[(arr < lo_fence) | (arr > hi_fence)]
    return BoxplotStats(
        median=median,
        q1=q1,
        q3=q3,
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=tuple(sorted(float(v) for v in outliers)),
        n=int(arr.size),
    )


def default_thresholds(count: int = 256, low: float = 0.001, high: float = 10.0) -> np.ndarray:
    """Log-spaced ATE thresholds in meters, 1 mm to 10 m by default."""
    return np.geomspace(low, high, count)


def cumulative_curve(ate_values, thresholds) -> list[int]:
    """Number of values at or below each threshold (inclusive)."""
    values = np.sort(np.asarray(ate_values, dtype=float).reshape(-1))
    th = np.asarray(thresholds, dtype=float).reshape(-1)
    if th.size == 0:
        raise ValueError("thresholds must be non-empty")
    if (th <= 0.0).any():
        raise ValueError("thresholds must be positive")
    if th.size > 1 and not (np.diff(th) > 0.0).all():
        raise ValueError("thresholds must be strictly increasing")
    return [int(c) for c in np.searchsorted(values, th, side="right")]


def successful(records: list[RunAteRecord]) -> list[RunAteRecord]:
    return [r for r in records if r.ok]


def failure_rate(records: list[RunAteRecord]) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if not r.ok) / len(records)


def sequence_medians(records: list[RunAteRecord]) -> dict[tuple[str, str], float]:
    """Pooled per-sequence median rmse across all methods' successful runs."""
    pools: dict[tuple[str, str], list[float]] = {}
    for rec in records:
        if rec.ok:
            pools.setdefault(rec.sequence_key, []).append(rec.rmse)
    return {key: float(np.median(vals)) for key, vals in pools.items()}


def radar_normalize(
    records: list[RunAteRecord],
) -> dict[tuple[str, tuple[str, str]], float]:
    """Per-method median rmse divided by the pooled per-sequence median.

    A value of 1.0 means the method sits at the median of everything that
    ran on that sequence; smaller is better.  Keys are (method,
    (dataset, sequence)) and only successful runs contribute.
    """
    ok = successful(records)
    denominators = sequence_medians(ok)
    for key, denom in denominators.items():
        if denom < 1e-15:
            raise ZeroDenominator(f"pooled median for {key[0]}/{key[1]} is ~0")
    grouped: dict[tuple[str, tuple[str, str]], list[float]] = {}
    for rec in ok:
        grouped.setdefault((rec.method, rec.sequence_key), []).append(rec.rmse)
    return {
        key: float(np.median(vals)) / denominators[key[1]]
        for key, vals in grouped.items()
    }


@dataclass(frozen=True)
class FrameCoverageRow:
    method: str
    dataset: str
    sequence: str
    run_index: int
    num_estimated: int
    num_pairs: int
    num_total: int
    status: str


def frame_coverage_table(records: list[RunAteRecord]) -> list[FrameCoverageRow]:
    """How much of each sequence every run actually covered."""
    return [
        FrameCoverageRow(
            method=r.method,
            dataset=r.dataset,
            sequence=r.sequence,
            run_index=r.run_index,
            num_estimated=r.num_estimated,
            num_pairs=r.num_pairs,
            num_total=r.num_total,
            status=r.status,
        )
        for r in records
    ]


def _float_field(value: float) -> str:
    # repr keeps the shortest exact round-trip form, so rereading a CSV
    # rebuilds the record bit for bit.
    return repr(float(value))


def write_ate_summary(records: list[RunAteRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ATE_SUMMARY_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.experiment,
                    r.method,
                    r.dataset,
                    r.sequence,
                    r.run_index,
                    r.status,
                    "" if r.rmse is None else _float_field(r.rmse),
                    r.num_pairs,
                    r.num_estimated,
                    r.num_gt,
                    r.num_total,
                ]
            )


def read_ate_summary(path) -> list[RunAteRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != ATE_SUMMARY_FIELDS:
            raise ValueError(f"unexpected ate summary header: {header}")
        for row in reader:
            records.append(
                RunAteRecord(
                    experiment=row[0],
                    method=row[1],
                    dataset=row[2],
                    sequence=row[3],
                    run_index=int(row[4]),
                    status=row[5],
                    rmse=float(row[6]) if row[6] else None,
                    num_pairs=int(row[7]),
                    num_estimated=int(row[8]),
                    num_gt=int(row[9]),
                    num_total=int(row[10]),
                )
            )
    return records


def grouped_rmse(
    records: list[RunAteRecord],
) -> dict[tuple[str, tuple[str, str]], list[float]]:
    """Successful rmse values per (method, sequence), insertion-ordered."""
    groups: dict[tuple[str, tuple[str, str]], list[float]] = {}
    for rec in records:
        if rec.ok:
            groups.setdefault((rec.method, rec.sequence_key), []).append(rec.rmse)
    return groups


def write_boxplot_csv(records: list[RunAteRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            [
                "experiment",
                "method",
                "dataset",
                "sequence",
                "n",
                "median",
                "q1",
                "q3",
                "whisker_low",
                "whisker_high",
                "outliers",
            ]
        )
        experiment = records[0].experiment if records else ""
        for (method, (dataset, sequence)), values in grouped_rmse(records).items():
            stats = boxplot_stats(values)
            writer.writerow(
                [
                    experiment,
                    method,
                    dataset,
                    sequence,
                    stats.n,
                    _float_field(stats.median),
                    _float_field(stats.q1),
                    _float_field(stats.q3),
                    _float_field(stats.whisker_low),
                    _float_field(stats.whisker_high),
                    ";".join(_float_field(v) for v in stats.outliers),
                ]
            )


def write_cumulative_csv(records: list[RunAteRecord], path, thresholds=None) -> None:
    if thresholds is None:
        thresholds = default_thresholds()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    by_method: dict[str, list[float]] = {}
    for rec in records:
        if rec.ok:
            by_method.setdefault(rec.method, []).append(rec.rmse)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["method", "threshold_m", "runs_at_or_below"])
        for method, values in by_method.items():
            counts = cumulative_curve(values, thresholds)
            for threshold, count in zip(thresholds, counts):
                writer.writerow([method, _float_field(threshold), count])


def write_radar_csv(records: list[RunAteRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    denominators = sequence_medians(successful(records))
    normalized = radar_normalize(records)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            [
                "method",
                "dataset",
                "sequence",
                "run",
                "ate_rmse_m",
                "normalized",
                "method_median_normalized",
            ]
        )
        for rec in records:
            if not rec.ok:
                continue
            denom = denominators[rec.sequence_key]
            writer.writerow(
                [
                    rec.method,
                    rec.dataset,
                    rec.sequence,
                    rec.run_index,
                    _float_field(rec.rmse),
                    _float_field(rec.rmse / denom),
                    _float_field(normalized[(rec.method, rec.sequence_key)]),
                ]
            )
