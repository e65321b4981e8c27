"""Command-line front end.

Subcommands cover the whole pipeline: prepare sequences, run an
experiment file against one or more methods, evaluate the resulting
trajectories, and regenerate report tables and charts.  ``demo`` chains
all of it on two bundled synthetic sequences.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError, TrajbenchError

ROOT_ENV = "TRAJBENCH_ROOT"
DEFAULT_ROOT = "./VSLAMLAB-BENCHMARK"

_DEMO_SEQUENCES_YAML = "synthetic:\n  - orbit_00\n  - orbit_01\n"

_DEMO_YAML_TEMPLATE = """\
demo_mock_precise:
  Config: demo_sequences.yaml
  NumRuns: 5
  Parameters:
    verbose: 0
    max_rgb: 120
    seed: {seed}
  Method: mock_precise
demo_mock_noisy:
  Config: demo_sequences.yaml
  NumRuns: 5
  Parameters:
    verbose: 0
    max_rgb: 120
    seed: {seed}
  Method: mock_noisy
"""


class _Parser(argparse.ArgumentParser):
    # Usage mistakes should exit through the shared error path, not
    # argparse's hardcoded SystemExit(2).
    def error(self, message):
        raise ConfigurationError(message)


def _add_root(parser) -> None:
    parser.add_argument(
        "--root",
        default=os.environ.get(ROOT_ENV, DEFAULT_ROOT),
        help=f"benchmark data root (default: ${ROOT_ENV} or {DEFAULT_ROOT})",
    )


def _experiment_name(text: str) -> str:
    if text.endswith((".yaml", ".yml")):
        return Path(text).stem
    return text


def _evaluate_experiment(
    experiment: str,
    root: Path,
    align: str,
    max_difference: float,
    offset: float,
):
    """Compute per-run ATE records and write every evaluation output.

    Returns (records, evaluation dir, warning strings).
    """
    from . import reporting
    from .dataset import read_groundtruth_csv, read_rgb_csv
    from .errors import EvaluationError
    from .evaluation import compute_ate
    from .experiment import EXPERIMENTS_DIRNAME, read_runs_csv
    from .trajectory import read_trajectory_file

    exp_dir = root / EXPERIMENTS_DIRNAME / experiment
    runs_csv = exp_dir / "runs.csv"
    if not runs_csv.is_file():
        raise DataError(f"{runs_csv} not found; run the experiment first")
    runs = read_runs_csv(runs_csv, root)

    warnings: list[str] = []
    gt_cache: dict[tuple[str, str], object] = {}
    records = []
    for run in runs:
        key = (run.dataset, run.sequence)
        if key not in gt_cache:
            gt_cache[key] = read_groundtruth_csv(
                root / run.dataset / run.sequence / "groundtruth.csv"
            )
        ground_truth = gt_cache[key]
        out_dir = exp_dir / run.method / run.dataset / run.sequence
        sampled = out_dir / f"{run.exp_id}_rgb.csv"
        num_total = len(read_rgb_csv(sampled)) if sampled.is_file() else 0

        status = run.status
        rmse = None
        num_pairs = 0
        num_estimated = 0
        if run.ok:
            try:
                estimate = read_trajectory_file(run.trajectory_path)
                num_estimated = len(estimate)
                result = compute_ate(
                    estimate,
                    ground_truth,
                    align_mode=align,
                    max_difference=max_difference,
                    time_offset=offset,
                    num_total_frames=num_total,
                )
                rmse = result.rmse
                num_pairs = result.num_pairs
                if result.degenerate_alignment:
                    warnings.append(
                        f"run {run.exp_id}: near-degenerate alignment"
                        f" (collinear or tiny point set)"
                    )
            except (DataError, EvaluationError) as exc:
                status = reporting.STATUS_FAILED
                rmse = None
                warnings.append(f"run {run.exp_id}: {exc}")
        records.append(
            reporting.RunAteRecord(
                experiment=experiment,
                method=run.method,
                dataset=run.dataset,
                sequence=run.sequence,
                run_index=run.run_index,
                status=status,
                rmse=rmse,
                num_pairs=num_pairs,
                num_estimated=num_estimated,
                num_gt=len(ground_truth),
                num_total=num_total,
            )
        )

    out_dir = exp_dir / "evaluation"
    reporting.write_ate_summary(records, out_dir / "ate_summary.csv")
    warnings.extend(_write_report_outputs(experiment, records, out_dir))
    return records, out_dir, warnings


def _write_report_outputs(experiment: str, records, out_dir: Path) -> list[str]:
    """Tables and charts derived from the per-run records."""
    from . import reporting, svgplot

    out_dir.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    ok = reporting.successful(records)
    if not ok:
        warnings.append("no successful runs; charts were skipped")
        return warnings

    reporting.write_boxplot_csv(records, out_dir / "boxplot.csv")
    reporting.write_cumulative_csv(records, out_dir / "cumulative.csv")

    methods = sorted({rec.method for rec in ok})
    sequence_keys = sorted({rec.sequence_key for rec in ok})
    grouped = reporting.grouped_rmse(records)

    groups = []
    for key in sequence_keys:
        boxes = [
            (method, reporting.boxplot_stats(grouped[(method, key)]))
            for method in methods
            if (method, key) in grouped
        ]
        groups.append((f"{key[0]}/{key[1]}", boxes))
    (out_dir / f"{experiment}_boxplot.svg").write_text(
        svgplot.render_boxplot_svg(groups), encoding="utf-8"
    )

    thresholds = reporting.default_thresholds()
    series = []
    for method in methods:
        values = [rec.rmse for rec in ok if rec.method == method]
        series.append((method, reporting.cumulative_curve(values, thresholds)))
    (out_dir / f"{experiment}_cumulative.svg").write_text(
        svgplot.render_cumulative_svg(series, thresholds), encoding="utf-8"
    )

    try:
        reporting.write_radar_csv(records, out_dir / "radar.csv")
        normalized = reporting.radar_normalize(records)
        covered = all(
            (method, key) in normalized
            for method in methods
            for key in sequence_keys
        )
        if covered:
            axes = [f"{ds}/{seq}" for ds, seq in sequence_keys]
            radar_series = [
                (method, [normalized[(method, key)] for key in sequence_keys])
                for method in methods
            ]
            (out_dir / f"{experiment}_radar.svg").write_text(
                svgplot.render_radar_svg(axes, radar_series), encoding="utf-8"
            )
        else:
            warnings.append(
                "radar chart skipped: not every method succeeded on every sequence"
            )
    except reporting.ZeroDenominator as exc:
        warnings.append(f"radar outputs skipped: {exc}")
    return warnings


def _print_method_table(records) -> None:
    from . import reporting

    methods: dict[str, list] = {}
    for rec in records:
        methods.setdefault(rec.method, []).append(rec)
    print(f"{'method':<16} {'runs':>4} {'ok':>4} {'fail%':>6} {'median_m':>10} {'mean_m':>10}")
    for method in sorted(methods):
        recs = methods[method]
        ok_values = [r.rmse for r in recs if r.ok]
        fail = 100.0 * reporting.failure_rate(recs)
        if ok_values:
            import numpy as np

            median = f"{float(np.median(ok_values)):10.6f}"
            mean = f"{float(np.mean(ok_values)):10.6f}"
        else:
            median = f"{'-':>10}"
            mean = f"{'-':>10}"
        print(f"{method:<16} {len(recs):>4} {len(ok_values):>4} {fail:>6.1f} {median} {mean}")


def cmd_demo(args) -> int:
    from .adapters import SyntheticAdapter, prepare_sequence
    from .experiment import run_experiment_file

    root = Path(args.root)
    adapter = SyntheticAdapter(seed=args.seed)
    for sequence in adapter.sequences():
        layout = prepare_sequence(adapter, sequence, root)
        print(f"prepared {adapter.dataset_name}/{sequence} at {layout.root}")

    configs = root / "configs"
    configs.mkdir(parents=True, exist_ok=True)
    (configs / "demo_sequences.yaml").write_text(_DEMO_SEQUENCES_YAML, encoding="utf-8")
    demo_yaml = configs / "demo.yaml"
    demo_yaml.write_text(_DEMO_YAML_TEMPLATE.format(seed=args.seed), encoding="utf-8")

    records = run_experiment_file(demo_yaml, root, workers=args.workers)
    print(f"executed {len(records)} runs")

    ate_records, out_dir, warnings = _evaluate_experiment(
        "demo", root, "sim3", 0.02, 0.0
    )
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    _print_method_table(ate_records)
    print(f"evaluation outputs in {out_dir}")
    return 0


def cmd_prepare(args) -> int:
    from .adapters import builtin_adapters, prepare_sequence

    adapters = builtin_adapters(seed=args.seed)
    if args.dataset not in adapters:
        raise ConfigurationError(
            f"unknown dataset {args.dataset!r}; available: {', '.join(sorted(adapters))}"
        )
    adapter = adapters[args.dataset]
    sequences = args.sequences or adapter.sequences()
    root = Path(args.root)
    for sequence in sequences:
        layout = prepare_sequence(adapter, sequence, root)
        print(f"prepared {args.dataset}/{sequence} at {layout.root}")
    return 0


def cmd_validate(args) -> int:
    from .dataset import validate_sequence

    report = validate_sequence(Path(args.root) / args.dataset / args.sequence)
    print(report.describe())
    return 0 if report.ok else DataError("").exit_code


def cmd_run(args) -> int:
    from .experiment import EXPERIMENTS_DIRNAME, run_experiment_file

    root = Path(args.root)
    records = run_experiment_file(
        args.experiment, root, workers=args.workers, timeout=args.timeout
    )
    for rec in records:
        print(
            f"{rec.exp_id} {rec.method} {rec.dataset}/{rec.sequence}"
            f" run={rec.run_index} {rec.status} ({rec.wall_time_s:.2f}s)"
        )
    experiment = Path(args.experiment).stem
    print(f"wrote {root / EXPERIMENTS_DIRNAME / experiment / 'runs.csv'}")
    bad = sum(1 for rec in records if not rec.ok)
    if bad:
        print(f"{bad} of {len(records)} runs did not finish cleanly", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    experiment = _experiment_name(args.experiment)
    records, out_dir, warnings = _evaluate_experiment(
        experiment, Path(args.root), args.align, args.max_difference, args.offset
    )
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    _print_method_table(records)
    print(f"evaluation outputs in {out_dir}")
    return 0


def cmd_report(args) -> int:
    from .experiment import EXPERIMENTS_DIRNAME
    from .reporting import read_ate_summary

    experiment = _experiment_name(args.experiment)
    out_dir = Path(args.root) / EXPERIMENTS_DIRNAME / experiment / "evaluation"
    summary = out_dir / "ate_summary.csv"
    if not summary.is_file():
        raise DataError(f"{summary} not found; evaluate the experiment first")
    records = read_ate_summary(summary)
    warnings = _write_report_outputs(experiment, records, out_dir)
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    _print_method_table(records)
    print(f"report outputs in {out_dir}")
    return 0


def cmd_mock_method(args) -> int:
    from . import mock_method

    return mock_method.run(args)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="trajbench",
        description="Prepare sequences, run trajectory estimators, and score them.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("demo", help="end-to-end run on two synthetic sequences")
    _add_root(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("prepare", help="build sequences in the standard layout")
    _add_root(p)
    p.add_argument("dataset")
    p.add_argument("sequences", nargs="*")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("validate", help="check one prepared sequence")
    _add_root(p)
    p.add_argument("dataset")
    p.add_argument("sequence")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="execute every run of an experiment file")
    _add_root(p)
    p.add_argument("experiment", help="path to the experiment YAML")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timeout", type=float, default=None, help="per-run seconds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score an executed experiment")
    _add_root(p)
    p.add_argument("experiment", help="experiment name or YAML path")
    p.add_argument("--align", choices=("sim3", "se3", "none"), default="sim3")
    p.add_argument("--max-difference", type=float, default=0.02,
                   help="association window in seconds")
    p.add_argument("--offset", type=float, default=0.0,
                   help="added to estimate timestamps before association")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="regenerate tables and charts from ate_summary.csv")
    _add_root(p)
    p.add_argument("experiment", help="experiment name or YAML path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("mock-method", help="bundled noise-model estimator")
    from . import mock_method

    mock_method.add_arguments(p)
    p.set_defaults(func=cmd_mock_method)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.func(args) or 0)
    except TrajbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
