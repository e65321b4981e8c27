"""Experiment configs and external method execution.

An experiment file is a YAML mapping of config names to config blocks.
Each block names a sequence set, a method, a run count, and the
parameters handed to the method; an optional ablation table varies those
parameters per run index.  Every run gets a zero-padded id, its own
frame listing and settings file, and is executed as a subprocess with a
fixed command-line contract.
"""

from __future__ import annotations

import csv
import hashlib
import os
import shutil
import signal
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .dataset import SequenceLayout, read_rgb_csv, sample_frames, write_rgb_csv
from .errors import ConfigurationError, DataError, ExecutionError

EXPERIMENTS_DIRNAME = "EXPERIMENTS"
EXP_ID_WIDTH = 5
EXP_ID_LIMIT = 10**EXP_ID_WIDTH
RUNS_CSV_HEADER = (
    "exp_id,method,dataset,sequence,run_index,exit_code,"
    "wall_time_s,trajectory_path,status"
)

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_TIMEOUT = "timeout"
STATUS_MISSING_OUTPUT = "missing_output"

#: Parameters the harness consumes when building the per-run frame
#: listing; everything else is forwarded in the settings file.
SAMPLING_KEYS = ("segment", "target_fps", "max_rgb")

_CONFIG_REQUIRED = ("Config", "NumRuns", "Parameters", "Method")
_CONFIG_ALLOWED = _CONFIG_REQUIRED + ("Ablation",)


class MissingField(ConfigurationError):
    pass


class UnknownField(ConfigurationError):
    pass


class BadType(ConfigurationError):
    pass


class DuplicateSequence(ConfigurationError):
    pass


class UnknownDataset(ConfigurationError):
    pass


class UnknownMethod(ConfigurationError):
    pass


class DuplicateExpId(ConfigurationError):
    pass


class MalformedRow(ConfigurationError):
    pass


class ExpIdOverflow(ConfigurationError):
    pass


class ExecutableNotFound(ExecutionError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """How to launch one trajectory estimator."""

    name: str
    folder: str
    executable: tuple[str, ...]
    default_parameters: dict = field(default_factory=dict)
    settings_template: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    sequence_set: Path
    num_runs: int
    parameters: dict
    method: str
    ablation: Path | None = None


@dataclass(frozen=True)
class RunRecord:
    exp_id: str
    method: str
    dataset: str
    sequence: str
    run_index: int
    exit_code: int
    wall_time_s: float
    trajectory_path: str
    status: str

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def format_exp_id(counter: int) -> str:
    if not 0 <= counter < EXP_ID_LIMIT:
        raise ExpIdOverflow(
            f"run counter {counter} does not fit {EXP_ID_WIDTH} digits"
        )
    return f"{counter:0{EXP_ID_WIDTH}d}"


def derive_run_seed(base_seed: int, dataset: str, sequence: str, run_index: int) -> int:
    """Per-run seed that depends on the run's coordinates, not its exp_id.

    Adding or removing runs elsewhere in an experiment therefore cannot
    change what an unchanged (sequence, run_index) pair produces.
    """
    key = f"{base_seed}:{dataset}:{sequence}:{run_index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _resolve_path(text: str, anchor: Path) -> Path:
    candidate = Path(text)
    if candidate.is_absolute():
        return candidate
    anchored = anchor / candidate
    if anchored.exists():
        return anchored
    if candidate.exists():
        return candidate.resolve()
    return anchored


def parse_experiment_config(path) -> list[ExperimentConfig]:
    """Read an experiment file; returns configs in file order.

    Raises:
        MissingField / UnknownField / BadType: structural problems.
    """
    path = Path(path)
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(loaded, dict) or not loaded:
        raise BadType(f"{path}: expected a mapping of config names to blocks")
    anchor = path.parent
    configs = []
    for name, block in loaded.items():
        if not isinstance(block, dict):
            raise BadType(f"config {name!r}: block must be a mapping")
        for key in block:
            if key not in _CONFIG_ALLOWED:
                raise UnknownField(f"config {name!r}: unknown field {key!r}")
        for key in _CONFIG_REQUIRED:
            if key not in block:
                raise MissingField(f"config {name!r}: missing field {key!r}")
        sequence_set = block["Config"]
        if not isinstance(sequence_set, str):
            raise BadType(f"config {name!r}: Config must be a path string")
        num_runs = block["NumRuns"]
        if isinstance(num_runs, bool) or not isinstance(num_runs, int) or num_runs < 1:
            raise BadType(f"config {name!r}: NumRuns must be a positive integer")
        parameters = block["Parameters"]
        if not isinstance(parameters, dict):
            raise BadType(f"config {name!r}: Parameters must be a mapping")
        for pname, pval in parameters.items():
            if not isinstance(pname, str):
                raise BadType(f"config {name!r}: parameter names must be strings")
            if not isinstance(pval, (str, int, float, bool)):
                raise BadType(
                    f"config {name!r}: parameter {pname!r} has unsupported type"
                    f" {type(pval).__name__}"
                )
        method = block["Method"]
        if not isinstance(method, str):
            raise BadType(f"config {name!r}: Method must be a string")
        ablation = block.get("Ablation")
        if ablation is not None and not isinstance(ablation, str):
            raise BadType(f"config {name!r}: Ablation must be a path string")
        configs.append(
            ExperimentConfig(
                name=str(name),
                sequence_set=_resolve_path(sequence_set, anchor),
                num_runs=num_runs,
                parameters=dict(parameters),
                method=method,
                ablation=None if ablation is None else _resolve_path(ablation, anchor),
            )
        )
    return configs


def parse_sequence_set(path) -> list[tuple[str, str]]:
    """Read a sequence-set file: dataset names mapped to sequence lists."""
    path = Path(path)
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(loaded, dict) or not loaded:
        raise BadType(f"{path}: expected a mapping of datasets to sequence lists")
    pairs: list[tuple[str, str]] = []
    seen = set()
    for dataset, names in loaded.items():
        if not isinstance(dataset, str):
            raise BadType(f"{path}: dataset names must be strings")
        if not isinstance(names, list) or not names:
            raise BadType(f"{path}: dataset {dataset!r} needs a list of sequences")
        for seq in names:
            if not isinstance(seq, str):
                raise BadType(f"{path}: sequence names must be strings")
            if (dataset, seq) in seen:
                raise DuplicateSequence(f"{path}: {dataset}/{seq} listed twice")
            seen.add((dataset, seq))
            pairs.append((dataset, seq))
    return pairs


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def expand_ablation(path) -> dict[int, dict]:
    """Read an ablation table: per-run parameter overrides.

    The first column is the run index the row applies to; the header
    names the varied parameters.  Comma and whitespace separation are
    both accepted (decided by the header line).  Empty cells leave the
    base value untouched.
    """
    path = Path(path)
    lines = [
        line for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise MalformedRow(f"{path}: ablation table is empty")
    comma = "," in lines[0]

    def split(line: str) -> list[str]:
        return [c.strip() for c in line.split(",")] if comma else line.split()

    header = split(lines[0])
    if not header or header[0] != "exp_id":
        raise MalformedRow(f"{path}: header must start with 'exp_id'")
    names = header[1:]
    if not names:
        raise MalformedRow(f"{path}: header names no parameters")
    table: dict[int, dict] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = split(line)
        if len(cells) != len(header):
            raise MalformedRow(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}"
            )
        try:
            run_index = int(cells[0])
        except ValueError:
            raise MalformedRow(f"{path}:{lineno}: run index {cells[0]!r} is not an integer") from None
        if run_index < 0:
            raise MalformedRow(f"{path}:{lineno}: run index must be >= 0")
        if run_index in table:
            raise DuplicateExpId(f"{path}:{lineno}: run index {run_index} listed twice")
        overrides = {
            name: _parse_cell(cell)
            for name, cell in zip(names, cells[1:])
            if cell != ""
        }
        table[run_index] = overrides
    return table


def _mock_settings_template() -> dict:
    text = resources.files("trajbench").joinpath("data/mock_settings.yaml").read_text(
        encoding="utf-8"
    )
    return yaml.safe_load(text)


def builtin_methods() -> dict[str, MethodSpec]:
    """Bundled estimators, keyed by the name used in experiment configs."""
    template = _mock_settings_template()
    mock_exe = ("{python}", "-m", "trajbench", "mock-method")
    variants = {
        "mock": {},
        "mock_precise": {"sigma_pos": 0.004, "sigma_rot": 0.002},
        "mock_noisy": {"sigma_pos": 0.05, "sigma_rot": 0.01, "drift_per_frame": 0.002},
    }
    return {
        name: MethodSpec(
            name=name,
            folder=name.upper(),
            executable=mock_exe,
            default_parameters=dict(overrides),
            settings_template=dict(template),
        )
        for name, overrides in variants.items()
    }


def resolve_executable(method: MethodSpec) -> list[str]:
    argv = [part.replace("{python}", sys.executable) for part in method.executable]
    program = argv[0]
    if os.sep in program:
        if not Path(program).is_file():
            raise ExecutableNotFound(f"method {method.name!r}: no such file {program!r}")
    elif shutil.which(program) is None:
        raise ExecutableNotFound(f"method {method.name!r}: {program!r} not on PATH")
    return argv


def _sampling_args(parameters: dict) -> dict:
    kwargs = {}
    if "segment" in parameters:
        kwargs["segment"] = parameters["segment"]
    if "target_fps" in parameters:
        kwargs["target_fps"] = float(parameters["target_fps"])
    if "max_rgb" in parameters:
        kwargs["max_rgb"] = int(parameters["max_rgb"])
    return kwargs


def execute_run(
    method: MethodSpec,
    layout: SequenceLayout,
    exp_id: str,
    run_index: int,
    parameters: dict,
    output_dir,
    dataset: str,
    sequence: str,
    timeout: float | None = None,
) -> RunRecord:
    """Launch one run and wait for it.

    Writes ``<exp_id>_rgb.csv`` (the sampled frame listing),
    ``<exp_id>_settings.yaml``, and ``<exp_id>.log`` (combined output)
    into ``output_dir``; the method is expected to leave its trajectory
    at ``<exp_id>.txt`` in the same directory.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    argv = resolve_executable(method)

    rows = sample_frames(read_rgb_csv(layout.rgb_csv), **_sampling_args(parameters))
    rgb_csv = output_dir / f"{exp_id}_rgb.csv"
    write_rgb_csv(rows, rgb_csv)

    settings = dict(method.settings_template)
    settings.update(method.default_parameters)
    settings.update(
        {k: v for k, v in parameters.items() if k not in SAMPLING_KEYS}
    )
    base_seed = int(settings.get("seed", 0))
    settings["run_seed"] = derive_run_seed(base_seed, dataset, sequence, run_index)
    settings_yaml = output_dir / f"{exp_id}_settings.yaml"
    settings_yaml.write_text(
        yaml.safe_dump(settings, sort_keys=False), encoding="utf-8"
    )

    argv = argv + [
        "--sequence_path", str(layout.root),
        "--calib_yaml", str(layout.calibration_yaml),
        "--rgb_csv", str(rgb_csv),
        "--exp_id", exp_id,
        "--settings_yaml", str(settings_yaml),
        "--visualization", "0",
        "--exp_folder", str(output_dir),
    ]

    started = time.monotonic()
    timed_out = False
    proc = subprocess.Popen(
        argv,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        start_new_session=True,
    )
    try:
        output, _ = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        output, _ = proc.communicate()
    wall = time.monotonic() - started
    (output_dir / f"{exp_id}.log").write_bytes(output or b"")

    trajectory = output_dir / f"{exp_id}.txt"
    if timed_out:
        status = STATUS_TIMEOUT
    elif proc.returncode != 0:
        status = STATUS_FAILED
    elif not trajectory.is_file():
        status = STATUS_MISSING_OUTPUT
    else:
        status = STATUS_OK
    return RunRecord(
        exp_id=exp_id,
        method=method.name,
        dataset=dataset,
        sequence=sequence,
        run_index=run_index,
        exit_code=proc.returncode if proc.returncode is not None else -1,
        wall_time_s=wall,
        trajectory_path=str(trajectory) if trajectory.is_file() else "",
        status=status,
    )


@dataclass(frozen=True)
class _PlannedRun:
    config: ExperimentConfig
    method: MethodSpec
    exp_id: str
    dataset: str
    sequence: str
    run_index: int
    parameters: dict
    output_dir: Path


def plan_experiment(
    experiment: str,
    configs: list[ExperimentConfig],
    methods: dict[str, MethodSpec],
    root,
) -> list[_PlannedRun]:
    """Assign run ids and directories; validates sequences exist."""
    root = Path(root)
    planned: list[_PlannedRun] = []
    counter = 0
    for config in configs:
        if config.method not in methods:
            raise UnknownMethod(
                f"config {config.name!r}: no method named {config.method!r}"
            )
        method = methods[config.method]
        pairs = parse_sequence_set(config.sequence_set)
        ablation = expand_ablation(config.ablation) if config.ablation else {}
        for dataset, sequence in pairs:
            seq_dir = root / dataset / sequence
            if not (root / dataset).is_dir():
                raise UnknownDataset(
                    f"no dataset folder {dataset!r} under {root} (prepare it first)"
                )
            if not seq_dir.is_dir():
                raise DataError(f"sequence {dataset}/{sequence} is not prepared")
            out = (
                root / EXPERIMENTS_DIRNAME / experiment
                / method.name / dataset / sequence
            )
            for run_index in range(config.num_runs):
                parameters = dict(config.parameters)
                parameters.update(ablation.get(run_index, {}))
                planned.append(
                    _PlannedRun(
                        config=config,
                        method=method,
                        exp_id=format_exp_id(counter),
                        dataset=dataset,
                        sequence=sequence,
                        run_index=run_index,
                        parameters=parameters,
                        output_dir=out,
                    )
                )
                counter += 1
    return planned


def run_experiment_file(
    path,
    root,
    methods: dict[str, MethodSpec] | None = None,
    workers: int = 1,
    timeout: float | None = None,
) -> list[RunRecord]:
    """Execute every run of every config in one experiment file.

    The experiment is named after the file stem; run ids are a single
    counter across all of its configs.  Results land under
    ``<root>/EXPERIMENTS/<experiment>/`` along with ``runs.csv``.
    """
    path = Path(path)
    root = Path(root)
    experiment = path.stem
    if methods is None:
        methods = builtin_methods()
    configs = parse_experiment_config(path)
    planned = plan_experiment(experiment, configs, methods, root)

    def launch(run: _PlannedRun) -> RunRecord:
        layout = SequenceLayout(root / run.dataset / run.sequence)
        return execute_run(
            run.method,
            layout,
            run.exp_id,
            run.run_index,
            run.parameters,
            run.output_dir,
            run.dataset,
            run.sequence,
            timeout=timeout,
        )

    if workers <= 1:
        records = [launch(run) for run in planned]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(launch, planned))
    records.sort(key=lambda r: r.exp_id)
    write_runs_csv(records, root / EXPERIMENTS_DIRNAME / experiment / "runs.csv", root)
    return records


def write_runs_csv(records: list[RunRecord], path, root) -> None:
    """Trajectory paths are stored relative to ``root``, POSIX style."""
    path = Path(path)
    root = Path(root)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RUNS_CSV_HEADER.split(","))
        for rec in records:
            rel = ""
            if rec.trajectory_path:
                rel = Path(rec.trajectory_path).relative_to(root).as_posix()
            writer.writerow(
                [
                    rec.exp_id,
                    rec.method,
                    rec.dataset,
                    rec.sequence,
                    rec.run_index,
                    rec.exit_code,
                    f"{rec.wall_time_s:.3f}",
                    rel,
                    rec.status,
                ]
            )


def read_runs_csv(path, root) -> list[RunRecord]:
    path = Path(path)
    root = Path(root)
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != RUNS_CSV_HEADER.split(","):
            raise DataError(f"{path}: unexpected header {header!r}")
        records = []
        for row in reader:
            if len(row) != len(RUNS_CSV_HEADER.split(",")):
                raise DataError(f"{path}: malformed row {row!r}")
            records.append(
                RunRecord(
                    exp_id=row[0],
                    method=row[1],
                    dataset=row[2],
                    sequence=row[3],
                    run_index=int(row[4]),
                    exit_code=int(row[5]),
                    wall_time_s=float(row[6]),
                    trajectory_path=str(root / row[7]) if row[7] else "",
                    status=row[8],
                )
            )
    return records
