"""Bundled stand-in estimator.

Speaks the same command-line contract as a real external method, but
instead of tracking anything it perturbs the sequence ground truth with
a configurable noise model (per-frame jitter, random-walk drift, global
scale, rotation wobble).  That makes every harness path exercisable
without building a SLAM system, with full control over how good the
"estimate" is.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .dataset import SequenceLayout, read_groundtruth_csv, read_rgb_csv
from .errors import ConfigurationError, DataError
from .trajectory import (
    Trajectory,
    matrix_to_quaternion,
    quaternion_multiply,
    write_trajectory_file,
)


class MissingGroundTruth(DataError):
    pass


@dataclass(frozen=True)
class MockSettings:
    """Noise model knobs; zero everything means the output is the truth."""

    sigma_pos: float = 0.0
    sigma_rot: float = 0.0
    scale: float = 1.0
    drift_per_frame: float = 0.0
    keyframe_stride: int = 1
    fail_after_frame: int = -1
    gt_max_difference: float = 0.02
    seed: int = 0
    run_seed: int | None = None
    verbose: int = 0

    def __post_init__(self):
        if self.sigma_pos < 0 or self.sigma_rot < 0 or self.drift_per_frame < 0:
            raise ConfigurationError("noise magnitudes must be >= 0")
        if self.scale <= 0:
            raise ConfigurationError("scale must be > 0")
        if self.keyframe_stride < 1:
            raise ConfigurationError("keyframe_stride must be >= 1")
        if self.gt_max_difference <= 0:
            raise ConfigurationError("gt_max_difference must be > 0")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "MockSettings":
        """Build from a settings mapping, ignoring keys we do not model."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, value in mapping.items():
            spec = fields.get(name)
            if spec is None or value is None:
                continue
            if spec.type in ("int", int):
                kwargs[name] = int(value)
            elif spec.type in ("float", float):
                kwargs[name] = float(value)
            else:
                kwargs[name] = int(value)  # run_seed
        return cls(**kwargs)


def _fallback_seed(seed: int, exp_id: str) -> int:
    key = f"{seed}:{exp_id}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _axis_angle_matrix(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.eye(3)
    axis = w / angle
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _nearest_ground_truth(frame_stamps, gt_stamps, max_difference):
    """Indices pairing each frame with its closest pose, or -1 when none
    is within ``max_difference``."""
    frame_stamps = np.asarray(frame_stamps, dtype=float)
    gt_stamps = np.asarray(gt_stamps, dtype=float)
    out = np.full(len(frame_stamps), -1, dtype=int)
    if len(gt_stamps) == 0:
        return out
    right = np.searchsorted(gt_stamps, frame_stamps)
    for i, t in enumerate(frame_stamps):
        best, best_d = -1, max_difference
        for j in (right[i] - 1, right[i]):
            if 0 <= j < len(gt_stamps):
                d = abs(gt_stamps[j] - t)
                if d <= best_d:
                    best, best_d = j, d
        out[i] = best
    return out


def synthesize_trajectory(
    ground_truth: Trajectory,
    frame_stamps,
    settings: MockSettings,
    exp_id: str = "00000",
) -> Trajectory:
    """Produce the mock estimate for the given frame timestamps.

    Noise is drawn once per frame that has ground truth, in timestamp
    order, so the keyframe stride only filters which poses are emitted
    and never changes the draws for the ones that are.
    """
    seed = settings.run_seed
    if seed is None:
        seed = _fallback_seed(settings.seed, exp_id)
    rng = np.random.default_rng(seed)
    matches = _nearest_ground_truth(
        frame_stamps, ground_truth.timestamps, settings.gt_max_difference
    )
    stamps, positions, quaternions = [], [], []
    drift = np.zeros(3)
    kept = 0
    for frame_pos, gt_index in enumerate(matches):
        if gt_index < 0:
            continue
        if 0 <= settings.fail_after_frame <= kept:
            break
        jitter = rng.normal(0.0, settings.sigma_pos, 3) if settings.sigma_pos else np.zeros(3)
        drift = drift + (
            rng.normal(0.0, settings.drift_per_frame, 3)
            if settings.drift_per_frame
            else 0.0
        )
        wobble = rng.normal(0.0, settings.sigma_rot, 3) if settings.sigma_rot else None
        if kept % settings.keyframe_stride == 0:
            position = settings.scale * (
                ground_truth.positions[gt_index] + jitter + drift
            )
            quaternion = ground_truth.quaternions[gt_index]
            if wobble is not None:
                perturb = matrix_to_quaternion(_axis_angle_matrix(wobble))
                quaternion = quaternion_multiply(perturb, quaternion)
            stamps.append(float(frame_stamps[frame_pos]))
            positions.append(position)
            quaternions.append(quaternion)
        kept += 1
    return Trajectory(stamps, positions, quaternions)


def add_arguments(parser) -> None:
    parser.add_argument("--sequence_path", required=True)
    parser.add_argument("--calib_yaml", required=True)
    parser.add_argument("--rgb_csv", required=True)
    parser.add_argument("--exp_id", required=True)
    parser.add_argument("--settings_yaml", default=None)
    parser.add_argument("--visualization", type=int, default=0)
    parser.add_argument("--exp_folder", required=True)
    # Direct overrides; anything given here beats the settings file.
    parser.add_argument("--sigma_pos", type=float, default=None)
    parser.add_argument("--sigma_rot", type=float, default=None)
    parser.add_argument("--scale", type=float, default=None)
    parser.add_argument("--drift_per_frame", type=float, default=None)
    parser.add_argument("--keyframe_stride", type=int, default=None)
    parser.add_argument("--fail_after_frame", type=int, default=None)
    parser.add_argument("--gt_max_difference", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--run_seed", type=int, default=None)
    parser.add_argument("--verbose", type=int, default=None)


_OVERRIDE_NAMES = (
    "sigma_pos", "sigma_rot", "scale", "drift_per_frame", "keyframe_stride",
    "fail_after_frame", "gt_max_difference", "seed", "run_seed", "verbose",
)


def run(args) -> int:
    mapping: dict = {}
    if args.settings_yaml:
        loaded = yaml.safe_load(Path(args.settings_yaml).read_text(encoding="utf-8"))
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigurationError(
                    f"{args.settings_yaml}: settings must be a mapping"
                )
            mapping.update(loaded)
    for name in _OVERRIDE_NAMES:
        value = getattr(args, name)
        if value is not None:
            mapping[name] = value
    settings = MockSettings.from_mapping(mapping)

    layout = SequenceLayout(args.sequence_path)
    if not layout.groundtruth_csv.is_file():
        raise MissingGroundTruth(f"{layout.groundtruth_csv} does not exist")
    ground_truth = read_groundtruth_csv(layout.groundtruth_csv)
    frame_stamps = [ts for ts, _ in read_rgb_csv(args.rgb_csv)]

    estimate = synthesize_trajectory(ground_truth, frame_stamps, settings, args.exp_id)
    out = Path(args.exp_folder) / f"{args.exp_id}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_file(estimate, out)
    if settings.verbose:
        print(
            f"mock method: {len(estimate)} poses from {len(frame_stamps)} frames"
            f" -> {out}"
        )
    return 0
