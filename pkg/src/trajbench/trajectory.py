"""Pose and trajectory types plus the plain-text trajectory format.

Trajectory files carry one record per line::

    ts tx ty tz qx qy qz qw

Comment lines start with ``#`` and blank lines are ignored.  Fields are
separated either by runs of whitespace or by commas; a file must stick to
one convention throughout.  Quaternions are scalar-last, matching the
column order above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import DataError

#: Quaternions with a norm below this are rejected; anything larger is
#: renormalized (ground-truth files are often rounded to a few decimals).
QUATERNION_MIN_NORM = 1e-6

_NUM_FIELDS = 8
_FIELD_FMT = "{:.9f}"


class TrajectoryFormatError(DataError):
    """Parse or construction failure; ``line`` is 1-based when line-bound."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class WrongFieldCount(TrajectoryFormatError):
    pass


class NonFinite(TrajectoryFormatError):
    pass


class DegenerateQuaternion(TrajectoryFormatError):
    def __init__(self, norm: float, line: int | None = None):
        super().__init__(
            f"quaternion norm {norm:.3e} is below {QUATERNION_MIN_NORM:g}", line
        )
        self.norm = norm


class NonMonotonicTimestamp(TrajectoryFormatError):
    pass


class NegativeTimestamp(TrajectoryFormatError):
    pass


class MixedSeparators(TrajectoryFormatError):
    pass


def quaternion_to_matrix(quaternion: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (x, y, z, w).

    Every term is quadratic in the components, so q and -q produce the
    same matrix bit for bit.
    """
    x, y, z, w = (float(v) for v in np.asarray(quaternion, dtype=float).reshape(4))
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(matrix: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) with w >= 0 for a proper rotation matrix."""
    m = np.asarray(matrix, dtype=float).reshape(3, 3)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
        )
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product for (x, y, z, w) quaternions; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid camera pose: translation in meters, unit quaternion (x, y, z, w)."""

    translation: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        q = np.asarray(self.quaternion, dtype=float).reshape(4).copy()
        if not (np.isfinite(t).all() and np.isfinite(q).all()):
            raise NonFinite("pose has non-finite components")
        norm = float(np.linalg.norm(q))
        if norm < QUATERNION_MIN_NORM:
            raise DegenerateQuaternion(norm)
        q /= norm
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "quaternion", q)

    def rotation_matrix(self) -> np.ndarray:
        return quaternion_to_matrix(self.quaternion)


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform ``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        scale = float(self.scale)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3).copy()
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        if not (math.isfinite(scale) and scale > 0.0):
            raise ValueError(f"scale must be finite and positive, got {scale!r}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform has non-finite components")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(float(np.linalg.det(r)) - 1.0) > 1e-9:
            raise ValueError("rotation is not proper (det != +1)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def compose(self, inner: "Sim3Transform") -> "Sim3Transform":
        """Transform equal to applying ``inner`` first, then this one."""
        return Sim3Transform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * (self.rotation @ inner.translation) + self.translation,
        )


class Trajectory:
    """Strictly time-ordered camera poses.

    Data is held column-wise (timestamps, positions, quaternions) so that
    evaluation code can operate on whole arrays; iteration yields
    ``(timestamp, PoseSE3)`` pairs for element-wise use.
    """

    __slots__ = ("timestamps", "positions", "quaternions")

    def __init__(
        self,
        timestamps: Iterable[float],
        positions: Iterable[Iterable[float]],
        quaternions: Iterable[Iterable[float]],
    ):
        ts = np.asarray(timestamps, dtype=float).reshape(-1).copy()
        pos = np.asarray(positions, dtype=float).reshape(-1, 3).copy()
        quat = np.asarray(quaternions, dtype=float).reshape(-1, 4).copy()
        if not (len(ts) == len(pos) == len(quat)):
            raise ValueError("timestamps, positions and quaternions disagree in length")
        if ts.size:
            if not (np.isfinite(ts).all() and np.isfinite(pos).all() and np.isfinite(quat).all()):
                raise NonFinite("trajectory has non-finite values")
            if ts[0] < 0.0:
                raise NegativeTimestamp(f"timestamp {ts[0]!r} is negative")
            if ts.size > 1 and not (np.diff(ts) > 0.0).all():
                raise NonMonotonicTimestamp("timestamps must be strictly increasing")
            norms = np.linalg.norm(quat, axis=1)
            smallest = float(norms.min())
            if smallest < QUATERNION_MIN_NORM:
                raise DegenerateQuaternion(smallest)
            quat /= norms[:, None]
        for arr in (ts, pos, quat):
            arr.flags.writeable = False
        self.timestamps = ts
        self.positions = pos
        self.quaternions = quat

    @classmethod
    def from_poses(cls, entries: Iterable[tuple[float, PoseSE3]]) -> "Trajectory":
        entries = list(entries)
        return cls(
            [ts for ts, _ in entries],
            [pose.translation for _, pose in entries],
            [pose.quaternion for _, pose in entries],
        )

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[tuple[float, PoseSE3]]:
        for i in range(len(self)):
            yield float(self.timestamps[i]), self.pose(i)

    def pose(self, index: int) -> PoseSE3:
        return PoseSE3(self.positions[index], self.quaternions[index])


def parse_trajectory(source: str | IO[str]) -> Trajectory:
    """Parse the eight-column trajectory format.

    Args:
        source: Text or a readable text stream.

    Returns:
        A Trajectory; possibly empty when the input holds only comments.

    Raises:
        WrongFieldCount: a record does not have exactly eight fields.
        NonFinite: a field is not a finite number.
        DegenerateQuaternion: quaternion norm below the renormalization floor.
        NonMonotonicTimestamp: timestamps do not strictly increase.
        NegativeTimestamp: a timestamp is negative.
        MixedSeparators: the file mixes comma and whitespace separation.
    """
    text = source if isinstance(source, str) else source.read()
    stamps: list[float] = []
    positions: list[list[float]] = []
    quaternions: list[list[float]] = []
    separator: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind = "," if "," in line else " "
        if separator is None:
            separator = kind
        elif kind != separator:
            raise MixedSeparators(
                "file mixes comma- and whitespace-separated records", lineno
            )
        if kind == ",":
            fields = [f.strip() for f in line.split(",")]
            if any(" " in f or "\t" in f for f in fields):
                raise MixedSeparators(
                    "record mixes comma and whitespace separation", lineno
                )
        else:
            fields = line.split()
        if len(fields) != _NUM_FIELDS:
            raise WrongFieldCount(f"expected 8 fields, found {len(fields)}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise NonFinite("field is not a number", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise NonFinite("field is not finite", lineno)
        ts = values[0]
        if ts < 0.0:
            raise NegativeTimestamp(f"timestamp {ts!r} is negative", lineno)
        if stamps and ts <= stamps[-1]:
            raise NonMonotonicTimestamp(
                f"timestamp {ts!r} does not increase past {stamps[-1]!r}", lineno
            )
        qnorm = math.sqrt(sum(v * v for v in values[4:8]))
        if qnorm < QUATERNION_MIN_NORM:
            raise DegenerateQuaternion(qnorm, lineno)
        stamps.append(ts)
        positions.append(values[1:4])
        quaternions.append(values[4:8])
    return Trajectory(stamps, positions, quaternions)


def read_trajectory_file(path) -> Trajectory:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_trajectory(handle)


def serialize_trajectory(trajectory: Trajectory, separator: str = " ") -> str:
    """Render a trajectory with nine fractional digits per field.

    The output reparses to the input within 1e-9 per field; ``separator``
    is a single space or a comma.
    """
    if separator not in (" ", ","):
        raise ValueError(f"separator must be ' ' or ',', got {separator!r}")
    lines = []
    for i in range(len(trajectory)):
        fields = (
            trajectory.timestamps[i],
            *trajectory.positions[i],
            *trajectory.quaternions[i],
        )
        lines.append(separator.join(_FIELD_FMT.format(v) for v in fields))
    return "\n".join(lines) + ("\n" if lines else "")


def write_trajectory_file(trajectory: Trajectory, path, separator: str = " ") -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(serialize_trajectory(trajectory, separator))


def apply_sim3(transform: Sim3Transform, trajectory: Trajectory) -> Trajectory:
    """Apply a similarity transform to every pose; timestamps are untouched."""
    positions = transform.apply(trajectory.positions)
    rot_quat = matrix_to_quaternion(transform.rotation)
    quaternions = quaternion_multiply(rot_quat, trajectory.quaternions)
    return Trajectory(trajectory.timestamps, positions, quaternions)
