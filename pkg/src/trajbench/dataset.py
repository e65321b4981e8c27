"""Standardized sequence layout plus camera calibration and undistortion.

A prepared sequence directory looks like::

    <sequence>/
        rgb/rgb_0000.png ...
        rgb.csv             # header: ts,path
        groundtruth.csv     # trajectory rows, '#'-prefixed header
        calibration.yaml    # flat OpenCV-style document

Images conform to a plain pinhole model after preparation; the original
distortion coefficients survive only as audit comments in the calibration
file.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError
from .trajectory import Trajectory, parse_trajectory

RGB_CSV_HEADER = "ts,path"
GROUNDTRUTH_HEADER = "#ts,tx,ty,tz,qx,qy,qz,qw"
CALIBRATION_DIRECTIVE = "%YAML:1.0"
CAMERA_MODEL = "PINHOLE"

_RGB_NAME_RE = re.compile(r"^rgb_(\d{4,})\.(png|jpg|jpeg)$")

UNDISTORT_MAX_ITERATIONS = 50
UNDISTORT_TOLERANCE = 1e-10

# Source coordinates this close to an integer are snapped onto it so that a
# zero-coefficient remap reproduces the input byte for byte.
_REMAP_SNAP = 1e-9


class CalibrationFormatError(DataError):
    pass


class NoConvergence(DataError):
    pass


class EmptySelection(DataError):
    pass


class ValidationFailed(DataError):
    def __init__(self, report: "ValidationReport"):
        super().__init__("sequence validation failed:\n" + report.describe())
        self.report = report


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole intrinsics with radial-tangential distortion coefficients."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    fps: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy, self.fps,
                  self.k1, self.k2, self.p1, self.p2, self.k3)
        if not all(math.isfinite(v) for v in values):
            raise CalibrationFormatError("calibration has non-finite values")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise CalibrationFormatError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationFormatError("image size must be positive")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise CalibrationFormatError("principal point must lie inside the image")
        if self.fps <= 0.0:
            raise CalibrationFormatError("fps must be positive")

    @property
    def distortion(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.p1, self.p2, self.k3)

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.distortion)

    def without_distortion(self) -> "CameraCalibration":
        return replace(self, k1=0.0, k2=0.0, p1=0.0, p2=0.0, k3=0.0)


_CALIB_KEYS = (
    ("Camera.fx", "fx", float),
    ("Camera.fy", "fy", float),
    ("Camera.cx", "cx", float),
    ("Camera.cy", "cy", float),
    ("Camera.k1", "k1", float),
    ("Camera.k2", "k2", float),
    ("Camera.p1", "p1", float),
    ("Camera.p2", "p2", float),
    ("Camera.k3", "k3", float),
    ("Camera.w", "width", int),
    ("Camera.h", "height", int),
    ("Camera.fps", "fps", float),
)


def write_calibration_yaml(
    calibration: CameraCalibration, path, audit_comments: Iterable[str] = ()
) -> None:
    """Write the flat calibration document; comments record provenance."""
    lines = [CALIBRATION_DIRECTIVE]
    lines.extend(f"# {comment}" for comment in audit_comments)
    lines.append(f'Camera.model: "{CAMERA_MODEL}"')
    values = {
        "fx": calibration.fx, "fy": calibration.fy,
        "cx": calibration.cx, "cy": calibration.cy,
        "k1": calibration.k1, "k2": calibration.k2,
        "p1": calibration.p1, "p2": calibration.p2, "k3": calibration.k3,
        "fps": calibration.fps,
    }
    for yaml_key, attr, kind in _CALIB_KEYS:
        if kind is int:
            lines.append(f"{yaml_key}: {getattr(calibration, attr)}")
        else:
            lines.append(f"{yaml_key}: {values[attr]!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration_yaml(path) -> CameraCalibration:
    """Parse the flat calibration document written by this package.

    The format intentionally mirrors OpenCV's FileStorage YAML flavor,
    whose ``%YAML:1.0`` directive general-purpose YAML parsers reject, so
    this is a small dedicated reader.
    """
    path = Path(path)
    raw: dict[str, str] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CALIBRATION_DIRECTIVE:
        raise CalibrationFormatError(f"{path}: missing {CALIBRATION_DIRECTIVE} directive")
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise CalibrationFormatError(f"{path}: malformed line {line!r}")
        raw[key.strip()] = value.strip()
    model = raw.get("Camera.model", "").strip('"')
    if model != CAMERA_MODEL:
        raise CalibrationFormatError(f"{path}: unsupported camera model {model!r}")
    kwargs = {}
    for yaml_key, attr, kind in _CALIB_KEYS:
        if yaml_key not in raw:
            raise CalibrationFormatError(f"{path}: missing key {yaml_key}")
        try:
            kwargs[attr] = kind(raw[yaml_key])
        except ValueError as exc:
            raise CalibrationFormatError(f"{path}: bad value for {yaml_key}") from exc
    return CameraCalibration(**kwargs)


@dataclass(frozen=True)
class SequenceLayout:
    """Paths of one standardized sequence."""

    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def rgb_dir(self) -> Path:
        return self.root / "rgb"

    @property
    def rgb_csv(self) -> Path:
        return self.root / "rgb.csv"

    @property
    def groundtruth_csv(self) -> Path:
        return self.root / "groundtruth.csv"

    @property
    def calibration_yaml(self) -> Path:
        return self.root / "calibration.yaml"

    @property
    def has_groundtruth(self) -> bool:
        return self.groundtruth_csv.is_file()


def rgb_image_name(index: int, total: int, extension: str = "png") -> str:
    """Zero-padded frame name; width grows past 4 digits for long sequences."""
    digits = max(4, len(str(max(total - 1, 0))))
    return f"rgb_{index:0{digits}d}.{extension}"


def write_rgb_csv(rows: list[tuple[float, str]], path) -> None:
    lines = [RGB_CSV_HEADER]
    lines.extend(f"{ts:.6f},{rel}" for ts, rel in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_rgb_csv(path) -> list[tuple[float, str]]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != RGB_CSV_HEADER:
        raise DataError(f"{path}: expected header {RGB_CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        ts_text, sep, rel = line.partition(",")
        if not sep or not rel:
            raise DataError(f"{path}:{lineno}: malformed row {line!r}")
        try:
            ts = float(ts_text)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad timestamp {ts_text!r}") from exc
        rows.append((ts, rel))
    return rows


def write_groundtruth_csv(trajectory: Trajectory, path) -> None:
    from .trajectory import serialize_trajectory

    body = serialize_trajectory(trajectory, separator=",")
    Path(path).write_text(GROUNDTRUTH_HEADER + "\n" + body, encoding="utf-8")


def read_groundtruth_csv(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    sequence: str
    checks: tuple[ValidationCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def describe(self) -> str:
        lines = []
        for check in self.checks:
            status = "PASS" if check.passed else "FAIL"
            suffix = f" ({check.detail})" if check.detail else ""
            lines.append(f"  {status} {check.name}{suffix}")
        return "\n".join(lines)


def validate_sequence(root) -> ValidationReport:
    """Check one sequence directory against the layout contract.

    Never raises; every finding lands in the returned report.
    """
    root = Path(root)
    layout = SequenceLayout(root)
    checks: list[ValidationCheck] = []

    def check(name: str, passed: bool, detail: str = "") -> bool:
        checks.append(ValidationCheck(name, passed, detail))
        return passed

    if not check("root exists", root.is_dir(), str(root)):
        return ValidationReport(root.name, tuple(checks))
    check("rgb directory exists", layout.rgb_dir.is_dir())

    rows: list[tuple[float, str]] = []
    if check("rgb.csv exists", layout.rgb_csv.is_file()):
        try:
            rows = read_rgb_csv(layout.rgb_csv)
            check("rgb.csv parses", True, f"{len(rows)} rows")
        except DataError as exc:
            check("rgb.csv parses", False, str(exc))
    if rows:
        stamps = [ts for ts, _ in rows]
        check(
            "rgb timestamps strictly increase",
            all(b > a for a, b in zip(stamps, stamps[1:])),
        )
        missing = [rel for _, rel in rows if not (root / rel).is_file()]
        check(
            "all listed images exist",
            not missing,
            f"{len(missing)} missing, first: {missing[0]}" if missing else "",
        )
        bad_names: list[str] = []
        widths: set[int] = set()
        for index, (_, rel) in enumerate(rows):
            name = Path(rel).name
            match = _RGB_NAME_RE.match(name)
            if not match or int(match.group(1)) != index:
                bad_names.append(name)
            elif match:
                widths.add(len(match.group(1)))
        check(
            "image names are zero-padded ordinals",
            not bad_names and len(widths) <= 1,
            f"first offender: {bad_names[0]}" if bad_names else "",
        )

    if check("calibration.yaml exists", layout.calibration_yaml.is_file()):
        try:
            calibration = read_calibration_yaml(layout.calibration_yaml)
            check("calibration parses", True)
            check(
                "images are undistorted",
                not calibration.has_distortion,
                "nonzero distortion coefficients" if calibration.has_distortion else "",
            )
        except DataError as exc:
            check("calibration parses", False, str(exc))

    if layout.has_groundtruth:
        try:
            gt = read_groundtruth_csv(layout.groundtruth_csv)
            check("groundtruth parses", True, f"{len(gt)} poses")
        except DataError as exc:
            check("groundtruth parses", False, str(exc))

    return ValidationReport(root.name, tuple(checks))


def distort_point(x_normalized, y_normalized, calibration: CameraCalibration):
    """Apply radial-tangential distortion in normalized image coordinates.

    Accepts scalars or arrays and broadcasts.
    """
    xn = np.asarray(x_normalized, dtype=float)
    yn = np.asarray(y_normalized, dtype=float)
    k1, k2, p1, p2, k3 = calibration.distortion
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd


def undistort_point(
    x_distorted,
    y_distorted,
    calibration: CameraCalibration,
    max_iterations: int = UNDISTORT_MAX_ITERATIONS,
    tolerance: float = UNDISTORT_TOLERANCE,
):
    """Invert the distortion model by fixed-point iteration.

    Starts from the distorted coordinates and repeats
    ``x <- (x_d - tangential(x)) / radial(x)`` until the update falls
    below ``tolerance``; valid within the model's invertible region.

    Raises:
        NoConvergence: the iteration did not settle in ``max_iterations``.
    """
    xd = np.asarray(x_distorted, dtype=float)
    yd = np.asarray(y_distorted, dtype=float)
    scalar = xd.shape == ()
    if xd.size == 0:
        return xd.copy(), yd.copy()
    k1, k2, p1, p2, k3 = calibration.distortion
    x = xd.copy()
    y = yd.copy()
    worst = math.inf
    for _ in range(max_iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        tang_x = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        tang_y = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - tang_x) / radial
        y_new = (yd - tang_y) / radial
        worst = float(np.max(np.maximum(np.abs(x_new - x), np.abs(y_new - y))))
        x, y = x_new, y_new
        if worst < tolerance:
            return (float(x), float(y)) if scalar else (x, y)
    raise NoConvergence(
        f"undistortion did not converge in {max_iterations} iterations "
        f"(max update {worst:.3e})"
    )


class Undistorter:
    """Remaps images onto the pinhole model of one calibration.

    The source-coordinate table is computed once at construction and
    reused for every frame.
    """

    def __init__(self, calibration: CameraCalibration):
        self.calibration = calibration
        self.output_calibration = calibration.without_distortion()
        h, w = calibration.height, calibration.width
        u = np.arange(w, dtype=float)
        v = np.arange(h, dtype=float)
        grid_u, grid_v = np.meshgrid(u, v)
        xn = (grid_u - calibration.cx) / calibration.fx
        yn = (grid_v - calibration.cy) / calibration.fy
        xd, yd = distort_point(xn, yn, calibration)
        map_x = calibration.fx * xd + calibration.cx
        map_y = calibration.fy * yd + calibration.cy
        for table in (map_x, map_y):
            nearest = np.rint(table)
            snap = np.abs(table - nearest) < _REMAP_SNAP
            table[snap] = nearest[snap]
        self._map_x = map_x
        self._map_y = map_y

    def remap(self, image: np.ndarray) -> np.ndarray:
        """Bilinear resample; source locations outside the image give black."""
        img = np.asarray(image)
        h, w = self.calibration.height, self.calibration.width
        if img.shape[0] != h or img.shape[1] != w:
            raise ValueError(
                f"image is {img.shape[1]}x{img.shape[0]}, calibration says {w}x{h}"
            )
        xs, ys = self._map_x, self._map_y
        inside = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
        x0 = np.floor(xs).astype(np.int64)
        y0 = np.floor(ys).astype(np.int64)
        wx = xs - x0
        wy = ys - y0
        acc = np.zeros(img.shape, dtype=float)
        weights = (
            (y0, x0, (1.0 - wy) * (1.0 - wx)),
            (y0, x0 + 1, (1.0 - wy) * wx),
            (y0 + 1, x0, wy * (1.0 - wx)),
            (y0 + 1, x0 + 1, wy * wx),
        )
        for ty, tx, weight in weights:
            tap_ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            ty_c = np.clip(ty, 0, h - 1)
            tx_c = np.clip(tx, 0, w - 1)
            weight = np.where(tap_ok, weight, 0.0)
            if img.ndim == 3:
                weight = weight[..., None]
            acc += weight * img[ty_c, tx_c]
        mask = inside if img.ndim == 2 else inside[..., None]
        acc = np.where(mask, acc, 0.0)
        if np.issubdtype(img.dtype, np.integer):
            info = np.iinfo(img.dtype)
            return np.clip(np.rint(acc), info.min, info.max).astype(img.dtype)
        return acc.astype(img.dtype)


def undistort_image(
    image: np.ndarray, calibration: CameraCalibration
) -> tuple[np.ndarray, CameraCalibration]:
    """One-shot remap; use Undistorter directly for whole sequences."""
    undistorter = Undistorter(calibration)
    return undistorter.remap(image), undistorter.output_calibration


def parse_segment(segment) -> tuple[float, float]:
    """Accept (start, end) pairs or a "start:end" string."""
    if isinstance(segment, str):
        start_text, sep, end_text = segment.partition(":")
        if not sep:
            raise ValueError(f"segment must look like 'start:end', got {segment!r}")
        start, end = float(start_text), float(end_text)
    else:
        start, end = (float(v) for v in segment)
    if not (math.isfinite(start) and math.isfinite(end)) or end < start:
        raise ValueError(f"bad segment bounds ({start}, {end})")
    return start, end


def sample_frames(
    rows: list[tuple[float, str]],
    target_fps: float | None = None,
    segment=None,
    max_rgb: int | None = None,
) -> list[tuple[float, str]]:
    """Select the frames a run will see.

    Applies, in order: the time segment filter, rate limiting to
    ``target_fps`` (a frame is kept when at least ``1/target_fps - 1e-6``
    seconds passed since the last kept one), and truncation to the first
    ``max_rgb`` rows.

    Raises:
        EmptySelection: nothing survives the filters.
    """
    selected = list(rows)
    if segment is not None:
        start, end = parse_segment(segment)
        selected = [(ts, rel) for ts, rel in selected if start <= ts <= end]
    if target_fps is not None:
        if target_fps <= 0.0:
            raise ValueError("target_fps must be positive")
        min_gap = 1.0 / target_fps - 1e-6
        kept: list[tuple[float, str]] = []
        for ts, rel in selected:
            if not kept or ts >= kept[-1][0] + min_gap:
                kept.append((ts, rel))
        selected = kept
    if max_rgb is not None:
        if max_rgb < 0:
            raise ValueError("max_rgb must be nonnegative")
        selected = selected[:max_rgb]
    if not selected:
        raise EmptySelection("no frames survive the selection filters")
    return selected
