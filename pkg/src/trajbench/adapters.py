"""Dataset adapters: turn raw upstream sequences into the standard layout.

Every adapter runs the same five steps (fetch, image folder, calibration,
frame listing, ground truth) inside a staging directory; the finished
sequence becomes visible through a single atomic rename, so interrupted
preparations never leave a half-built sequence at its final path.
"""

from __future__ import annotations

import abc
import hashlib
import http.client
import math
import os
import shutil
import tarfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    CameraCalibration,
    SequenceLayout,
    Undistorter,
    ValidationFailed,
    rgb_image_name,
    validate_sequence,
    write_calibration_yaml,
    write_groundtruth_csv,
    write_rgb_csv,
)
from .errors import ConfigurationError, DataError
from .trajectory import Trajectory, matrix_to_quaternion, parse_trajectory

CHECKSUM_MANIFEST = "checksums.txt"
_DOWNLOAD_CHUNK = 1 << 16


class DownloadFailed(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class UnknownSequence(ConfigurationError):
    pass


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        while chunk := handle.read(_DOWNLOAD_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def read_checksum_manifest(path) -> dict[str, str]:
    """Parse ``<hex digest>  <filename>`` lines; blanks and '#' are skipped."""
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        digest, _, name = line.partition(" ")
        entries[name.strip()] = digest.strip().lower()
    return entries


def download_file(url: str, destination: Path, resume: bool = True) -> Path:
    """Fetch ``url`` to ``destination``, resuming a partial ``.part`` file.

    Plain HTTP(S) with Range resume; ``file://`` URLs are copied whole.
    An existing destination is trusted and left untouched.
    """
    destination = Path(destination)
    if destination.exists():
        return destination
    destination.parent.mkdir(parents=True, exist_ok=True)
    part = destination.with_suffix(destination.suffix + ".part")
    offset = part.stat().st_size if (resume and part.exists()) else 0
    request = urllib.request.Request(url)
    if offset and url.startswith(("http://", "https://")):
        request.add_header("Range", f"bytes={offset}-")
    else:
        offset = 0
    try:
        with urllib.request.urlopen(request) as response:
            status = getattr(response, "status", 200)
            mode = "ab" if (offset and status == 206) else "wb"
            declared = response.headers.get("Content-Length")
            expected = int(declared) if declared is not None else None
            received = 0
            with open(part, mode) as sink:
                while chunk := response.read(_DOWNLOAD_CHUNK):
                    sink.write(chunk)
                    received += len(chunk)
            # http.client returns short reads silently when a keep-alive
            # peer closes early; an undersized body must not be accepted
            if expected is not None and received != expected:
                raise DownloadFailed(
                    f"{url}: connection closed after {received} of {expected} bytes"
                )
    except urllib.error.HTTPError as exc:
        if exc.code == 416 and part.exists() and part.stat().st_size > 0:
            # Range ran past the end: the previous attempt already finished.
            pass
        else:
            raise DownloadFailed(f"{url}: HTTP {exc.code}") from exc
    except (urllib.error.URLError, http.client.HTTPException, OSError) as exc:
        # A truncated body leaves .part in place for the next attempt.
        raise DownloadFailed(f"{url}: {exc}") from exc
    os.replace(part, destination)
    return destination


def _safe_extract_tar(archive: Path, destination: Path) -> None:
    try:
        with tarfile.open(archive, "r:*") as tar:
            try:
                tar.extractall(destination, filter="data")
            except TypeError:
                for member in tar.getmembers():
                    name = Path(member.name)
                    if name.is_absolute() or ".." in name.parts:
                        raise DownloadFailed(f"{archive}: unsafe member {member.name!r}")
                tar.extractall(destination)
    except (tarfile.TarError, EOFError, OSError) as exc:
        raise DownloadFailed(f"{archive}: archive unreadable ({exc})") from exc


@dataclass(frozen=True)
class PrepareDirs:
    """Working directories handed to adapter steps."""

    sequence_dir: Path
    downloads_dir: Path
    scratch_dir: Path


class DatasetAdapter(abc.ABC):
    """One upstream dataset; knows how to build each of its sequences."""

    dataset_name: str

    @abc.abstractmethod
    def sequences(self) -> list[str]:
        """Sequence names this adapter can prepare."""

    @abc.abstractmethod
    def download_sequence_data(self, sequence: str, dirs: PrepareDirs) -> None: ...

    @abc.abstractmethod
    def create_rgb_folder(self, sequence: str, dirs: PrepareDirs) -> None: ...

    @abc.abstractmethod
    def create_calibration_yaml(self, sequence: str, dirs: PrepareDirs) -> None: ...

    @abc.abstractmethod
    def create_rgb_csv(self, sequence: str, dirs: PrepareDirs) -> None: ...

    @abc.abstractmethod
    def create_groundtruth_csv(self, sequence: str, dirs: PrepareDirs) -> None: ...


def prepare_sequence(adapter: DatasetAdapter, sequence: str, root) -> SequenceLayout:
    """Build one sequence under ``<root>/<dataset>/<sequence>``.

    Idempotent: an existing sequence that validates is returned without a
    single write.  An existing directory that fails validation is rebuilt.
    Preparation happens in ``.staging`` and is published by an atomic
    rename; a stale staging directory from a crashed run is discarded.

    Raises:
        ValidationFailed: the built sequence does not satisfy the layout.
        DownloadFailed / ChecksumMismatch: upstream data unavailable or bad.
    """
    root = Path(root)
    dataset_root = root / adapter.dataset_name
    final = dataset_root / sequence
    if final.exists():
        report = validate_sequence(final)
        if report.ok:
            return SequenceLayout(final)
        shutil.rmtree(final)

    staging_root = dataset_root / ".staging"
    seq_dir = staging_root / sequence
    scratch = staging_root / f"{sequence}.scratch"
    for stale in (seq_dir, scratch):
        if stale.exists():
            shutil.rmtree(stale)
    dirs = PrepareDirs(
        sequence_dir=seq_dir,
        downloads_dir=dataset_root / ".downloads",
        scratch_dir=scratch,
    )
    seq_dir.mkdir(parents=True)
    scratch.mkdir(parents=True)
    try:
        adapter.download_sequence_data(sequence, dirs)
        adapter.create_rgb_folder(sequence, dirs)
        adapter.create_calibration_yaml(sequence, dirs)
        adapter.create_rgb_csv(sequence, dirs)
        adapter.create_groundtruth_csv(sequence, dirs)
        report = validate_sequence(seq_dir)
        if not report.ok:
            raise ValidationFailed(report)
        os.replace(seq_dir, final)
    finally:
        for leftover in (scratch, seq_dir):
            if leftover.exists():
                shutil.rmtree(leftover)
    return SequenceLayout(final)


def _stable_seed(*parts) -> int:
    key = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


class SyntheticAdapter(DatasetAdapter):
    """Locally generated orbit sequences; no network involved.

    The camera flies a circle of randomized radius with a sinusoidal
    height profile, looking along its direction of travel.  Images are
    flat color with per-pixel noise; everything derives deterministically
    from the adapter seed and the sequence name.
    """

    dataset_name = "synthetic"

    def __init__(
        self,
        seed: int = 0,
        num_frames: int = 120,
        width: int = 64,
        height: int = 48,
        fps: float = 30.0,
    ):
        self.seed = int(seed)
        self.num_frames = int(num_frames)
        self.width = int(width)
        self.height = int(height)
        self.fps = float(fps)

    def sequences(self) -> list[str]:
        return ["orbit_00", "orbit_01"]

    def _rng(self, sequence: str, purpose: str) -> np.random.Generator:
        return np.random.default_rng(_stable_seed(self.seed, sequence, purpose))

    def _calibration(self) -> CameraCalibration:
        return CameraCalibration(
            fx=0.9 * self.width,
            fy=0.9 * self.width,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            width=self.width,
            height=self.height,
            fps=self.fps,
        )

    def _path(self, sequence: str) -> Trajectory:
        rng = self._rng(sequence, "path")
        radius = rng.uniform(1.5, 3.0)
        height = rng.uniform(0.2, 0.6)
        bobs = rng.integers(2, 5)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        duration = self.num_frames / self.fps
        stamps, positions, quaternions = [], [], []
        for k in range(self.num_frames):
            t = k / self.fps
            angle = 2.0 * math.pi * t / duration
            positions.append(
                [
                    radius * math.cos(angle),
                    radius * math.sin(angle),
                    height * math.sin(bobs * angle + phase),
                ]
            )
            # Look along the direction of travel, keeping the image upright.
            forward = np.array(
                [
                    -math.sin(angle),
                    math.cos(angle),
                    height * bobs * math.cos(bobs * angle + phase) / radius,
                ]
            )
            forward /= np.linalg.norm(forward)
            right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
            right /= np.linalg.norm(right)
            up = np.cross(forward, right)
            rotation = np.column_stack([right, up, forward])
            quaternions.append(matrix_to_quaternion(rotation))
            stamps.append(t)
        return Trajectory(stamps, positions, quaternions)

    def download_sequence_data(self, sequence: str, dirs: PrepareDirs) -> None:
        """Nothing to fetch; sequences are generated in place."""

    def create_rgb_folder(self, sequence: str, dirs: PrepareDirs) -> None:
        rgb_dir = dirs.sequence_dir / "rgb"
        rgb_dir.mkdir(parents=True, exist_ok=True)
        rng = self._rng(sequence, "pixels")
        base_hue = rng.uniform(0.0, 2.0 * math.pi)
        for k in range(self.num_frames):
            phase = base_hue + 2.0 * math.pi * k / self.num_frames
            base = np.array(
                [
                    128 + 80 * math.sin(phase),
                    128 + 80 * math.sin(phase + 2.1),
                    128 + 80 * math.sin(phase + 4.2),
                ]
            )
            noise = rng.integers(-24, 25, size=(self.height, self.width, 3))
            pixels = np.clip(base[None, None, :] + noise, 0, 255).astype(np.uint8)
            name = rgb_image_name(k, self.num_frames)
            Image.fromarray(pixels, mode="RGB").save(rgb_dir / name)

    def create_calibration_yaml(self, sequence: str, dirs: PrepareDirs) -> None:
        write_calibration_yaml(
            self._calibration(),
            dirs.sequence_dir / "calibration.yaml",
            audit_comments=[f"synthetic sequence {sequence!r}, seed {self.seed}"],
        )

    def create_rgb_csv(self, sequence: str, dirs: PrepareDirs) -> None:
        rows = [
            (k / self.fps, f"rgb/{rgb_image_name(k, self.num_frames)}")
            for k in range(self.num_frames)
        ]
        write_rgb_csv(rows, dirs.sequence_dir / "rgb.csv")

    def create_groundtruth_csv(self, sequence: str, dirs: PrepareDirs) -> None:
        write_groundtruth_csv(self._path(sequence), dirs.sequence_dir / "groundtruth.csv")


#: Published intrinsics for the three camera generations of the Freiburg
#: RGB-D recordings (fx, fy, cx, cy, k1, k2, p1, p2, k3).
_FREIBURG_INTRINSICS = {
    "freiburg1": (517.3, 516.5, 318.6, 255.3, 0.2624, -0.9531, -0.0054, 0.0026, 1.1633),
    "freiburg2": (520.9, 521.0, 325.1, 249.7, 0.2312, -0.7849, -0.0033, -0.0001, 0.9172),
    "freiburg3": (535.4, 539.2, 320.1, 247.6, 0.0, 0.0, 0.0, 0.0, 0.0),
}

_TUM_BASE_URL = "https://cvg.cit.tum.de/rgbd/dataset"

_TUM_SEQUENCES = {
    name: f"{_TUM_BASE_URL}/{name.split('_')[0]}/rgbd_dataset_{name}.tgz"
    for name in (
        "freiburg1_xyz",
        "freiburg1_desk",
        "freiburg2_desk",
        "freiburg2_xyz",
        "freiburg3_structure_texture_far",
        "freiburg3_long_office_household",
    )
}


class TumRgbdAdapter(DatasetAdapter):
    """Converter for the Freiburg hand-held RGB-D recordings.

    Downloads a sequence archive, renumbers the color frames, undistorts
    them onto the pinhole model, and rewrites the frame listing and
    ground truth in the standard layout.  Archives are verified against a
    ``checksums.txt`` manifest in the download cache when one lists them.
    """

    dataset_name = "tum_rgbd"

    def __init__(
        self,
        catalog: dict[str, str] | None = None,
        calibrations: dict[str, CameraCalibration] | None = None,
    ):
        self.catalog = dict(_TUM_SEQUENCES if catalog is None else catalog)
        self._calibrations = calibrations
        self._undistorters: dict[str, Undistorter] = {}

    def sequences(self) -> list[str]:
        return sorted(self.catalog)

    def _url(self, sequence: str) -> str:
        try:
            return self.catalog[sequence]
        except KeyError:
            raise UnknownSequence(
                f"{self.dataset_name} has no sequence {sequence!r}"
            ) from None

    def _calibration(self, sequence: str, fps: float = 30.0) -> CameraCalibration:
        if self._calibrations is not None:
            try:
                return self._calibrations[sequence]
            except KeyError:
                raise UnknownSequence(f"no calibration for {sequence!r}") from None
        group = sequence.split("_")[0]
        if group not in _FREIBURG_INTRINSICS:
            raise UnknownSequence(f"cannot infer camera generation from {sequence!r}")
        fx, fy, cx, cy, k1, k2, p1, p2, k3 = _FREIBURG_INTRINSICS[group]
        return CameraCalibration(
            fx=fx, fy=fy, cx=cx, cy=cy, width=640, height=480, fps=fps,
            k1=k1, k2=k2, p1=p1, p2=p2, k3=k3,
        )

    def _source_dir(self, dirs: PrepareDirs) -> Path:
        hits = sorted(dirs.scratch_dir.rglob("rgb.txt"))
        if not hits:
            raise DownloadFailed("extracted archive contains no rgb.txt")
        return hits[0].parent

    @staticmethod
    def _frame_list(source: Path) -> list[tuple[float, str]]:
        frames: list[tuple[float, str]] = []
        for line in (source / "rgb.txt").read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            stamp_text, _, rel = line.partition(" ")
            frames.append((float(stamp_text), rel.strip()))
        frames.sort()
        return frames

    def download_sequence_data(self, sequence: str, dirs: PrepareDirs) -> None:
        url = self._url(sequence)
        archive_name = url.rsplit("/", 1)[-1]
        archive = download_file(url, dirs.downloads_dir / archive_name)
        manifest_path = dirs.downloads_dir / CHECKSUM_MANIFEST
        if manifest_path.is_file():
            manifest = read_checksum_manifest(manifest_path)
            expected = manifest.get(archive_name)
            if expected is not None:
                actual = sha256_of(archive)
                if actual != expected:
                    archive.unlink()
                    raise ChecksumMismatch(
                        f"{archive_name}: sha256 {actual} != manifest {expected}"
                    )
        _safe_extract_tar(archive, dirs.scratch_dir)

    def create_rgb_folder(self, sequence: str, dirs: PrepareDirs) -> None:
        source = self._source_dir(dirs)
        frames = self._frame_list(source)
        rgb_dir = dirs.sequence_dir / "rgb"
        rgb_dir.mkdir(parents=True, exist_ok=True)
        calibration = self._calibration(sequence)
        undistorter = None
        if calibration.has_distortion:
            undistorter = self._undistorters.get(sequence)
            if undistorter is None:
                undistorter = Undistorter(calibration)
                self._undistorters[sequence] = undistorter
        for index, (_, rel) in enumerate(frames):
            src = source / rel
            if not src.is_file():
                raise DownloadFailed(f"frame listed in rgb.txt is missing: {rel}")
            dst = rgb_dir / rgb_image_name(index, len(frames), src.suffix.lstrip("."))
            if undistorter is None:
                shutil.copyfile(src, dst)
            else:
                with Image.open(src) as img:
                    pixels = np.asarray(img.convert("RGB"))
                Image.fromarray(undistorter.remap(pixels), mode="RGB").save(dst)

    def create_calibration_yaml(self, sequence: str, dirs: PrepareDirs) -> None:
        calibration = self._calibration(sequence)
        comments = [f"converted from {self._url(sequence)}"]
        if calibration.has_distortion:
            k1, k2, p1, p2, k3 = calibration.distortion
            comments.append(
                "images were undistorted; original coefficients: "
                f"k1={k1} k2={k2} p1={p1} p2={p2} k3={k3}"
            )
        write_calibration_yaml(
            calibration.without_distortion(),
            dirs.sequence_dir / "calibration.yaml",
            audit_comments=comments,
        )

    def create_rgb_csv(self, sequence: str, dirs: PrepareDirs) -> None:
        source = self._source_dir(dirs)
        frames = self._frame_list(source)
        rows = [
            (stamp, f"rgb/{rgb_image_name(index, len(frames), Path(rel).suffix.lstrip('.'))}")
            for index, (stamp, rel) in enumerate(frames)
        ]
        write_rgb_csv(rows, dirs.sequence_dir / "rgb.csv")

    def create_groundtruth_csv(self, sequence: str, dirs: PrepareDirs) -> None:
        source = self._source_dir(dirs)
        gt_file = source / "groundtruth.txt"
        if not gt_file.is_file():
            raise DownloadFailed("archive has no groundtruth.txt")
        trajectory = parse_trajectory(gt_file.read_text(encoding="utf-8"))
        write_groundtruth_csv(trajectory, dirs.sequence_dir / "groundtruth.csv")


def builtin_adapters(seed: int = 0) -> dict[str, DatasetAdapter]:
    """Adapters keyed by dataset name as used in sequence-set files."""
    return {
        "synthetic": SyntheticAdapter(seed=seed),
        "tum_rgbd": TumRgbdAdapter(),
    }
