import hashlib
import io
import os
import shutil
import socket
import tarfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from trajbench.adapters import (
    ChecksumMismatch,
    DownloadFailed,
    PrepareDirs,
    SyntheticAdapter,
    TumRgbdAdapter,
    UnknownSequence,
    _safe_extract_tar,
    builtin_adapters,
    download_file,
    prepare_sequence,
    read_checksum_manifest,
    sha256_of,
)
from trajbench.dataset import (
    CameraCalibration,
    ValidationFailed,
    read_calibration_yaml,
    read_groundtruth_csv,
    read_rgb_csv,
    validate_sequence,
)
from util import build_upstream_archive, make_trajectory, tum_test_calibration


def test_sha256_of(tmp_path):
    path = tmp_path / "blob.bin"
    payload = os.urandom(4096)
    path.write_bytes(payload)
    assert sha256_of(path) == hashlib.sha256(payload).hexdigest()


def test_read_checksum_manifest(tmp_path):
    path = tmp_path / "checksums.txt"
    path.write_text("# comment\n\nabc123  file_a.tgz\nDEF456  file_b.tgz\n")
    manifest = read_checksum_manifest(path)
    assert manifest == {"file_a.tgz": "abc123", "file_b.tgz": "def456"}


def test_download_file_url(tmp_path):
    src = tmp_path / "src.bin"
    src.write_bytes(b"payload " * 100)
    dst = tmp_path / "out" / "dst.bin"
    got = download_file(src.as_uri(), dst)
    assert got == dst
    assert dst.read_bytes() == src.read_bytes()
    assert not dst.with_suffix(".bin.part").exists()


def test_download_existing_destination_untouched(tmp_path):
    src = tmp_path / "src.bin"
    src.write_bytes(b"new content")
    dst = tmp_path / "dst.bin"
    dst.write_bytes(b"old content")
    download_file(src.as_uri(), dst)
    assert dst.read_bytes() == b"old content"


def test_download_missing_file_url(tmp_path):
    with pytest.raises(DownloadFailed):
        download_file((tmp_path / "absent.bin").as_uri(), tmp_path / "out.bin")


# --- local HTTP server with Range support and a fault hook -------------


class _RangeHandler(BaseHTTPRequestHandler):
    payload = b""
    truncate_first_at = None  # bytes to send before dropping, once
    _tripped = False

    def log_message(self, *args):
        pass

    def do_GET(self):
        cls = type(self)
        data = cls.payload
        start = 0
        status = 200
        if "Range" in self.headers:
            spec = self.headers["Range"].split("=")[1]
            start = int(spec.split("-")[0])
            if start >= len(data):
                self.send_response(416)
                self.end_headers()
                return
            data = data[start:]
            status = 206
        self.send_response(status)
        self.send_header("Content-Length", str(len(data)))
        if status == 206:
            self.send_header(
                "Content-Range",
                f"bytes {start}-{len(cls.payload) - 1}/{len(cls.payload)}",
            )
        self.end_headers()
        if cls.truncate_first_at is not None and not cls._tripped:
            cls._tripped = True
            self.wfile.write(data[: cls.truncate_first_at])
            self.wfile.flush()
            self.connection.shutdown(socket.SHUT_RDWR)
            return
        self.wfile.write(data)


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _RangeHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _RangeHandler.payload = b""
    _RangeHandler.truncate_first_at = None
    _RangeHandler._tripped = False
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_download_http(tmp_path, http_server):
    _RangeHandler.payload = os.urandom(10000)
    dst = tmp_path / "blob.bin"
    download_file(f"{http_server}/blob.bin", dst)
    assert dst.read_bytes() == _RangeHandler.payload


def test_download_resumes_after_truncation(tmp_path, http_server):
    _RangeHandler.payload = os.urandom(20000)
    _RangeHandler.truncate_first_at = 6000
    dst = tmp_path / "blob.bin"
    url = f"{http_server}/blob.bin"
    with pytest.raises(DownloadFailed):
        download_file(url, dst)
    part = dst.with_suffix(".bin.part")
    assert part.exists()
    assert part.stat().st_size == 6000
    # second attempt asks for the tail only and completes the file
    download_file(url, dst)
    assert dst.read_bytes() == _RangeHandler.payload
    assert not part.exists()


def test_download_resume_disabled(tmp_path, http_server):
    _RangeHandler.payload = b"x" * 500
    dst = tmp_path / "blob.bin"
    part = dst.with_suffix(".bin.part")
    part.write_bytes(b"junk")
    download_file(f"{http_server}/blob.bin", dst, resume=False)
    assert dst.read_bytes() == _RangeHandler.payload


def test_download_http_404(tmp_path):
    # ThreadingHTTPServer above always serves; use a closed port instead
    with pytest.raises(DownloadFailed):
        download_file("http://127.0.0.1:9/none.bin", tmp_path / "x.bin")


# --- archive safety -----------------------------------------------------


def _tar_bytes(members):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        for name, payload in members:
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            tar.addfile(info, io.BytesIO(payload))
    return buf.getvalue()


def test_safe_extract_rejects_traversal(tmp_path):
    evil = tmp_path / "evil.tgz"
    evil.write_bytes(_tar_bytes([("../escape.txt", b"boo")]))
    with pytest.raises(DownloadFailed):
        _safe_extract_tar(evil, tmp_path / "out")
    assert not (tmp_path / "escape.txt").exists()


def test_safe_extract_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.tgz"
    bad.write_bytes(b"this is not a tarball")
    with pytest.raises(DownloadFailed):
        _safe_extract_tar(bad, tmp_path / "out")


def test_safe_extract_normal(tmp_path):
    archive = tmp_path / "ok.tgz"
    archive.write_bytes(_tar_bytes([("d/a.txt", b"hello")]))
    _safe_extract_tar(archive, tmp_path / "out")
    assert (tmp_path / "out" / "d" / "a.txt").read_bytes() == b"hello"


# --- synthetic adapter and prepare_sequence ----------------------------


def _tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[path.relative_to(root).as_posix()] = sha256_of(path)
    return out


def test_prepare_sequence_builds_valid_layout(tmp_path):
    adapter = SyntheticAdapter(seed=3, num_frames=12, width=16, height=12, fps=6.0)
    layout = prepare_sequence(adapter, "orbit_00", tmp_path)
    assert validate_sequence(layout.root).ok
    rows = read_rgb_csv(layout.rgb_csv)
    assert len(rows) == 12
    gt = read_groundtruth_csv(layout.groundtruth_csv)
    assert len(gt) == 12
    assert not (tmp_path / "synthetic" / ".staging").exists() or not any(
        (tmp_path / "synthetic" / ".staging").iterdir()
    )


def test_prepare_sequence_idempotent(tmp_path):
    adapter = SyntheticAdapter(seed=3, num_frames=8, width=16, height=12, fps=4.0)
    layout = prepare_sequence(adapter, "orbit_00", tmp_path)
    stamp = layout.rgb_csv.stat().st_mtime_ns
    again = prepare_sequence(adapter, "orbit_00", tmp_path)
    assert again.root == layout.root
    assert layout.rgb_csv.stat().st_mtime_ns == stamp  # untouched


def test_prepare_sequence_rebuilds_broken(tmp_path):
    adapter = SyntheticAdapter(seed=3, num_frames=8, width=16, height=12, fps=4.0)
    layout = prepare_sequence(adapter, "orbit_00", tmp_path)
    layout.calibration_yaml.unlink()
    rebuilt = prepare_sequence(adapter, "orbit_00", tmp_path)
    assert validate_sequence(rebuilt.root).ok


def test_prepare_sequence_deterministic(tmp_path):
    adapter = SyntheticAdapter(seed=5, num_frames=10, width=16, height=12, fps=5.0)
    a = prepare_sequence(adapter, "orbit_01", tmp_path / "one")
    b = prepare_sequence(adapter, "orbit_01", tmp_path / "two")
    assert _tree_digest(a.root) == _tree_digest(b.root)


def test_prepare_sequence_seed_changes_content(tmp_path):
    a = prepare_sequence(
        SyntheticAdapter(seed=1, num_frames=10, width=16, height=12), "orbit_00", tmp_path / "one"
    )
    b = prepare_sequence(
        SyntheticAdapter(seed=2, num_frames=10, width=16, height=12), "orbit_00", tmp_path / "two"
    )
    assert _tree_digest(a.root) != _tree_digest(b.root)


def test_prepare_sequence_failure_leaves_no_trace(tmp_path):
    class Exploding(SyntheticAdapter):
        def create_rgb_csv(self, sequence, dirs):
            raise RuntimeError("boom")

    adapter = Exploding(seed=1, num_frames=6, width=16, height=12)
    with pytest.raises(RuntimeError):
        prepare_sequence(adapter, "orbit_00", tmp_path)
    assert not (tmp_path / "synthetic" / "orbit_00").exists()
    staging = tmp_path / "synthetic" / ".staging"
    assert not staging.exists() or not any(staging.iterdir())


def test_prepare_sequence_validation_failure(tmp_path):
    class NoImages(SyntheticAdapter):
        def create_rgb_folder(self, sequence, dirs):
            (dirs.sequence_dir / "rgb").mkdir(parents=True, exist_ok=True)

    with pytest.raises(ValidationFailed):
        prepare_sequence(NoImages(seed=1, num_frames=6, width=16, height=12),
                         "orbit_00", tmp_path)
    assert not (tmp_path / "synthetic" / "orbit_00").exists()


def test_synthetic_groundtruth_looks_like_an_orbit(tmp_path):
    adapter = SyntheticAdapter(seed=9, num_frames=30, width=16, height=12, fps=15.0)
    layout = prepare_sequence(adapter, "orbit_00", tmp_path)
    gt = read_groundtruth_csv(layout.groundtruth_csv)
    radii = np.linalg.norm(gt.positions[:, :2], axis=1)
    assert np.std(radii) < 1e-6  # constant circle radius
    assert np.std(gt.positions[:, 2]) > 0.0  # height actually varies


def test_builtin_adapters_names():
    adapters = builtin_adapters()
    assert set(adapters) == {"synthetic", "tum_rgbd"}
    assert adapters["synthetic"].dataset_name == "synthetic"


# --- converter for the Freiburg-style archives --------------------------

_build_upstream_archive = build_upstream_archive
_test_calibration = tum_test_calibration


def test_tum_adapter_end_to_end(tmp_path):
    archive = _build_upstream_archive(tmp_path)
    adapter = TumRgbdAdapter(
        catalog={"test_seq": archive.as_uri()},
        calibrations={"test_seq": _test_calibration()},
    )
    layout = prepare_sequence(adapter, "test_seq", tmp_path / "bench")
    report = validate_sequence(layout.root)
    assert report.ok, report.describe()
    rows = read_rgb_csv(layout.rgb_csv)
    assert len(rows) == 6
    assert rows[0][1] == "rgb/rgb_0000.png"
    assert rows[0][0] == pytest.approx(1234.5)
    gt = read_groundtruth_csv(layout.groundtruth_csv)
    assert len(gt) == 6
    calib = read_calibration_yaml(layout.calibration_yaml)
    assert not calib.has_distortion
    assert "converted from" in layout.calibration_yaml.read_text()


def test_tum_adapter_undistorts_when_needed(tmp_path):
    archive = _build_upstream_archive(tmp_path)
    plain = TumRgbdAdapter(
        catalog={"test_seq": archive.as_uri()},
        calibrations={"test_seq": _test_calibration()},
    )
    warped = TumRgbdAdapter(
        catalog={"test_seq": archive.as_uri()},
        calibrations={"test_seq": _test_calibration(k1=0.2, k2=-0.03)},
    )
    a = prepare_sequence(plain, "test_seq", tmp_path / "plain")
    b = prepare_sequence(warped, "test_seq", tmp_path / "warped")
    img_a = (a.rgb_dir / "rgb_0000.png").read_bytes()
    img_b = (b.rgb_dir / "rgb_0000.png").read_bytes()
    assert img_a != img_b
    assert "k1=0.2" in b.calibration_yaml.read_text()
    # the published calibration must be distortion free either way
    assert not read_calibration_yaml(b.calibration_yaml).has_distortion


def test_tum_adapter_checksum_mismatch(tmp_path):
    archive = _build_upstream_archive(tmp_path)
    root = tmp_path / "bench"
    downloads = root / "tum_rgbd" / ".downloads"
    downloads.mkdir(parents=True)
    (downloads / "checksums.txt").write_text(f"{'0' * 64}  {archive.name}\n")
    adapter = TumRgbdAdapter(
        catalog={"test_seq": archive.as_uri()},
        calibrations={"test_seq": _test_calibration()},
    )
    with pytest.raises(ChecksumMismatch):
        prepare_sequence(adapter, "test_seq", root)
    assert not (downloads / archive.name).exists()  # bad file removed


def test_tum_adapter_checksum_match(tmp_path):
    archive = _build_upstream_archive(tmp_path)
    root = tmp_path / "bench"
    downloads = root / "tum_rgbd" / ".downloads"
    downloads.mkdir(parents=True)
    (downloads / "checksums.txt").write_text(f"{sha256_of(archive)}  {archive.name}\n")
    adapter = TumRgbdAdapter(
        catalog={"test_seq": archive.as_uri()},
        calibrations={"test_seq": _test_calibration()},
    )
    layout = prepare_sequence(adapter, "test_seq", root)
    assert validate_sequence(layout.root).ok


def test_tum_adapter_unknown_sequence(tmp_path):
    adapter = TumRgbdAdapter(catalog={}, calibrations={})
    with pytest.raises(UnknownSequence):
        prepare_sequence(adapter, "nope", tmp_path)


def test_tum_adapter_builtin_catalog_shape():
    adapter = TumRgbdAdapter()
    assert "freiburg1_xyz" in adapter.sequences()
    for name in adapter.sequences():
        assert adapter.catalog[name].startswith("https://")
    # intrinsics resolve for all three camera generations
    for group in ("freiburg1_xyz", "freiburg2_desk", "freiburg3_long_office_household"):
        calib = adapter._calibration(group)
        assert calib.width == 640
    assert not adapter._calibration("freiburg3_long_office_household").has_distortion


def test_tum_adapter_archive_without_listing(tmp_path):
    archive = tmp_path / "rgbd_dataset_empty.tgz"
    archive.write_bytes(_tar_bytes([("foo/readme.txt", b"nothing here")]))
    adapter = TumRgbdAdapter(
        catalog={"empty": archive.as_uri()},
        calibrations={"empty": _test_calibration()},
    )
    with pytest.raises(DownloadFailed):
        prepare_sequence(adapter, "empty", tmp_path / "bench")
