"""Shared helpers for the test suite."""

import tarfile

import numpy as np
from PIL import Image

from trajbench.dataset import CameraCalibration
from trajbench.trajectory import Trajectory, quaternion_to_matrix


def random_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_rotation(rng):
    return quaternion_to_matrix(random_quaternion(rng))


def batch_quaternion_matrices(quats):
    """Rotation matrices for an (n, 4) array of unit quaternions (x, y, z, w)."""
    x, y, z, w = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    out = np.empty((len(quats), 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - z * w)
    out[:, 0, 2] = 2 * (x * z + y * w)
    out[:, 1, 0] = 2 * (x * y + z * w)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - x * w)
    out[:, 2, 0] = 2 * (x * z - y * w)
    out[:, 2, 1] = 2 * (y * z + x * w)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def make_trajectory(n=50, seed=0, dt=0.1, start=0.0, spread=2.0):
    rng = np.random.default_rng(seed)
    stamps = start + dt * np.arange(n)
    positions = spread * rng.normal(size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return Trajectory(stamps, positions, quats)


def circle_trajectory(n=100, radius=2.0, dt=0.05):
    stamps = dt * np.arange(n)
    angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    positions = np.column_stack(
        [radius * np.cos(angles), radius * np.sin(angles), 0.2 * np.sin(3 * angles)]
    )
    quats = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
    return Trajectory(stamps, positions, quats)


def manual_percentile(values, p):
    """Linear-interpolation percentile, written out longhand."""
    data = sorted(float(v) for v in values)
    if not data:
        raise ValueError("empty")
    h = (len(data) - 1) * (p / 100.0)
    lo = int(np.floor(h))
    hi = int(np.ceil(h))
    if lo == hi:
        return data[lo]
    return data[lo] + (h - lo) * (data[hi] - data[lo])


def build_upstream_archive(tmp_path, with_distortion_sized=(32, 24), frames=6):
    """Fabricate a miniature upstream sequence laid out like the real ones."""
    w, h = with_distortion_sized
    src = tmp_path / "rgbd_dataset_test_seq"
    (src / "rgb").mkdir(parents=True)
    rng = np.random.default_rng(17)
    rgb_lines = ["# color images", "# timestamp filename"]
    for i in range(frames):
        name = f"rgb/{1234.5 + 0.1 * i:.6f}.png"
        pixels = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(src / name)
        rgb_lines.append(f"{1234.5 + 0.1 * i:.6f} {name}")
    (src / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    traj = make_trajectory(n=frames, seed=4, dt=0.1, start=1234.5)
    gt_lines = ["# ground truth"]
    for k in range(frames):
        vals = [traj.timestamps[k], *traj.positions[k], *traj.quaternions[k]]
        gt_lines.append(" ".join(f"{v:.6f}" for v in vals))
    (src / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")

    archive = tmp_path / "rgbd_dataset_test_seq.tgz"
    with tarfile.open(archive, "w:gz") as tar:
        tar.add(src, arcname="rgbd_dataset_test_seq")
    return archive


def tum_test_calibration(w=32, h=24, **coeffs):
    return CameraCalibration(
        fx=0.8 * w, fy=0.8 * w, cx=(w - 1) / 2, cy=(h - 1) / 2,
        width=w, height=h, fps=10.0, **coeffs,
    )
