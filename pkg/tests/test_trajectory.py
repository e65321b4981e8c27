import io

import numpy as np
import pytest

from trajbench.trajectory import (
    DegenerateQuaternion,
    MixedSeparators,
    NegativeTimestamp,
    NonFinite,
    NonMonotonicTimestamp,
    PoseSE3,
    Sim3Transform,
    Trajectory,
    WrongFieldCount,
    apply_sim3,
    matrix_to_quaternion,
    parse_trajectory,
    quaternion_multiply,
    quaternion_to_matrix,
    read_trajectory_file,
    serialize_trajectory,
    write_trajectory_file,
)
from util import make_trajectory, random_quaternion, random_rotation


def test_quaternion_to_matrix_properties():
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = random_quaternion(rng)
        m = quaternion_to_matrix(q)
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(m) - 1.0) < 1e-12
        # q and -q encode the same rotation, bit for bit
        assert np.array_equal(m, quaternion_to_matrix(-q))


def test_identity_quaternion():
    assert np.allclose(quaternion_to_matrix([0, 0, 0, 1]), np.eye(3))


def test_matrix_quaternion_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(300):
        m = random_rotation(rng)
        q = matrix_to_quaternion(m)
        assert q[3] >= 0.0
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert np.allclose(quaternion_to_matrix(q), m, atol=1e-9)


def test_quaternion_multiply_matches_matrix_product():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = random_quaternion(rng)
        b = random_quaternion(rng)
        ab = quaternion_multiply(a, b)
        assert np.allclose(
            quaternion_to_matrix(ab),
            quaternion_to_matrix(a) @ quaternion_to_matrix(b),
            atol=1e-12,
        )


def test_quaternion_multiply_broadcasts():
    rng = np.random.default_rng(6)
    batch = np.array([random_quaternion(rng) for _ in range(7)])
    single = random_quaternion(rng)
    out = quaternion_multiply(single, batch)
    assert out.shape == (7, 4)
    for i in range(7):
        assert np.allclose(out[i], quaternion_multiply(single, batch[i]))


def test_pose_validates():
    PoseSE3([0, 0, 0], [0, 0, 0, 1])
    with pytest.raises(NonFinite):
        PoseSE3([0, np.nan, 0], [0, 0, 0, 1])
    with pytest.raises(DegenerateQuaternion):
        PoseSE3([0, 0, 0], [0, 0, 0, 0])


def test_sim3_rejects_non_rotation():
    with pytest.raises(ValueError):
        Sim3Transform(scale=1.0, rotation=np.eye(3) * 2.0, translation=np.zeros(3))
    with pytest.raises(ValueError):
        Sim3Transform(scale=-1.0, rotation=np.eye(3), translation=np.zeros(3))


def test_sim3_compose_oracle():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(40, 3))
    for _ in range(50):
        a = Sim3Transform(rng.uniform(0.5, 2), random_rotation(rng), rng.normal(size=3))
        b = Sim3Transform(rng.uniform(0.5, 2), random_rotation(rng), rng.normal(size=3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-10)


def test_trajectory_requires_increasing_stamps():
    with pytest.raises(NonMonotonicTimestamp):
        Trajectory([0.0, 0.0], np.zeros((2, 3)), [[0, 0, 0, 1]] * 2)
    with pytest.raises(NegativeTimestamp):
        Trajectory([-1.0, 0.0], np.zeros((2, 3)), [[0, 0, 0, 1]] * 2)


def test_trajectory_arrays_frozen():
    traj = make_trajectory(5)
    with pytest.raises(ValueError):
        traj.positions[0, 0] = 9.0


def test_parse_basic_and_comments():
    text = (
        "# header comment\n"
        "\n"
        "0.0 1.0 2.0 3.0 0.0 0.0 0.0 1.0\n"
        "0.5 1.5 2.5 3.5 0.0 0.0 0.0 1.0\n"
    )
    traj = parse_trajectory(text)
    assert len(traj) == 2
    assert traj.positions[1, 0] == 1.5


def test_parse_comma_rows():
    traj = parse_trajectory("0.0,1,2,3,0,0,0,1\n1.0,4,5,6,0,0,0,1\n")
    assert len(traj) == 2
    assert traj.positions[1, 2] == 6.0


def test_parse_mixed_separator_within_line():
    with pytest.raises(MixedSeparators) as err:
        parse_trajectory("0.0,1 2,3,0,0,0,1\n")
    assert err.value.line == 1


def test_parse_field_count_reports_line():
    with pytest.raises(WrongFieldCount) as err:
        parse_trajectory("0 1 2 3 0 0 0 1\n1 2 3\n")
    assert err.value.line == 2


def test_parse_rejects_non_finite():
    with pytest.raises(NonFinite):
        parse_trajectory("0 1 nan 3 0 0 0 1\n")


def test_parse_rejects_tiny_quaternion():
    with pytest.raises(DegenerateQuaternion):
        parse_trajectory("0 1 2 3 0 0 0 1e-9\n")


def test_parse_renormalizes_quaternion():
    traj = parse_trajectory("0 0 0 0 0 0 0 2.0\n")
    assert abs(np.linalg.norm(traj.quaternions[0]) - 1.0) < 1e-12


def test_parse_rejects_decreasing_stamps():
    with pytest.raises(NonMonotonicTimestamp):
        parse_trajectory("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")


def test_round_trip_tolerance():
    for trial in range(50):
        traj = make_trajectory(n=30, seed=trial, spread=50.0)
        back = parse_trajectory(serialize_trajectory(traj))
        assert np.max(np.abs(back.timestamps - traj.timestamps)) <= 1e-9
        assert np.max(np.abs(back.positions - traj.positions)) <= 1e-9
        # quaternions may renormalize after rounding; compare loosely
        assert np.max(np.abs(np.abs(np.sum(back.quaternions * traj.quaternions, axis=1)) - 1.0)) < 1e-9


def test_serialize_is_fixpoint():
    traj = make_trajectory(n=25, seed=3)
    once = serialize_trajectory(traj)
    twice = serialize_trajectory(parse_trajectory(once))
    assert once == twice


def test_serialize_comma():
    traj = make_trajectory(n=2, seed=1)
    text = serialize_trajectory(traj, separator=",")
    assert text.count(",") == 14
    assert len(parse_trajectory(text)) == 2
    with pytest.raises(ValueError):
        serialize_trajectory(traj, separator=";")


def test_file_round_trip(tmp_path):
    traj = make_trajectory(n=12, seed=9)
    path = tmp_path / "est.txt"
    write_trajectory_file(traj, path)
    back = read_trajectory_file(path)
    assert len(back) == 12
    assert np.max(np.abs(back.positions - traj.positions)) <= 1e-9


def test_parse_accepts_stream():
    traj = parse_trajectory(io.StringIO("0 0 0 0 0 0 0 1\n"))
    assert len(traj) == 1


def test_apply_sim3_positions_and_rotations():
    rng = np.random.default_rng(13)
    traj = make_trajectory(n=20, seed=2)
    g = Sim3Transform(1.7, random_rotation(rng), np.array([1.0, -2.0, 0.5]))
    moved = apply_sim3(g, traj)
    assert np.array_equal(moved.timestamps, traj.timestamps)
    assert np.allclose(moved.positions, g.apply(traj.positions), atol=1e-12)
    for i in range(len(traj)):
        expect = g.rotation @ quaternion_to_matrix(traj.quaternions[i])
        assert np.allclose(quaternion_to_matrix(moved.quaternions[i]), expect, atol=1e-9)


def test_trajectory_iteration_yields_poses():
    traj = make_trajectory(n=4, seed=8)
    items = list(traj)
    assert len(items) == 4
    ts, pose = items[2]
    assert ts == traj.timestamps[2]
    assert isinstance(pose, PoseSE3)
    assert np.allclose(pose.translation, traj.positions[2])
