"""Trajectory error evaluation: timestamp association with closed-form alignment."""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .trajectory import Sim3Transform, Trajectory

DEFAULT_MAX_DIFFERENCE = 0.02
ALIGN_MODES = ("sim3", "se3", "none")

#: Ratio of second to first singular value below which the alignment is
#: reported as degenerate (near-collinear correspondences).
DEGENERACY_RATIO = 1e-9

_JACOBI_TOL = 1e-14
_MAX_SWEEPS = 60


class InsufficientCorrespondences(EvaluationError):
    pass


class ZeroVariance(EvaluationError):
    pass


@dataclass(frozen=True)
class Association:
    """Injective matching of estimate to ground-truth sample indices."""

    pairs: tuple[tuple[int, int], ...]
    max_difference: float

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def estimate_indices(self) -> list[int]:
        return [i for i, _ in self.pairs]

    @property
    def ground_truth_indices(self) -> list[int]:
        return [j for _, j in self.pairs]


def associate(
    estimate_stamps,
    ground_truth_stamps,
    max_difference: float = DEFAULT_MAX_DIFFERENCE,
    time_offset: float = 0.0,
) -> Association:
    """Greedy nearest-timestamp matching between two stamp lists.

    All candidate pairs with ``|t_est + time_offset - t_gt| <= max_difference``
    are taken best-first (smallest difference, ties broken by the lower
    estimate index and then the lower ground-truth index); a candidate is
    accepted only while both of its samples are unused.  The result is
    deterministic and injective on both sides, and pairs come back ordered
    by estimate index.
    """
    est = [float(t) for t in estimate_stamps]
    gt = [float(t) for t in ground_truth_stamps]
    if max_difference <= 0.0:
        raise ValueError("max_difference must be positive")
    if any(b <= a for a, b in zip(est, est[1:])):
        raise ValueError("estimate timestamps must be strictly increasing")
    if any(b <= a for a, b in zip(gt, gt[1:])):
        raise ValueError("ground-truth timestamps must be strictly increasing")

    candidates: list[tuple[float, int, int]] = []
    for i, stamp in enumerate(est):
        shifted = stamp + time_offset
        lo = bisect_left(gt, shifted - max_difference)
        hi = bisect_right(gt, shifted + max_difference)
        for j in range(lo, hi):
            candidates.append((abs(shifted - gt[j]), i, j))
    candidates.sort()

    used_est: set[int] = set()
    used_gt: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for _, i, j in candidates:
        if i in used_est or j in used_gt:
            continue
        used_est.add(i)
        used_gt.add(j)
        pairs.append((i, j))
    pairs.sort()
    return Association(tuple(pairs), max_difference)


def _det3(m: np.ndarray) -> float:
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _svd3(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic SVD of a 3x3 matrix via one-sided Jacobi rotations.

    Column pairs are swept in a fixed cyclic order until every pairwise
    cosine of the working columns drops below 1e-14, so results are
    bit-reproducible across runs.  Singular values come back descending;
    U and V are completed to full orthogonal bases for rank-deficient
    input.
    """
    a = np.asarray(matrix, dtype=float).reshape(3, 3)
    scale = math.sqrt(float((a * a).sum()))
    if scale == 0.0:
        return np.eye(3), np.zeros(3), np.eye(3)

    # Work on columns as plain float lists; the matrices are tiny and this
    # avoids per-operation array overhead in hot evaluation loops.
    w = [[a[r, c] / scale for r in range(3)] for c in range(3)]
    v = [[1.0 if r == c else 0.0 for r in range(3)] for c in range(3)]

    for _ in range(_MAX_SWEEPS):
        converged = True
        for p, q in ((0, 1), (0, 2), (1, 2)):
            wp, wq = w[p], w[q]
            alpha = wp[0] * wp[0] + wp[1] * wp[1] + wp[2] * wp[2]
            beta = wq[0] * wq[0] + wq[1] * wq[1] + wq[2] * wq[2]
            gamma = wp[0] * wq[0] + wp[1] * wq[1] + wp[2] * wq[2]
            if alpha == 0.0 or beta == 0.0:
                continue
            if abs(gamma) <= _JACOBI_TOL * math.sqrt(alpha * beta):
                continue
            converged = False
            zeta = (beta - alpha) / (2.0 * gamma)
            t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
            c = 1.0 / math.hypot(1.0, t)
            s = c * t
            vp, vq = v[p], v[q]
            for k in range(3):
                wpk, wqk = wp[k], wq[k]
                wp[k] = c * wpk - s * wqk
                wq[k] = s * wpk + c * wqk
                vpk, vqk = vp[k], vq[k]
                vp[k] = c * vpk - s * vqk
                vq[k] = s * vpk + c * vqk
        if converged:
            break

    norms = [math.sqrt(col[0] ** 2 + col[1] ** 2 + col[2] ** 2) for col in w]
    order = sorted(range(3), key=lambda i: (-norms[i], i))
    singular = np.array([norms[i] * scale for i in order])
    v_cols = [v[i] for i in order]

    floor = norms[order[0]] * 1e-18
    u_cols: list[list[float]] = []
    for i in order:
        if norms[i] > floor:
            u_cols.append([w[i][k] / norms[i] for k in range(3)])
        else:
            u_cols.append(_complete_basis(u_cols))

    u = np.array(u_cols).T
    vt = np.array(v_cols)
    return u, singular, vt


def _complete_basis(existing: list[list[float]]) -> list[float]:
    # Deterministic Gram-Schmidt against the standard basis.
    for axis in range(3):
        cand = [1.0 if k == axis else 0.0 for k in range(3)]
        for col in existing:
            dot = sum(cand[k] * col[k] for k in range(3))
            for k in range(3):
                cand[k] -= dot * col[k]
        norm = math.sqrt(sum(c * c for c in cand))
        if norm > 0.5:
            return [c / norm for c in cand]
    raise AssertionError("orthogonal completion failed")


@dataclass(frozen=True)
class Sim3Alignment:
    """Closed-form least-squares alignment together with its diagnostics."""

    transform: Sim3Transform
    singular_values: np.ndarray
    degenerate: bool


def umeyama_align(source, destination, with_scale: bool = True) -> Sim3Alignment:
    """Least-squares similarity (or rigid) transform mapping source onto destination.

    Minimizes ``sum_i ||dst_i - (s R src_i + t)||^2`` over scale s, proper
    rotation R and translation t, using the SVD of the cross-covariance of
    the centered point sets.  The sign correction on the smallest singular
    direction keeps R a proper rotation even when a reflection would fit
    better, which matters for planar and noisy point sets.

    Args:
        source: (n, 3) points to be transformed.
        destination: (n, 3) target points, same n.
        with_scale: solve for scale when true, otherwise pin s = 1.

    Returns:
        Sim3Alignment with the transform, the descending singular values
        of the cross-covariance, and a degeneracy flag (second singular
        value below 1e-9 times the first).

    Raises:
        InsufficientCorrespondences: fewer than three point pairs.
        ZeroVariance: source variance too small to determine scale.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(destination, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and destination must have matching shapes")
    n = src.shape[0]
    if n < 3:
        raise InsufficientCorrespondences(f"{n} correspondences, need at least 3")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    x = src - mu_src
    y = dst - mu_dst
    cov = (y.T @ x) / n

    u, d, vt = _svd3(cov)
    sign = 1.0 if _det3(u) * _det3(vt) >= 0.0 else -1.0
    rotation = (u * np.array([1.0, 1.0, sign])) @ vt

    if with_scale:
        var_src = float((x * x).sum()) / n
        if var_src < 1e-18:
            raise ZeroVariance(f"source variance {var_src:.3e} cannot support scale")
        scale = (d[0] + d[1] + sign * d[2]) / var_src
        if scale <= 0.0:
            raise ZeroVariance("cross-covariance carries no usable signal")
    else:
        scale = 1.0

    translation = mu_dst - scale * rotation @ mu_src
    degenerate = bool(d[1] < DEGENERACY_RATIO * d[0])
    return Sim3Alignment(Sim3Transform(scale, rotation, translation), d, degenerate)


def error_statistics(errors) -> tuple[float, float, float, float, float, float]:
    """(rmse, mean, median, std, min, max) of per-pair errors; NaNs when empty."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        nan = float("nan")
        return nan, nan, nan, nan, nan, nan
    rmse = float(np.sqrt(np.mean(e * e)))
    return (
        rmse,
        float(np.mean(e)),
        float(np.median(e)),
        float(np.std(e)),
        float(np.min(e)),
        float(np.max(e)),
    )


@dataclass(frozen=True)
class AteResult:
    """Absolute trajectory error over matched, aligned positions."""

    rmse: float
    mean: float
    median: float
    std: float
    min: float
    max: float
    per_pair_errors: np.ndarray
    num_pairs: int
    num_estimated_frames: int
    num_gt_frames: int
    num_total_frames: int
    alignment: Sim3Transform
    degenerate_alignment: bool


def compute_ate(
    estimate: Trajectory,
    ground_truth: Trajectory,
    align_mode: str = "sim3",
    max_difference: float = DEFAULT_MAX_DIFFERENCE,
    time_offset: float = 0.0,
    num_total_frames: int | None = None,
) -> AteResult:
    """Associate by timestamp, align, and score translational error.

    ``align_mode`` is one of "sim3" (similarity), "se3" (rigid) or "none"
    (compare in the raw frame).  Per-pair errors are Euclidean distances
    between ground-truth positions and aligned estimate positions.
    ``num_total_frames`` is the frame count offered to the method (from
    the sequence's rgb listing); it defaults to the estimate length when
    not given.

    Raises:
        InsufficientCorrespondences: fewer than 3 matches with alignment on.
        ZeroVariance: degenerate source when solving for scale.
    """
    if align_mode not in ALIGN_MODES:
        raise ValueError(f"align_mode must be one of {ALIGN_MODES}, got {align_mode!r}")
    assoc = associate(
        estimate.timestamps, ground_truth.timestamps, max_difference, time_offset
    )
    est_idx = assoc.estimate_indices
    gt_idx = assoc.ground_truth_indices
    est_points = estimate.positions[est_idx] if est_idx else np.empty((0, 3))
    gt_points = ground_truth.positions[gt_idx] if gt_idx else np.empty((0, 3))

    degenerate = False
    if align_mode == "none":
        transform = Sim3Transform.identity()
    else:
        if len(assoc) < 3:
            raise InsufficientCorrespondences(
                f"{len(assoc)} matched pairs, need at least 3 to align"
            )
        alignment = umeyama_align(est_points, gt_points, with_scale=align_mode == "sim3")
        transform = alignment.transform
        degenerate = alignment.degenerate

    residuals = gt_points - transform.apply(est_points)
    errors = np.linalg.norm(residuals, axis=1) if len(residuals) else np.empty(0)
    rmse, mean, median, std, err_min, err_max = error_statistics(errors)
    num_estimated = len(estimate)
    return AteResult(
        rmse=rmse,
        mean=mean,
        median=median,
        std=std,
        min=err_min,
        max=err_max,
        per_pair_errors=errors,
        num_pairs=len(assoc),
        num_estimated_frames=num_estimated,
        num_gt_frames=len(ground_truth),
        num_total_frames=num_estimated if num_total_frames is None else int(num_total_frames),
        alignment=transform,
        degenerate_alignment=degenerate,
    )
