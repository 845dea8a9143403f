"""Trajectory and point-cloud metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, TooFewCommonFrames


@dataclass
class TrajectoryEstimate:
    """Per-frame world poses: ids, (N, 3) positions, (N, 3, 3) rotations."""

    frame_ids: list[int]
    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        n = len(self.frame_ids)
        if self.positions.shape[0] != n or self.rotations.shape[0] != n:
            raise ValueError(
                f"{n} frame ids with {self.positions.shape[0]} positions "
                f"and {self.rotations.shape[0]} rotations"
            )
        if n > 1 and not (np.diff(self.frame_ids) > 0).all():
            raise ValueError("frame_ids must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frame_ids)


def _align_positions(est: np.ndarray, gt: np.ndarray, with_scale: bool) -> np.ndarray:
    """Least-squares similarity (or rigid) registration of est onto gt."""
    mu_est = est.mean(axis=0)
    mu_gt = gt.mean(axis=0)
    x = est - mu_est
    y = gt - mu_gt
    cov = y.T @ x / len(est)
    u, d, vt = np.linalg.svd(cov)
    flip = np.array([1.0, 1.0, np.sign(np.linalg.det(u) * np.linalg.det(vt))])
    rot = u @ np.diag(flip) @ vt
    if with_scale:
        var = (x * x).sum() / len(est)
        scale = (d * flip).sum() / var
    else:
        scale = 1.0
    return scale * (x @ rot.T) + mu_gt


def ate_rmse(est: TrajectoryEstimate, gt: TrajectoryEstimate, mode: str = "sim3") -> float:
    """Absolute trajectory error RMSE after aligning est to gt.

    ``mode="sim3"`` estimates a full similarity (monocular gauge freedom);
    ``mode="se3"`` fixes scale to 1.  Frames are associated by id.
    """
    if mode not in ("sim3", "se3"):
        raise ValueError(f"mode must be 'sim3' or 'se3', got {mode!r}")
    common = sorted(set(est.frame_ids) & set(gt.frame_ids))
    if len(common) < 3:
        raise TooFewCommonFrames(f"only {len(common)} shared frame ids")
    est_idx = {fid: k for k, fid in enumerate(est.frame_ids)}
    gt_idx = {fid: k for k, fid in enumerate(gt.frame_ids)}
    p_est = est.positions[[est_idx[f] for f in common]]
    p_gt = gt.positions[[gt_idx[f] for f in common]]
    aligned = _align_positions(p_est, p_gt, with_scale=(mode == "sim3"))
    return float(np.sqrt(np.mean(np.sum((aligned - p_gt) ** 2, axis=1))))


def cloud_metrics(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """Accuracy (pred->gt), completeness (gt->pred), and their mean.

    Nearest neighbors come from an exact KD-tree query; distances are
    recomputed in numpy so they match a brute-force oracle bit for bit.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloud(f"pred has {len(pred)} points, gt has {len(gt)}")

    _, idx = cKDTree(gt).query(pred, k=1)
    accuracy = float(np.mean(np.linalg.norm(pred - gt[idx], axis=1)))
    _, idx = cKDTree(pred).query(gt, k=1)
    completeness = float(np.mean(np.linalg.norm(gt - pred[idx], axis=1)))
    return {
        "accuracy": accuracy,
        "completeness": completeness,
        "chamfer": (accuracy + completeness) / 2.0,
    }
