"""Chamfer distance and F-score between point sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

CD_SCALE = 1e3


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    cd_scaled: float
    f1: float
    tau: float
    n_pred: int
    n_gt: int
    cd_convention: str = "mean squared NN distance, both directions summed, x1e3"

    def as_dict(self) -> dict:
        return asdict(self)


def _check(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or len(A) == 0 or len(B) == 0:
        raise MetricsError("point clouds must be non-empty (N, D) arrays")
    if A.shape[1] != B.shape[1]:
        raise MetricsError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _dist(a, B):
    # one formula shared by the brute-force and tree paths so results agree exactly
    d = B - a
    return np.sqrt(np.sum(d * d, axis=-1))


def nearest_distances_brute(A, B) -> np.ndarray:
    """Exact distance from each point of A to its nearest point of B, by exhaustive search."""
    A, B = _check(A, B)
    return np.array([_dist(a, B).min() for a in A])


def nearest_distances(A, B, k: int = 8) -> np.ndarray:
    """kd-tree candidate search, then exact re-evaluation of the candidates."""
    A, B = _check(A, B)
    k = min(k, len(B))
    tree = cKDTree(B)
    _, idx = tree.query(A, k=k)
    idx = np.asarray(idx).reshape(len(A), k)
    cand = B[idx]
    d = cand - A[:, None, :]
    return np.sqrt(np.sum(d * d, axis=-1)).min(axis=1)


def chamfer(pred, gt, scaled: bool = True) -> float:
    d_pg = nearest_distances(pred, gt)
    d_gp = nearest_distances(gt, pred)
    cd = float(np.mean(d_pg ** 2) + np.mean(d_gp ** 2))
    return cd * CD_SCALE if scaled else cd


def fscore(pred, gt, tau: float = 0.01) -> float:
    if tau <= 0:
        raise MetricsError("tau must be positive")
    precision = float(np.mean(nearest_distances(pred, gt) <= tau))
    recall = float(np.mean(nearest_distances(gt, pred) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate_pair(pred, gt, tau: float = 0.01) -> MetricsReport:
    pred, gt = _check(pred, gt)
    return MetricsReport(chamfer(pred, gt), fscore(pred, gt, tau), tau, len(pred), len(gt))


def evaluate_batch(preds, gts, tau: float = 0.01) -> list:
    return [evaluate_pair(p, g, tau) for p, g in zip(preds, gts)]


def summarize(reports: list) -> dict:
    cd = np.array([r.cd_scaled for r in reports])
    f1 = np.array([r.f1 for r in reports])
    return {"cd_mean": float(cd.mean()), "f1_mean": float(f1.mean()), "n": len(reports)}
