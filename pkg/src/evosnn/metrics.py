"""Exact two-objective hypervolume and Spearman rank correlation."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata


class HypervolumeError(ValueError):
    """A point lies beyond the hypervolume reference point."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    return pts


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of points not dominated by any other (minimisation).

    Duplicates of a non-dominated point are all kept.
    """
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=bool)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    mask = np.zeros(n, dtype=bool)
    best_f2 = np.inf
    prev = None
    for i in order:
        f1, f2 = pts[i]
        if prev is not None and f1 == prev[0] and f2 == prev[1]:
            mask[i] = mask[prev[2]]
        elif f2 < best_f2:
            mask[i] = True
            best_f2 = f2
        prev = (f1, f2, i)
    return mask


def hypervolume_2d(points, ref: Sequence[float]) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (both objectives minimised).

    Raises:
        HypervolumeError: if any point exceeds ``ref`` in either coordinate.
    """
    pts = _as_points(points)
    r1, r2 = float(ref[0]), float(ref[1])
    if not (np.isfinite(r1) and np.isfinite(r2)):
        raise ValueError("reference point must be finite")
    if len(pts) == 0:
        return 0.0
    bad = np.flatnonzero((pts[:, 0] > r1) | (pts[:, 1] > r2))
    if len(bad):
        raise HypervolumeError(f"point {pts[bad[0]].tolist()} exceeds reference ({r1}, {r2})")
    front = np.unique(pts[nondominated_mask(pts)], axis=0)  # sorted by f1 ascending
    nxt = np.append(front[1:, 0], r1)
    return float(np.sum((nxt - front[:, 0]) * (r2 - front[:, 1])))


class SpearmanResult(NamedTuple):
    rho: float
    undefined: bool


def spearman(xs, ys) -> SpearmanResult:
    """Pearson correlation of average ranks.

    Returns ``rho = 0`` with ``undefined=True`` when either ranking is constant.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-D sequences of equal length")
    if len(x) < 3:
        raise ValueError("spearman needs at least 3 pairs")
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    sxx = float(np.dot(rx, rx))
    syy = float(np.dot(ry, ry))
    if sxx == 0.0 or syy == 0.0:
        return SpearmanResult(0.0, True)
    # one square root keeps identical rankings at exactly +-1
    rho = float(np.dot(rx, ry)) / float(np.sqrt(sxx * syy))
    return SpearmanResult(min(1.0, max(-1.0, rho)), False)
