"""EM for the isotropic, equally weighted GMM and its truncated free energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import (
    SIGMA_SQ_FLOOR,
    Dataset,
    DistanceCounter,
    InvalidArgument,
    InvalidState,
    ModelParams,
    all_distances,
    nearest_sq_distances,
    paired_distances,
)


@dataclass
class Responsibilities:
    """Sparse responsibilities: ``weights[n, j]`` belongs to cluster ``ids[n, j]``."""

    ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.intp)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.ids.shape != self.weights.shape or self.ids.ndim != 2:
            raise InvalidArgument("ids and weights must share one (N, K) shape")

    @property
    def n_points(self) -> int:
        return self.ids.shape[0]

    def dense(self, n_clusters: int) -> np.ndarray:
        out = np.zeros((self.n_points, n_clusters))
        np.add.at(out, (np.arange(self.n_points)[:, None], self.ids), self.weights)
        return out


def log_joint_const(n_clusters: int, dims: int, sigma_sq: float) -> float:
    """log of (1/C) (2 pi sigma^2)^(-D/2), the cluster-independent part of p(c, y)."""
    return -np.log(n_clusters) - 0.5 * dims * np.log(2.0 * np.pi * sigma_sq)


def softmax_neg_sq(dists: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Row softmax of -d^2 / (2 sigma^2), max-shifted."""
    logits = -0.5 * (dists * dists) / sigma_sq
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def full_estep(data: Dataset, params: ModelParams, counter: DistanceCounter,
               threads: int = 1) -> Responsibilities:
    c = params.n_clusters
    dists = all_distances(data.points, params.means, counter, threads=threads)
    ids = np.broadcast_to(np.arange(c), dists.shape).copy()
    return Responsibilities(ids, softmax_neg_sq(dists, params.sigma_sq))


def mstep(data: Dataset, resp: Responsibilities, params: ModelParams) -> ModelParams:
    """Weighted means and shared variance from (possibly sparse) responsibilities.

    Clusters with zero total mass keep their previous mean; the variance is
    floored at ``SIGMA_SQ_FLOOR``.
    """
    y = data.points
    n, dims = y.shape
    c = params.n_clusters
    if resp.n_points != n:
        raise InvalidArgument(f"responsibilities cover {resp.n_points} points, data has {n}")
    ids = resp.ids.ravel()
    w = resp.weights.ravel()
    point = np.repeat(np.arange(n), resp.ids.shape[1])

    mass = np.bincount(ids, weights=w, minlength=c)
    sums = np.empty((c, dims))
    for d in range(dims):
        sums[:, d] = np.bincount(ids, weights=w * y[point, d], minlength=c)
    means = params.means.copy()
    alive = mass > 0
    means[alive] = sums[alive] / mass[alive, None]

    diff = y[point] - means[ids]
    sigma_sq = float((w * (diff * diff).sum(axis=1)).sum()) / (dims * n)
    return ModelParams(means, max(sigma_sq, SIGMA_SQ_FLOOR))


def log_likelihood(data: Dataset, params: ModelParams, counter: DistanceCounter | None = None,
                   threads: int = 1) -> float:
    counter = counter if counter is not None else DistanceCounter()
    dists = all_distances(data.points, params.means, counter, threads=threads)
    c, dims = params.n_clusters, data.dims
    per_point = logsumexp(-0.5 * dists * dists / params.sigma_sq, axis=1)
    return float(per_point.sum() + data.n_points * log_joint_const(c, dims, params.sigma_sq))


def free_energy_from_dists(dists: np.ndarray, n_clusters: int, dims: int, sigma_sq: float) -> float:
    """Truncated free energy given each point's distances to its K(n) members."""
    per_point = logsumexp(-0.5 * dists * dists / sigma_sq, axis=1)
    return float(per_point.sum() + dists.shape[0] * log_joint_const(n_clusters, dims, sigma_sq))


def truncated_free_energy(data: Dataset, trunc_sets, params: ModelParams,
                          counter: DistanceCounter | None = None) -> float:
    """sum_n log sum_{c in K(n)} p(c, y(n) | params).

    ``trunc_sets`` is an (N, C') integer array or a length-N sequence of
    non-empty id collections (sizes may differ).
    """
    counter = counter if counter is not None else DistanceCounter()
    n, c = data.n_points, params.n_clusters
    if isinstance(trunc_sets, np.ndarray) and trunc_sets.ndim == 2:
        if trunc_sets.shape[1] == 0:
            raise InvalidState("empty truncation set for point 0")
        lengths = np.full(trunc_sets.shape[0], trunc_sets.shape[1])
        cols = trunc_sets.astype(np.intp).ravel()
    else:
        sets = [np.atleast_1d(np.asarray(list(s), dtype=np.intp)) for s in trunc_sets]
        lengths = np.array([len(s) for s in sets])
        if np.any(lengths == 0):
            raise InvalidState(f"empty truncation set for point {int(np.argmin(lengths))}")
        cols = np.concatenate(sets)
    if lengths.shape[0] != n:
        raise InvalidArgument(f"got {lengths.shape[0]} truncation sets for {n} points")
    if cols.min() < 0 or cols.max() >= c:
        raise InvalidArgument("truncation set contains an invalid cluster id")
    rows = np.repeat(np.arange(n), lengths)
    d = paired_distances(data.points, params.means, rows, cols, counter)
    logits = -0.5 * d * d / params.sigma_sq
    # segmented log-sum-exp over each point's members
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    peak = np.maximum.reduceat(logits, starts)
    mass = np.add.reduceat(np.exp(logits - peak[rows]), starts)
    per_point = peak + np.log(mass)
    return float(per_point.sum() + n * log_joint_const(c, data.dims, params.sigma_sq))


def init_sigma_sq(data: Dataset, means: np.ndarray) -> float:
    """Mean squared distance to the nearest seeded mean, divided by D (floored)."""
    _, sq = nearest_sq_distances(data.points, np.asarray(means, dtype=np.float64))
    return max(float(sq.mean()) / data.dims, SIGMA_SQ_FLOOR)
