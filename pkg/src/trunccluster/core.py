"""Numeric types, counted Euclidean distance kernels and k-smallest selection."""

from __future__ import annotations

import enum
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable

import numpy as np

SIGMA_SQ_FLOOR = 1e-8

# rows per chunk in the dense kernels; bounds the (rows, C, D) temporary
_DENSE_CHUNK_ELEMS = 1 << 22


class InvalidArgument(ValueError):
    """Raised when an argument violates a documented precondition."""


class InvalidState(RuntimeError):
    """Raised when an internal structural invariant is broken."""


class DistanceKind(str, enum.Enum):
    DATA_CLUSTER = "data_cluster"
    CLUSTER_CLUSTER = "cluster_cluster"


class Dataset:
    """N points in D dimensions. The point matrix is copied and frozen."""

    def __init__(self, points):
        arr = np.array(points, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise InvalidArgument(f"points must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgument(f"need N >= 1 and D >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("points contain non-finite values")
        arr.setflags(write=False)
        self._points = arr

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n_points(self) -> int:
        return self._points.shape[0]

    @property
    def dims(self) -> int:
        return self._points.shape[1]

    def __len__(self) -> int:
        return self.n_points

    def __repr__(self) -> str:
        return f"Dataset(n_points={self.n_points}, dims={self.dims})"


@dataclass
class ModelParams:
    """Cluster means (C x D) and one shared isotropic variance."""

    means: np.ndarray
    sigma_sq: float

    def __post_init__(self):
        self.means = np.array(self.means, dtype=np.float64, copy=True)
        if self.means.ndim != 2 or self.means.shape[0] < 1:
            raise InvalidArgument(f"means must be C x D with C >= 1, got {self.means.shape}")
        if not np.all(np.isfinite(self.means)):
            raise InvalidArgument("means contain non-finite values")
        self.sigma_sq = float(self.sigma_sq)
        if not (self.sigma_sq > 0 and math.isfinite(self.sigma_sq)):
            raise InvalidArgument(f"sigma_sq must be positive and finite, got {self.sigma_sq}")

    @property
    def n_clusters(self) -> int:
        return self.means.shape[0]

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.means, self.sigma_sq)


class DistanceCounter:
    """Thread-safe tally of distance-kernel calls, split by kind."""

    def __init__(self):
        self._lock = threading.Lock()
        self.data_to_cluster = 0
        self.cluster_to_cluster = 0

    def add(self, kind: DistanceKind, count: int = 1) -> None:
        count = int(count)
        if count < 0:
            raise InvalidArgument("counter increments must be non-negative")
        with self._lock:
            if DistanceKind(kind) is DistanceKind.DATA_CLUSTER:
                self.data_to_cluster += count
            else:
                self.cluster_to_cluster += count

    def reset(self) -> None:
        with self._lock:
            self.data_to_cluster = 0
            self.cluster_to_cluster = 0

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.data_to_cluster, self.cluster_to_cluster

    def __repr__(self) -> str:
        return (f"DistanceCounter(data_to_cluster={self.data_to_cluster}, "
                f"cluster_to_cluster={self.cluster_to_cluster})")


def euclidean_distance(a, b, counter: DistanceCounter,
                       kind: DistanceKind = DistanceKind.DATA_CLUSTER) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    counter.add(kind, 1)
    return float(np.sqrt((diff * diff).sum()))


def run_chunks(n: int, chunk: int, fn: Callable[[int, int], object], threads: int = 1) -> list:
    """Apply ``fn(start, stop)`` over consecutive ranges of ``range(n)``.

    Results come back in range order regardless of ``threads``, so callers
    that concatenate them get the same bytes in serial and threaded mode.
    """
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, max(chunk, 1))]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda se: fn(*se), bounds))


def paired_distances(points: np.ndarray, means: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                     counter: DistanceCounter, kind: DistanceKind = DistanceKind.DATA_CLUSTER,
                     threads: int = 1) -> np.ndarray:
    """Distances ``||points[rows[i]] - means[cols[i]]||`` for every listed pair."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    m = rows.shape[0]
    chunk = max(1, _DENSE_CHUNK_ELEMS // max(points.shape[1], 1))

    def work(s, e):
        diff = points[rows[s:e]] - means[cols[s:e]]
        return np.sqrt((diff * diff).sum(axis=-1))

    parts = run_chunks(m, chunk, work, threads)
    counter.add(kind, m)
    return np.concatenate(parts) if parts else np.empty(0)


def all_distances(points: np.ndarray, means: np.ndarray, counter: DistanceCounter,
                  kind: DistanceKind = DistanceKind.DATA_CLUSTER, threads: int = 1) -> np.ndarray:
    """Dense (rows x C) distance matrix with the same arithmetic as ``paired_distances``."""
    n, dims = points.shape
    c = means.shape[0]
    chunk = max(1, _DENSE_CHUNK_ELEMS // max(c * dims, 1))

    def work(s, e):
        diff = points[s:e, None, :] - means[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))

    out = np.concatenate(run_chunks(n, chunk, work, threads)) if n else np.empty((0, c))
    counter.add(kind, n * c)
    return out


def nearest_distances(points: np.ndarray, means: np.ndarray, counter: DistanceCounter,
                      kind: DistanceKind = DistanceKind.DATA_CLUSTER, threads: int = 1
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Index of (smaller id on ties) and distance to the nearest mean.

    Same arithmetic and count as ``all_distances`` followed by a row argmin,
    without holding the full rows x C matrix.
    """
    n, dims = points.shape
    c = means.shape[0]
    chunk = max(1, _DENSE_CHUNK_ELEMS // max(c * dims, 1))

    def work(s, e):
        diff = points[s:e, None, :] - means[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=-1))
        j = np.argmin(d, axis=1)
        return j, d[np.arange(e - s), j]

    parts = run_chunks(n, chunk, work, threads)
    counter.add(kind, n * c)
    if not parts:
        return np.empty(0, dtype=np.intp), np.empty(0)
    return (np.concatenate([p[0] for p in parts]).astype(np.intp),
            np.concatenate([p[1] for p in parts]))


def nearest_sq_distances(points: np.ndarray, means: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest mean, for every point.

    Candidates come from the expanded inner-product form (BLAS); the reported
    squared distance is then recomputed directly for the chosen mean. Not
    counted: this serves evaluation metrics only.
    """
    n = points.shape[0]
    c = means.shape[0]
    mnorm = (means * means).sum(axis=1)
    chunk = max(1, _DENSE_CHUNK_ELEMS // max(c, 1))
    idx = np.empty(n, dtype=np.intp)
    for s in range(0, n, chunk):
        block = points[s:s + chunk]
        score = mnorm[None, :] - 2.0 * (block @ means.T)
        idx[s:s + chunk] = np.argmin(score, axis=1)
    diff = points - means[idx]
    return idx, (diff * diff).sum(axis=1)


# -- selection -----------------------------------------------------------------

def _median_of_medians(items: list) -> object:
    if len(items) <= 5:
        return sorted(items)[len(items) // 2]
    medians = [sorted(items[i:i + 5])[len(items[i:i + 5]) // 2] for i in range(0, len(items), 5)]
    return _median_of_medians(medians)


def _quickselect_prefix(items: list, k: int) -> list:
    """Return the k smallest elements of ``items`` (unordered).

    Deterministic median-of-three pivoting; after 2*log2(n) rounds without
    finishing, pivots switch to median-of-medians for the linear worst case.
    """
    chosen: list = []
    budget = 2 * max(1, len(items)).bit_length()
    while k > 0 and items:
        if k >= len(items):
            chosen.extend(items)
            break
        if budget > 0:
            budget -= 1
            trio = sorted((items[0], items[len(items) // 2], items[-1]))
            pivot = trio[1]
        else:
            pivot = _median_of_medians(items)
        lo = [x for x in items if x < pivot]
        eq = [x for x in items if x == pivot]
        if k <= len(lo):
            items = lo
        elif k <= len(lo) + len(eq):
            chosen.extend(lo)
            chosen.extend(eq[:k - len(lo)])
            break
        else:
            chosen.extend(lo)
            chosen.extend(eq)
            k -= len(lo) + len(eq)
            items = [x for x in items if x > pivot]
    return chosen


def select_k_smallest(values: Iterable[tuple[Hashable, float]], k: int) -> set:
    """Keys of the k smallest distances, ties going to the smaller key."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    items = [(float(d), key) for key, d in values]
    if any(math.isnan(d) for d, _ in items):
        raise InvalidArgument("distances must not be NaN")
    return {key for _, key in _quickselect_prefix(items, k)}


def smallest_k_mask(values: np.ndarray, k: int) -> np.ndarray:
    """Row-wise boolean mask of the k smallest entries of a 2-D array.

    Ties are broken by column position (smaller column wins), so callers whose
    columns are sorted by cluster id get the smallest-id tie rule. Each row
    needs at least k entries; +inf entries are only taken if unavoidable.
    """
    values = np.asarray(values, dtype=np.float64)
    rows, width = values.shape
    if k >= width:
        return np.ones_like(values, dtype=bool)
    if k <= 0:
        return np.zeros_like(values, dtype=bool)
    kth = np.partition(values, k - 1, axis=1)[:, k - 1:k]
    less = values < kth
    tied = values == kth
    need = k - less.sum(axis=1)
    mask = less | tied
    ambiguous = np.nonzero(tied.sum(axis=1) > need)[0]
    if ambiguous.size:
        # keep only the first `need` tied columns in those rows
        tied_rank = np.cumsum(tied[ambiguous], axis=1)
        mask[ambiguous] = less[ambiguous] | (tied[ambiguous] & (tied_rank <= need[ambiguous, None]))
    return mask


def take_selected(mask: np.ndarray, *arrays: np.ndarray, k: int) -> list[np.ndarray]:
    """Gather the masked entries of each array into (rows, k), preserving column order."""
    return [a[mask].reshape(mask.shape[0], k) for a in arrays]


def sorted_unique_rows(ids: np.ndarray, pad: int = -1) -> np.ndarray:
    """Sort each row and replace repeated ids by ``pad``."""
    out = np.sort(ids, axis=1)
    if out.shape[1] > 1:
        dup = np.zeros_like(out, dtype=bool)
        dup[:, 1:] = out[:, 1:] == out[:, :-1]
        out[dup] = pad
    return out
