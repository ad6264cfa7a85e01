"""D^2-weighted (k-means++ style) seeding of cluster means."""

from __future__ import annotations

import numpy as np

from .core import Dataset, DistanceCounter, DistanceKind, InvalidArgument


def dsq_draw(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index with probability proportional to ``weights``.

    Falls back to a uniform draw over all indices when every weight is zero.
    """
    total = weights.sum()
    if total <= 0:
        return int(rng.integers(0, weights.size))
    cdf = np.cumsum(weights)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), weights.size - 1))


def _sq_to(y: np.ndarray, i: int, counter: DistanceCounter) -> np.ndarray:
    diff = y - y[i]
    counter.add(DistanceKind.DATA_CLUSTER, y.shape[0])
    return (diff * diff).sum(axis=1)


def seed_indices_dsq(data: Dataset, c: int, rng_seed, counter: DistanceCounter | None = None) -> np.ndarray:
    """Row indices of the C seeded means, in draw order."""
    n = data.n_points
    if not 1 <= c <= n:
        raise InvalidArgument(f"need 1 <= C <= N, got C={c}, N={n}")
    counter = counter if counter is not None else DistanceCounter()
    rng = np.random.default_rng(rng_seed)
    y = data.points
    chosen = np.empty(c, dtype=np.intp)
    picked = np.zeros(n, dtype=bool)
    chosen[0] = rng.integers(0, n)
    picked[chosen[0]] = True
    residual = _sq_to(y, chosen[0], counter)
    for i in range(1, c):
        w = np.where(picked, 0.0, residual)
        if w.sum() <= 0:
            # only duplicates of chosen points remain
            free = np.nonzero(~picked)[0]
            nxt = int(free[rng.integers(0, free.size)])
        else:
            nxt = dsq_draw(w, rng)
        chosen[i] = nxt
        picked[nxt] = True
        np.minimum(residual, _sq_to(y, nxt, counter), out=residual)
    return chosen


def seed_means_dsq(data: Dataset, c: int, rng_seed, counter: DistanceCounter | None = None) -> np.ndarray:
    """C x D means drawn from the data with D^2 weighting; deterministic per seed."""
    return data.points[seed_indices_dsq(data, c, rng_seed, counter)].copy()


def seed_means_uniform(data: Dataset, c: int, rng_seed) -> np.ndarray:
    """C distinct data points drawn uniformly (reference baseline)."""
    if not 1 <= c <= data.n_points:
        raise InvalidArgument(f"need 1 <= C <= N, got C={c}, N={data.n_points}")
    rng = np.random.default_rng(rng_seed)
    return data.points[rng.choice(data.n_points, size=c, replace=False)].copy()
