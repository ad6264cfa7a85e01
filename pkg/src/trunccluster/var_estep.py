"""Partial truncated E-steps with exhaustive or estimated cluster neighborhoods.

Per-point state is kept in fixed-width integer arrays: truncation sets are
(N, C') with ids ascending per row, search spaces are (N, W) with ids
ascending and ``-1`` marking removed duplicates. Sorting rows by id makes the
column order coincide with the smallest-id tie rule used by every selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    DistanceCounter,
    DistanceKind,
    InvalidArgument,
    InvalidState,
    ModelParams,
    all_distances,
    paired_distances,
    smallest_k_mask,
    sorted_unique_rows,
)
from .gmm_em import Responsibilities, softmax_neg_sq


@dataclass
class TruncationState:
    sets: np.ndarray   # (N, C') cluster ids, ascending per row
    dists: np.ndarray  # (N, C') distances d_c(n) matching ``sets``

    @property
    def c_prime(self) -> int:
        return self.sets.shape[1]

    @property
    def n_points(self) -> int:
        return self.sets.shape[0]

    def copy(self) -> "TruncationState":
        return TruncationState(self.sets.copy(), self.dists.copy())


@dataclass
class NeighborIndex:
    members: np.ndarray  # (C, G) ids, ascending per row, row c contains c
    estimated: bool = False

    @property
    def n_clusters(self) -> int:
        return self.members.shape[0]

    @property
    def g(self) -> int:
        return self.members.shape[1]

    def validate(self) -> None:
        c = self.n_clusters
        if self.members.min() < 0 or self.members.max() >= c:
            raise InvalidState("neighborhood contains an invalid cluster id")
        if not np.all((self.members == np.arange(c)[:, None]).any(axis=1)):
            raise InvalidState("a cluster is missing from its own neighborhood")
        srt = np.sort(self.members, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise InvalidState("neighborhood has repeated members")


@dataclass
class SearchSpace:
    ids: np.ndarray    # (N, W) ascending ids, -1 = empty slot
    dists: np.ndarray  # (N, W) distances, +inf at empty slots

    @property
    def valid(self) -> np.ndarray:
        return self.ids >= 0

    def sizes(self) -> np.ndarray:
        return self.valid.sum(axis=1)

    def members(self, n: int) -> set[int]:
        row = self.ids[n]
        return {int(c) for c in row[row >= 0]}


@dataclass
class AssignmentIndex:
    """Closest-cluster assignment and the sparse cluster-to-cluster estimates.

    ``pair_keys`` encodes (c, c~) as ``c * C + c~`` and is sorted; ``sums`` and
    ``counts`` are the accumulators before normalization, ``estimates`` after.
    """

    owner: np.ndarray
    n_clusters: int
    pair_keys: np.ndarray
    sums: np.ndarray
    counts: np.ndarray

    @property
    def estimates(self) -> np.ndarray:
        return self.sums / self.counts

    def members_of(self, c: int) -> np.ndarray:
        return np.nonzero(self.owner == c)[0]

    def estimate(self, c: int, other: int) -> float:
        key = c * self.n_clusters + other
        i = np.searchsorted(self.pair_keys, key)
        if i < self.pair_keys.size and self.pair_keys[i] == key:
            return float(self.sums[i] / self.counts[i])
        return float("inf")


def check_ordering(c: int, c_prime: int, g: int) -> None:
    if not (1 <= c_prime <= g <= c):
        raise InvalidArgument(f"need 1 <= C' <= G <= C, got C'={c_prime}, G={g}, C={c}")


def _distinct_uniform(rng: np.random.Generator, rows: int, k: int, high: int) -> np.ndarray:
    """``rows`` independent draws of k distinct ints from [0, high), each row sorted."""
    if k == 0:
        return np.empty((rows, 0), dtype=np.intp)
    if 2 * k > high:
        keys = rng.random((rows, high))
        return np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1).astype(np.intp)
    out = rng.integers(0, high, size=(rows, k))
    while True:
        srt = np.sort(out, axis=1)
        bad = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
        if bad.size == 0:
            return srt.astype(np.intp)
        out = srt
        out[bad] = rng.integers(0, high, size=(bad.size, k))


def _draw_outside(rng: np.random.Generator, fixed: np.ndarray, k: int, high: int) -> np.ndarray:
    """Per row, k distinct ints from [0, high) that avoid the (sorted) ``fixed`` ids."""
    vals = _distinct_uniform(rng, fixed.shape[0], k, high - fixed.shape[1])
    # map rank v of the complement to its id: skip every fixed id <= v
    for j in range(fixed.shape[1]):
        vals = vals + (vals >= fixed[:, j:j + 1])
    return vals


def random_neighbors(c: int, g: int, rng: np.random.Generator) -> NeighborIndex:
    """Each G_c is c plus G-1 distinct uniformly drawn other clusters."""
    own = np.arange(c)[:, None]
    others = _draw_outside(rng, own, g - 1, c)
    members = np.sort(np.concatenate([own, others], axis=1), axis=1)
    return NeighborIndex(members.astype(np.intp), estimated=False)


def init_search_space(trunc_sets: np.ndarray, c: int, g: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Independent random first-iteration search space per point.

    Row n holds K(n) plus uniformly drawn distinct clusters up to
    min(C, C'G) members, ascending. The estimated-neighborhood variants use it
    in place of the union of G_c for their first E-step, so that the first
    neighborhood estimate sees many more cluster pairs than C shared random
    neighborhoods would offer.
    """
    n, c_prime = trunc_sets.shape
    width = min(c, c_prime * g)
    fixed = np.sort(trunc_sets, axis=1)
    extra = _draw_outside(rng, fixed, width - c_prime, c)
    return np.sort(np.concatenate([fixed, extra], axis=1), axis=1).astype(np.intp)


def init_truncation(n_points: int, c: int, c_prime: int, g: int,
                    rng_seed) -> tuple[np.ndarray, NeighborIndex]:
    """Random truncation sets K(n) and neighborhoods G_c.

    Returns the (N, C') id array (distances are not known yet) and the
    neighbor index. ``rng_seed`` may be an int, a SeedSequence or a Generator.
    """
    check_ordering(c, c_prime, g)
    rng = np.random.default_rng(rng_seed)
    sets = _distinct_uniform(rng, n_points, c_prime, c)
    return sets, random_neighbors(c, g, rng)


def exhaustive_neighbors(params: ModelParams, g: int, counter: DistanceCounter,
                         threads: int = 1) -> NeighborIndex:
    c = params.n_clusters
    if not 1 <= g <= c:
        raise InvalidArgument(f"need 1 <= G <= C, got G={g}, C={c}")
    d = all_distances(params.means, params.means, counter, DistanceKind.CLUSTER_CLUSTER, threads)
    # self-distance is exactly 0; force it below every other entry so that
    # coincident means cannot push c out of its own neighborhood
    d[np.arange(c), np.arange(c)] = -1.0
    mask = smallest_k_mask(d, g)
    members = np.broadcast_to(np.arange(c), (c, c))[mask].reshape(c, g)
    return NeighborIndex(members.astype(np.intp), estimated=False)


def _draw_explorers(ids: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform cluster per row from outside that row's ids; -1 if none is left."""
    n = ids.shape[0]
    size = (ids >= 0).sum(axis=1)
    out = np.full(n, -1, dtype=np.intp)
    todo = np.nonzero(size < c)[0]
    while todo.size:
        draw = rng.integers(0, c, size=todo.size)
        clash = (ids[todo] == draw[:, None]).any(axis=1)
        out[todo[~clash]] = draw[~clash]
        todo = todo[clash]
    return out


def update_truncation(data: Dataset, params: ModelParams, trunc_sets: np.ndarray,
                      nbrs: NeighborIndex, explore: bool, rng: np.random.Generator | None,
                      counter: DistanceCounter, threads: int = 1
                      ) -> tuple[TruncationState, SearchSpace]:
    """Search G(n) = union of G_c over c in K(n) and keep the C' closest.

    Only distances to distinct members of G(n) are evaluated and counted.
    Because K(n) is a subset of G(n), no selected distance can get worse.
    """
    if isinstance(trunc_sets, TruncationState):
        trunc_sets = trunc_sets.sets
    n, c_prime = trunc_sets.shape
    if nbrs.n_clusters != params.n_clusters:
        raise InvalidArgument(
            f"neighbor index has {nbrs.n_clusters} clusters, model has {params.n_clusters}")
    cand = nbrs.members[trunc_sets].reshape(n, c_prime * nbrs.g)
    return search_truncation(data, params, trunc_sets, cand, explore, rng, counter, threads)


def search_truncation(data: Dataset, params: ModelParams, trunc_sets: np.ndarray,
                      candidates: np.ndarray, explore: bool, rng: np.random.Generator | None,
                      counter: DistanceCounter, threads: int = 1
                      ) -> tuple[TruncationState, SearchSpace]:
    """Evaluate the distinct ``candidates`` of each row (plus an explorer) and
    keep the C' closest as the new K(n)."""
    n, c_prime = trunc_sets.shape
    c = params.n_clusters
    ids = sorted_unique_rows(np.asarray(candidates, dtype=np.intp))
    if explore:
        if rng is None:
            raise InvalidArgument("exploration requires a random generator")
        extra = _draw_explorers(ids, c, rng)
        ids = np.sort(np.concatenate([ids, extra[:, None]], axis=1), axis=1)
    # sorting moved the -1 padding to the front; push it to the back
    ids = _compact_rows(ids)

    if not np.all((ids[:, :, None] == trunc_sets[:, None, :]).any(axis=1)):
        raise InvalidState("K(n) is not contained in the search space G(n)")

    valid = ids >= 0
    rows, cols = np.nonzero(valid)
    dists = np.full(ids.shape, np.inf)
    dists[rows, cols] = paired_distances(data.points, params.means, rows, ids[rows, cols],
                                         counter, threads=threads)
    mask = smallest_k_mask(dists, c_prime)
    new_sets = ids[mask].reshape(n, c_prime)
    new_dists = dists[mask].reshape(n, c_prime)
    return TruncationState(new_sets, new_dists), SearchSpace(ids, dists)


def _compact_rows(ids: np.ndarray) -> np.ndarray:
    """Move -1 entries to the end of each row, keeping valid ids in order."""
    invalid = ids < 0
    if not invalid.any():
        return ids
    order = np.argsort(invalid, axis=1, kind="stable")
    out = np.take_along_axis(ids, order, axis=1)
    width = int((~invalid).sum(axis=1).max())
    return out[:, :width]


def closest_in_search_space(search: SearchSpace) -> np.ndarray:
    """c_o(n): argmin of d_c(n) over G(n), smaller id on ties."""
    j = np.argmin(search.dists, axis=1)
    return search.ids[np.arange(search.ids.shape[0]), j]


def estimate_neighbors(search: SearchSpace, trunc: TruncationState | None, c: int, g: int,
                       previous: NeighborIndex | None = None,
                       rng: np.random.Generator | None = None
                       ) -> tuple[NeighborIndex, AssignmentIndex]:
    """Rebuild every G_c from data-to-cluster distances of the current E-step.

    The distance between c and c~ is estimated as the mean of d_c~(n) over the
    points n whose closest searched cluster is c and whose G(n) contains c~.
    Pairs never observed together count as infinitely far. No distance kernel
    is called.
    """
    if not 1 <= g <= c:
        raise InvalidArgument(f"need 1 <= G <= C, got G={g}, C={c}")
    owner = closest_in_search_space(search)
    valid = search.valid
    rows, cols = np.nonzero(valid)
    keys = owner[rows].astype(np.int64) * c + search.ids[rows, cols]
    pair_keys, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse, weights=search.dists[rows, cols], minlength=pair_keys.size)
    counts = np.bincount(inverse, minlength=pair_keys.size)
    assign = AssignmentIndex(owner, c, pair_keys, sums, counts)

    row_c = pair_keys // c
    col_c = pair_keys % c
    est = sums / counts
    # d_cc = 0, and c itself is always the first pick of its own row
    self_rows = np.arange(c)
    row_all = np.concatenate([row_c, self_rows])
    col_all = np.concatenate([col_c, self_rows])
    est_all = np.concatenate([np.where(row_c == col_c, np.inf, est), np.full(c, -np.inf)])
    order = np.lexsort((col_all, est_all, row_all))
    row_s, col_s, est_s = row_all[order], col_all[order], est_all[order]
    starts = np.searchsorted(row_s, self_rows)
    rank = np.arange(row_s.size) - starts[row_s]
    keep = (rank < g) & np.isfinite(est_s) | (est_s == -np.inf)
    row_k, col_k = row_s[keep], col_s[keep]
    have = np.bincount(row_k, minlength=c)

    members = np.empty((c, g), dtype=np.intp)
    full = have == g
    members[full] = col_k[np.isin(row_k, np.nonzero(full)[0])].reshape(-1, g)
    short = np.nonzero(~full)[0]
    if short.size:
        if rng is None:
            rng = np.random.default_rng(0)
        offsets = np.concatenate([[0], np.cumsum(have)])
        for cc in short:
            chosen = list(col_k[offsets[cc]:offsets[cc + 1]])
            members[cc] = _fill_neighborhood(cc, chosen, g, c, previous, rng)
    members.sort(axis=1)
    return NeighborIndex(members, estimated=True), assign


def _fill_neighborhood(c_id: int, chosen: list, g: int, c: int,
                       previous: NeighborIndex | None, rng: np.random.Generator) -> np.ndarray:
    """Pad a short neighborhood: previous members first, then random distinct ids."""
    taken = set(int(x) for x in chosen)
    out = [int(x) for x in chosen]
    if previous is not None:
        for m in previous.members[c_id]:
            if len(out) == g:
                break
            if int(m) not in taken:
                out.append(int(m))
                taken.add(int(m))
    while len(out) < g:
        m = int(rng.integers(0, c))
        if m not in taken:
            out.append(m)
            taken.add(m)
    return np.array(out, dtype=np.intp)


def truncated_responsibilities(trunc: TruncationState, sigma_sq: float) -> Responsibilities:
    """Softmax of -d^2/(2 sigma^2) restricted to each K(n)."""
    if trunc.dists is None or not np.all(np.isfinite(trunc.dists)):
        raise InvalidState("truncation state lacks cached distances")
    return Responsibilities(trunc.sets.copy(), softmax_neg_sq(trunc.dists, sigma_sq))
