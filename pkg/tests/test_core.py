import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trunccluster.core import (
    Dataset,
    DistanceCounter,
    DistanceKind,
    InvalidArgument,
    ModelParams,
    all_distances,
    euclidean_distance,
    nearest_distances,
    nearest_sq_distances,
    paired_distances,
    run_chunks,
    select_k_smallest,
    smallest_k_mask,
    sorted_unique_rows,
)


def sort_oracle(values, k):
    """Full sort by (distance, key); first k keys."""
    return {key for key, _ in sorted(values, key=lambda kv: (kv[1], kv[0]))[:k]}


# -- types ---------------------------------------------------------------------

def test_dataset_copies_and_freezes():
    raw = np.array([[1.0, 2.0], [3.0, 4.0]])
    data = Dataset(raw)
    raw[0, 0] = 99.0
    assert data.points[0, 0] == 1.0
    assert (data.n_points, data.dims) == (2, 2)
    with pytest.raises(ValueError):
        data.points[0, 0] = 5.0


@pytest.mark.parametrize("bad", [np.empty((0, 2)), np.empty((3, 0)), [[1.0, np.nan]],
                                 [[np.inf, 0.0]], np.zeros((2, 2, 2))])
def test_dataset_rejects_invalid(bad):
    with pytest.raises(InvalidArgument):
        Dataset(bad)


def test_dataset_one_dimensional_input_is_a_column():
    assert Dataset([1.0, 2.0, 3.0]).points.shape == (3, 1)


@pytest.mark.parametrize("sigma_sq", [0.0, -1.0, np.inf, np.nan])
def test_model_params_rejects_bad_variance(sigma_sq):
    with pytest.raises(InvalidArgument):
        ModelParams(np.zeros((2, 2)), sigma_sq)


def test_model_params_rejects_non_finite_means():
    with pytest.raises(InvalidArgument):
        ModelParams([[0.0, np.nan]], 1.0)


# -- distances -------------------------------------------------------------------

def test_distance_pythagorean():
    c = DistanceCounter()
    assert euclidean_distance([0, 0], [3, 4], c) == 5.0
    assert c.snapshot() == (1, 0)


def test_distance_identity():
    c = DistanceCounter()
    assert euclidean_distance([1.5, -2], [1.5, -2], c) == 0.0


def test_distance_mismatch_raises():
    with pytest.raises(InvalidArgument):
        euclidean_distance([0, 0], [0, 0, 0], DistanceCounter())


def test_distance_random_pairs_match_componentwise_oracle(rng):
    c = DistanceCounter()
    for _ in range(100):
        a, b = rng.normal(size=7), rng.normal(size=7)
        expected = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
        got = euclidean_distance(a, b, c, DistanceKind.CLUSTER_CLUSTER)
        assert got == pytest.approx(expected, rel=1e-12)
    assert c.snapshot() == (0, 100)


def test_distance_symmetric(rng):
    c = DistanceCounter()
    for _ in range(20):
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert euclidean_distance(a, b, c) == euclidean_distance(b, a, c)
        assert euclidean_distance(a, a, c) == 0.0


def test_counter_totals_under_threads():
    c = DistanceCounter()

    def work():
        for _ in range(1000):
            c.add(DistanceKind.DATA_CLUSTER)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c.snapshot() == (8000, 0)
    c.reset()
    assert c.snapshot() == (0, 0)


def test_counter_rejects_negative():
    with pytest.raises(InvalidArgument):
        DistanceCounter().add(DistanceKind.DATA_CLUSTER, -1)


def test_dense_and_paired_kernels_agree(rng):
    y, mu = rng.normal(size=(30, 3)), rng.normal(size=(6, 3))
    c = DistanceCounter()
    dense = all_distances(y, mu, c)
    assert c.snapshot() == (180, 0)
    rows, cols = np.divmod(np.arange(180), 6)
    paired = paired_distances(y, mu, rows, cols, c)
    np.testing.assert_array_equal(paired.reshape(30, 6), dense)
    assert c.snapshot() == (360, 0)
    oracle = np.array([[math.dist(p, m) for m in mu] for p in y])
    np.testing.assert_allclose(dense, oracle, rtol=1e-12)


def test_threaded_kernels_are_bit_identical(rng):
    y, mu = rng.normal(size=(4000, 3)), rng.normal(size=(300, 3))
    serial = all_distances(y, mu, DistanceCounter(), threads=1)
    threaded = all_distances(y, mu, DistanceCounter(), threads=4)
    np.testing.assert_array_equal(serial, threaded)


def test_run_chunks_preserves_order():
    out = run_chunks(10, 3, lambda s, e: list(range(s, e)), threads=3)
    assert sum(out, []) == list(range(10))


def test_nearest_sq_distances_match_brute_force(rng):
    y, mu = rng.normal(size=(200, 4)), rng.normal(size=(17, 4))
    idx, sq = nearest_sq_distances(y, mu)
    for n in range(200):
        d = [float(((y[n] - m) ** 2).sum()) for m in mu]
        assert idx[n] == int(np.argmin(d))
        assert sq[n] == pytest.approx(min(d), rel=1e-12)


# -- selection -------------------------------------------------------------------

def test_select_example():
    assert select_k_smallest([("a", 3), ("b", 1), ("c", 2), ("d", 4)], 2) == {"b", "c"}


def test_select_all_and_more():
    vals = [(i, float(v)) for i, v in enumerate([5, 1, 3])]
    assert select_k_smallest(vals, 3) == {0, 1, 2}
    assert select_k_smallest(vals, 10) == {0, 1, 2}


def test_select_empty_input():
    assert select_k_smallest([], 3) == set()


def test_select_rejects_bad_k_and_nan():
    with pytest.raises(InvalidArgument):
        select_k_smallest([(0, 1.0)], 0)
    with pytest.raises(InvalidArgument):
        select_k_smallest([(0, float("nan"))], 1)


def test_select_ties_go_to_smaller_key():
    vals = [(4, 1.0), (2, 1.0), (7, 1.0), (1, 5.0)]
    assert select_k_smallest(vals, 2) == {2, 4}


def test_select_infinite_sentinels():
    vals = [(0, math.inf), (1, 2.0), (2, math.inf)]
    assert select_k_smallest(vals, 2) == {0, 1}


def test_select_matches_sort_oracle_1000_cases():
    rng = np.random.default_rng(7)
    for case in range(1000):
        n = int(rng.integers(1, 501))
        k = int(rng.integers(1, n + 1))
        # coarse values force many ties
        d = rng.integers(0, max(2, n // 3), size=n).astype(float) if case % 2 else rng.random(n)
        keys = rng.permutation(n)
        vals = list(zip(keys.tolist(), d.tolist()))
        assert select_k_smallest(vals, k) == sort_oracle(vals, k)


def test_select_adversarial_sorted_input():
    # already sorted and reverse-sorted inputs exercise the pivot fallback
    vals = [(i, float(i)) for i in range(3000)]
    assert select_k_smallest(vals, 1500) == set(range(1500))
    assert select_k_smallest(vals[::-1], 10) == set(range(10))
    same = [(i, 1.0) for i in range(500)]
    assert select_k_smallest(same, 5) == set(range(5))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6) | st.just(math.inf), min_size=1,
                max_size=60), st.integers(min_value=1, max_value=70))
def test_select_property(dists, k):
    vals = list(enumerate(dists))
    got = select_k_smallest(vals, k)
    assert len(got) == min(k, len(vals))
    assert got == sort_oracle(vals, k)


def test_smallest_k_mask_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(300):
        rows, width = int(rng.integers(1, 8)), int(rng.integers(1, 12))
        k = int(rng.integers(1, width + 1))
        vals = rng.integers(0, 4, size=(rows, width)).astype(float)
        vals[rng.random(vals.shape) < 0.1] = np.inf
        mask = smallest_k_mask(vals, k)
        for r in range(rows):
            expected = sort_oracle(list(enumerate(vals[r])), k)
            assert set(np.nonzero(mask[r])[0]) == expected


def test_smallest_k_mask_degenerate_k():
    v = np.array([[3.0, 1.0, 2.0]])
    assert smallest_k_mask(v, 5).all()
    assert not smallest_k_mask(v, 0).any()


def test_sorted_unique_rows():
    out = sorted_unique_rows(np.array([[3, 1, 3, 2], [0, 0, 0, 0]]))
    np.testing.assert_array_equal(out, [[1, 2, 3, -1], [0, -1, -1, -1]])


def test_nearest_distances_match_dense_argmin(rng):
    y = rng.integers(0, 3, size=(500, 2)).astype(float)
    mu = rng.integers(0, 3, size=(7, 2)).astype(float)
    c1, c2 = DistanceCounter(), DistanceCounter()
    dense = all_distances(y, mu, c1)
    idx, d = nearest_distances(y, mu, c2, threads=2)
    np.testing.assert_array_equal(idx, np.argmin(dense, axis=1))
    np.testing.assert_array_equal(d, dense.min(axis=1))
    assert c1.snapshot() == c2.snapshot()
