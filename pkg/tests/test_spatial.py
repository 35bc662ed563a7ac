import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellcloud.core import CellCloud, TooFewCells
from cellcloud.spatial import (
    NeighborCounts,
    build_index,
    count_in_radii,
    count_in_radii_brute,
    fps,
    fps_brute,
    knn_group,
    knn_group_brute,
    mean_nn_distance,
    mean_nn_distance_brute,
    read_counts,
    write_counts,
)

from conftest import make_cloud, random_cloud

seeds = st.integers(0, 2**32 - 1)


def lattice_cloud(rng, n, pitch=4):
    """Integer-lattice cloud: many exactly tied distances."""
    xy = rng.integers(0, pitch, size=(n, 2)).astype(np.float64) * 3.0
    types = rng.integers(0, 3, size=n).astype(np.uint8)
    return CellCloud(xy=xy, types=types)


# ---------------------------------------------------------------------------
# NeighborCounts + CCNC cache
# ---------------------------------------------------------------------------


def test_counts_radii_must_ascend():
    with pytest.raises(ValueError):
        NeighborCounts(radii=np.array([2.0, 1.0]), counts=np.zeros((1, 2, 3), np.uint32))
    with pytest.raises(ValueError):
        NeighborCounts(radii=np.array([0.0, 1.0]), counts=np.zeros((1, 2, 3), np.uint32))
    with pytest.raises(ValueError):
        NeighborCounts(radii=np.array([1.0]), counts=np.zeros((1, 2, 3), np.uint32))


def test_counts_cache_round_trip(tmp_path):
    rng = np.random.Generator(np.random.Philox(0))
    nc = NeighborCounts(
        radii=np.array([1.5, 3.0, 4.5]),
        counts=rng.integers(0, 100, size=(7, 3, 3)).astype(np.uint32),
    )
    path = tmp_path / "c.ccnc"
    write_counts(path, nc)
    back = read_counts(path)
    assert np.array_equal(back.radii, nc.radii)
    assert np.array_equal(back.counts, nc.counts)


def test_counts_cache_bad_magic(tmp_path):
    p = tmp_path / "x.ccnc"
    p.write_bytes(b"ZZZZ" + bytes(30))
    with pytest.raises(ValueError, match="not a CCNC"):
        read_counts(p)


# ---------------------------------------------------------------------------
# build_index
# ---------------------------------------------------------------------------


def test_index_bins_match_direct_binning():
    cloud = make_cloud(
        [(0.0, 0.0, 0), (9.9, 9.9, 1), (10.0, 0.0, 2), (25.0, 14.0, 0), (0.0, 10.0, 1)]
    )
    idx = build_index(cloud, bin_size=10.0)
    assert idx.bins == {
        (0, 0): [0, 1],
        (0, 1): [2],
        (0, 2): [],
        (1, 0): [4],
        (1, 1): [],
        (1, 2): [3],
    } or idx.bins == {
        (0, 0): [0, 1],
        (0, 1): [2],
        (1, 0): [4],
        (1, 2): [3],
    }


@given(seeds, st.integers(1, 80))
@settings(max_examples=30, deadline=None)
def test_index_partitions_all_cells(seed, n):
    rng = np.random.Generator(np.random.Philox(seed))
    cloud = random_cloud(rng, n, extent=100.0)
    idx = build_index(cloud, bin_size=7.0)
    seen = sorted(i for members in idx.bins.values() for i in members)
    assert seen == list(range(n))
    for (r, c), members in idx.bins.items():
        for i in members:
            assert int(np.floor(cloud.xy[i, 1] / 7.0)) == r
            assert int(np.floor(cloud.xy[i, 0] / 7.0)) == c


def test_index_rejects_nonpositive_bin():
    with pytest.raises(ValueError):
        build_index(make_cloud([(0, 0, 0)]), 0.0)


# ---------------------------------------------------------------------------
# count_in_radii
# ---------------------------------------------------------------------------


def test_counts_tiny_hand_case():
    # cell 1 is 3px right of cell 0; cell 2 is 4px above cell 1 (5px from 0)
    cloud = make_cloud([(0, 0, 0), (3, 0, 1), (3, 4, 1)])
    idx = build_index(cloud, bin_size=5.0)
    nc = count_in_radii(idx, [3.0, 5.0])
    # cell 0: r=3 sees cell 1 (type 1); r=5 adds cell 2 (boundary inclusive)
    assert nc.counts[0].tolist() == [[0, 1, 0], [0, 2, 0]]
    # cell 1: r=3 sees cell 0 (t0); r=5 adds cell 2 (distance 4)
    assert nc.counts[1].tolist() == [[1, 0, 0], [1, 1, 0]]
    # cell 2: r=3 nothing, r=5 both others? distance to 0 is 5 -> inclusive
    assert nc.counts[2].tolist() == [[0, 0, 0], [1, 1, 0]]


def test_counts_boundary_inclusive_and_self_excluded():
    cloud = make_cloud([(0, 0, 2), (5, 0, 2)])
    idx = build_index(cloud, bin_size=2.0)
    nc = count_in_radii(idx, [5.0])
    assert nc.counts[0, 0].tolist() == [0, 0, 1]
    assert nc.counts[1, 0].tolist() == [0, 0, 1]
    below = count_in_radii(idx, [4.999999])
    assert below.counts.sum() == 0


def test_counts_duplicate_positions():
    # three coincident cells: each sees the other two, not itself
    cloud = make_cloud([(1, 1, 0), (1, 1, 0), (1, 1, 1)])
    idx = build_index(cloud, bin_size=1.0)
    nc = count_in_radii(idx, [0.5])
    assert nc.counts[0, 0].tolist() == [1, 1, 0]
    assert nc.counts[1, 0].tolist() == [1, 1, 0]
    assert nc.counts[2, 0].tolist() == [2, 0, 0]


@given(seeds, st.integers(2, 150), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_counts_match_brute_random(seed, n, n_d):
    rng = np.random.Generator(np.random.Philox(seed))
    cloud = random_cloud(rng, n, extent=60.0)
    radii = np.cumsum(rng.uniform(1.0, 8.0, size=n_d))
    idx = build_index(cloud, bin_size=float(radii[-1]))
    fast = count_in_radii(idx, radii)
    brute = count_in_radii_brute(cloud, radii)
    assert np.array_equal(fast.counts, brute.counts)


@given(seeds, st.integers(2, 120))
@settings(max_examples=40, deadline=None)
def test_counts_match_brute_lattice_ties(seed, n):
    rng = np.random.Generator(np.random.Philox(seed))
    cloud = lattice_cloud(rng, n)
    radii = [3.0, 4.2426406871192855, 6.0]  # hits exact lattice distances
    idx = build_index(cloud, bin_size=2.5)
    fast = count_in_radii(idx, radii)
    brute = count_in_radii_brute(cloud, radii)
    assert np.array_equal(fast.counts, brute.counts)


def test_counts_small_bins_vs_large_bins():
    rng = np.random.Generator(np.random.Philox(17))
    cloud = random_cloud(rng, 200, extent=100.0)
    radii = [4.0, 9.0]
    a = count_in_radii(build_index(cloud, bin_size=1.3), radii)
    b = count_in_radii(build_index(cloud, bin_size=40.0), radii)
    assert np.array_equal(a.counts, b.counts)


def test_counts_threads_bitwise_equal():
    rng = np.random.Generator(np.random.Philox(23))
    cloud = random_cloud(rng, 5000, extent=500.0)
    idx = build_index(cloud, bin_size=10.0)
    one = count_in_radii(idx, [5.0, 10.0], threads=1)
    four = count_in_radii(idx, [5.0, 10.0], threads=4)
    assert np.array_equal(one.counts, four.counts)


def test_counts_cumulative_monotone():
    rng = np.random.Generator(np.random.Philox(29))
    cloud = random_cloud(rng, 300, extent=80.0)
    idx = build_index(cloud, bin_size=6.0)
    nc = count_in_radii(idx, [2.0, 4.0, 6.0])
    assert np.all(np.diff(nc.counts.astype(np.int64), axis=1) >= 0)


def test_counts_radii_validation():
    idx = build_index(make_cloud([(0, 0, 0), (1, 1, 1)]), 1.0)
    with pytest.raises(ValueError):
        count_in_radii(idx, [])
    with pytest.raises(ValueError):
        count_in_radii(idx, [3.0, 2.0])
    with pytest.raises(ValueError):
        count_in_radii(idx, [-1.0, 2.0])


def test_counts_permutation_equivariant():
    rng = np.random.Generator(np.random.Philox(31))
    cloud = random_cloud(rng, 120, extent=50.0)
    perm = rng.permutation(120)
    permuted = cloud.subset(perm)
    radii = [3.0, 7.0]
    a = count_in_radii(build_index(cloud, 7.0), radii)
    b = count_in_radii(build_index(permuted, 7.0), radii)
    assert np.array_equal(a.counts[perm], b.counts)


# ---------------------------------------------------------------------------
# mean nearest neighbor distance
# ---------------------------------------------------------------------------


def test_mean_nn_needs_two_cells():
    with pytest.raises(TooFewCells):
        mean_nn_distance(make_cloud([(0, 0, 0)]))


def test_mean_nn_hand_value():
    # nearest distances: 1 (0->1), 1 (1->0), 3 (2->1) -> mean 5/3
    cloud = make_cloud([(0, 0, 0), (1, 0, 0), (4, 0, 0)])
    assert mean_nn_distance(cloud) == pytest.approx(5.0 / 3.0, rel=1e-15)


@given(seeds, st.integers(2, 200))
@settings(max_examples=40, deadline=None)
def test_mean_nn_matches_brute(seed, n):
    rng = np.random.Generator(np.random.Philox(seed))
    cloud = random_cloud(rng, n, extent=100.0)
    assert mean_nn_distance(cloud) == mean_nn_distance_brute(cloud)


# ---------------------------------------------------------------------------
# farthest point sampling
# ---------------------------------------------------------------------------


@given(seeds, st.integers(1, 60), st.booleans())
@settings(max_examples=50, deadline=None)
def test_fps_matches_brute(seed, m, with_labels):
    rng = np.random.Generator(np.random.Philox(seed))
    xy = rng.uniform(0.0, 50.0, size=(m, 2))
    labels = rng.integers(0, 3, size=m).astype(np.uint8) if with_labels else None
    gamma = float(rng.uniform(0.0, 10.0)) if with_labels else 0.0
    n = int(rng.integers(1, m + 1))
    assert np.array_equal(fps(xy, labels, n, gamma), fps_brute(xy, labels, n, gamma))


@given(seeds, st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_fps_lattice_ties_match_brute(seed, m):
    rng = np.random.Generator(np.random.Philox(seed))
    xy = rng.integers(0, 4, size=(m, 2)).astype(np.float64)
    labels = rng.integers(0, 3, size=m).astype(np.uint8)
    n = int(rng.integers(1, m + 1))
    assert np.array_equal(fps(xy, labels, n, 2.0), fps_brute(xy, labels, n, 2.0))


def test_fps_starts_at_lexicographic_min():
    xy = np.array([[5.0, 5.0], [1.0, 9.0], [1.0, 2.0], [3.0, 0.0]])
    assert fps(xy, None, 1)[0] == 2


def test_fps_label_breaks_start_tie():
    xy = np.array([[1.0, 2.0], [1.0, 2.0]])
    labels = np.array([1, 0], dtype=np.uint8)
    assert fps(xy, labels, 1, gamma=1.0)[0] == 1


def test_fps_full_sample_is_permutation():
    rng = np.random.Generator(np.random.Philox(41))
    xy = rng.uniform(0.0, 10.0, size=(30, 2))
    picks = fps(xy, None, 30)
    assert sorted(picks.tolist()) == list(range(30))


def test_fps_handles_coincident_points():
    xy = np.zeros((5, 2))
    picks = fps(xy, None, 5)
    assert sorted(picks.tolist()) == list(range(5))


def test_fps_spreads_first_picks():
    # a 10x10 square: after the corner start, the farthest point is the
    # opposite corner
    xy = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [5.0, 5.0]])
    picks = fps(xy, None, 2)
    assert picks.tolist() == [0, 3]


def test_fps_validates_args():
    xy = np.zeros((3, 2))
    with pytest.raises(ValueError):
        fps(xy, None, 4)
    with pytest.raises(ValueError):
        fps(xy, None, 2, gamma=-1.0)


def test_fps_semantic_gamma_prefers_other_labels():
    # clustered pair of label 0 and a mid-distance label-1 point: with a
    # large gamma the label-1 point wins the second pick
    xy = np.array([[0.0, 0.0], [8.0, 0.0], [4.0, 0.1]])
    labels = np.array([0, 0, 1], dtype=np.uint8)
    assert fps(xy, labels, 2, gamma=0.0).tolist() == [0, 1]
    assert fps(xy, labels, 2, gamma=20.0).tolist() == [0, 2]


# ---------------------------------------------------------------------------
# knn grouping
# ---------------------------------------------------------------------------


@given(seeds, st.integers(1, 60), st.integers(1, 20))
@settings(max_examples=50, deadline=None)
def test_knn_matches_brute(seed, n, a):
    rng = np.random.Generator(np.random.Philox(seed))
    pts = rng.uniform(0.0, 30.0, size=(n, 2))
    anchors = rng.uniform(0.0, 30.0, size=(a, 2))
    k = int(rng.integers(1, n + 1))
    assert np.array_equal(knn_group(anchors, pts, k), knn_group_brute(anchors, pts, k))


@given(seeds, st.integers(1, 50))
@settings(max_examples=50, deadline=None)
def test_knn_lattice_ties_match_brute(seed, n):
    rng = np.random.Generator(np.random.Philox(seed))
    pts = rng.integers(0, 5, size=(n, 2)).astype(np.float64)
    anchors = rng.integers(0, 5, size=(4, 2)).astype(np.float64)
    k = int(rng.integers(1, n + 1))
    assert np.array_equal(knn_group(anchors, pts, k), knn_group_brute(anchors, pts, k))


def test_knn_rows_sorted_by_distance_then_index():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    groups = knn_group(np.array([[0.0, 0.0]]), pts, 4)
    assert groups[0].tolist() == [0, 3, 1, 2]


def test_knn_k_bounds():
    pts = np.zeros((3, 2))
    with pytest.raises(ValueError):
        knn_group(np.zeros((1, 2)), pts, 0)
    with pytest.raises(ValueError):
        knn_group(np.zeros((1, 2)), pts, 4)
