import itertools

import numpy as np
import pytest

from trajlens.errors import ConfigurationError, DataError
from trajlens.trajectory import (
    AlignedTrajectory,
    Trajectory,
    adjusted_rand_index,
    align_trajectories,
    build_trajectories,
    dba,
    dtw,
    dtw_kmeans,
    dtw_kmeans_best,
    dtw_path,
    elbow_pick,
    interpolate,
    jaccard,
    match_clusters,
    read_clusters_csv,
    robustness,
    wcss_sweep,
    write_clusters_csv,
)


def brute_force_dtw(a, b):
    """Exhaustive enumeration over all monotone alignment paths."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    best = [np.inf]

    def cost(i, j):
        return float(np.sqrt(((a[i] - b[j]) ** 2).sum()))

    def walk(i, j, acc):
        acc = acc + cost(i, j)
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


class TestBuildTrajectories:
    def test_under_three_samples_excluded(self):
        keys = [("a", 0), ("a", 1), ("b", 0), ("b", 1), ("b", 2)]
        coords = np.arange(10, dtype=float).reshape(5, 2)
        times = {("a", 0): -5.0, ("a", 1): 0.0, ("b", 0): -5.0, ("b", 1): 0.0, ("b", 2): 5.0}
        trajs, excluded = build_trajectories(keys, coords, times)
        assert [t.patient_id for t in trajs] == ["b"]
        assert excluded == 1

    def test_duplicate_t_averaged(self):
        keys = [("a", 0), ("a", 1), ("a", 2), ("a", 3)]
        coords = np.array([[1.0, 1.0], [3.0, 3.0], [5.0, 5.0], [7.0, 7.0]])
        times = {("a", 0): 0.0, ("a", 1): 0.0, ("a", 2): 5.0, ("a", 3): 10.0}
        trajs, _ = build_trajectories(keys, coords, times)
        assert np.allclose(trajs[0].values[0], [2.0, 2.0])

    def test_conservation(self):
        rng = np.random.default_rng(0)
        keys, times = [], {}
        for p in range(30):
            for s in range(int(rng.integers(1, 6))):
                keys.append((f"p{p}", s))
                times[(f"p{p}", s)] = float(s) * 2.5
        coords = rng.normal(size=(len(keys), 2))
        trajs, excluded = build_trajectories(keys, coords, times)
        assert len(trajs) + excluded == 30


class TestInterpolate:
    def test_linear_midpoint(self):
        traj = Trajectory("p", [-10.0, 0.0, 10.0], np.array([[0.0, 0], [10.0, 0], [20.0, 0]]))
        aligned = interpolate(traj, [-5, 0, 5, 10, 15])
        assert aligned is not None
        i = list(aligned.times).index(-5.0)
        assert aligned.values[i, 0] == pytest.approx(5.0)

    def test_no_extrapolation(self):
        traj = Trajectory("p", [-6.0, 3.0, 12.0], np.zeros((3, 2)))
        aligned = interpolate(traj, [-5, 0, 5, 10, 15])
        assert 15.0 not in aligned.times
        assert list(aligned.times) == [-5.0, 0.0, 5.0, 10.0]

    def test_under_three_grid_points_dropped(self):
        traj = Trajectory("p", [0.0, 1.0, 2.0], np.zeros((3, 2)))
        assert interpolate(traj, [-5, 0, 5, 10, 15]) is None

    def test_exact_on_affine_trajectories(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            a1, b1, a2, b2 = rng.normal(size=4)
            t = np.sort(rng.uniform(-12, 18, size=6))
            values = np.column_stack([a1 * t + b1, a2 * t + b2])
            aligned = interpolate(Trajectory("p", t, values), [-5, 0, 5, 10, 15])
            if aligned is None:
                continue
            for g, (u1, u2) in zip(aligned.times, aligned.values):
                assert u1 == pytest.approx(a1 * g + b1, abs=1e-9)
                assert u2 == pytest.approx(a2 * g + b2, abs=1e-9)

    def test_exact_on_grid_coinciding_sample(self):
        traj = Trajectory("p", [-5.0, 0.0, 5.0], np.array([[1.0, 2], [3.0, 4], [5.0, 6]]))
        aligned = interpolate(traj, [-5, 0, 5])
        assert np.array_equal(aligned.values, traj.values)


class TestDtw:
    def test_identity(self):
        x = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
        assert dtw(x, x) == 0.0

    def test_single_pair_euclidean(self):
        assert dtw([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0

    def test_pinned_three_vs_two(self):
        a = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
        b = [[0.0, 0.0], [2.0, 0.0]]
        assert dtw(a, b) == pytest.approx(brute_force_dtw(a, b))
        assert dtw(a, b) == 1.0

    def test_equals_brute_force_short_series(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            a = rng.normal(size=(n, 2))
            b = rng.normal(size=(m, 2))
            assert dtw(a, b) == brute_force_dtw(a, b)

    def test_symmetry(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            a = rng.normal(size=(int(rng.integers(1, 8)), 2))
            b = rng.normal(size=(int(rng.integers(1, 8)), 2))
            assert dtw(a, b) == dtw(b, a)

    def test_bounded_by_diagonal_cost(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            a = rng.normal(size=(n, 2))
            b = rng.normal(size=(n, 2))
            diagonal = float(np.sqrt(((a - b) ** 2).sum(axis=1)).sum())
            assert dtw(a, b) <= diagonal + 1e-12

    def test_empty_series_rejected(self):
        with pytest.raises(DataError):
            dtw(np.zeros((0, 2)), np.zeros((2, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            dtw(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_path_is_valid_monotone_alignment(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(2, 7)), 2))
            b = rng.normal(size=(int(rng.integers(2, 7)), 2))
            path = dtw_path(a, b)
            assert tuple(path[0]) == (0, 0)
            assert tuple(path[-1]) == (len(a) - 1, len(b) - 1)
            steps = set(map(tuple, np.diff(path, axis=0)))
            assert steps <= {(1, 0), (0, 1), (1, 1)}
            cost = sum(
                float(np.sqrt(((a[i] - b[j]) ** 2).sum())) for i, j in path
            )
            assert cost == pytest.approx(dtw(a, b))


class TestDba:
    def test_identical_members_fixed_point(self):
        s = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        out = dba([s, s, s], s)
        assert np.allclose(out, s)

    def test_mean_of_aligned_equal_length(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 2.0], [1.0, 2.0]])
        out = dba([a, b], a)
        assert np.allclose(out, [[0.0, 1.0], [1.0, 1.0]])


def planted_series(n_per=20, seed=0):
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0.0, 12.0, 5)
    directions = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    anchors = [np.column_stack([dx * ramp, dy * ramp]) for dx, dy in directions]
    series, labels = [], []
    for c, anchor in enumerate(anchors):
        for i in range(n_per):
            series.append(
                AlignedTrajectory(
                    f"p{c}_{i}",
                    np.array([-5.0, 0.0, 5.0, 10.0, 15.0]),
                    anchor + rng.normal(scale=0.3, size=anchor.shape),
                )
            )
            labels.append(c)
    return series, np.array(labels)


class TestDtwKmeans:
    def test_k_one_single_cluster_centroid_is_dba(self):
        series, _ = planted_series(n_per=5, seed=2)
        model = dtw_kmeans(series, 1, seed=0)
        assert set(model.labels) == {0}
        arrays = [s.values for s in series]
        reference = dba(arrays, model.centroids[0], n_iter=10)
        assert np.allclose(model.centroids[0], reference, atol=1e-9)

    def test_k_equals_n_zero_wcss(self):
        series, _ = planted_series(n_per=2, seed=3)
        model = dtw_kmeans(series, len(series), seed=1)
        assert model.wcss == pytest.approx(0.0, abs=1e-18)

    def test_planted_recovery(self):
        series, labels = planted_series(n_per=20, seed=4)
        model = dtw_kmeans_best(series, 4, seed=0, restarts=5)
        assert adjusted_rand_index(model.labels, labels) >= 0.9

    def test_wcss_trace_non_increasing(self):
        series, _ = planted_series(n_per=10, seed=5)
        model = dtw_kmeans(series, 3, seed=7)
        for a, b in zip(model.wcss_trace, model.wcss_trace[1:]):
            assert b <= a + 1e-9

    def test_deterministic(self):
        series, _ = planted_series(n_per=6, seed=6)
        m1 = dtw_kmeans(series, 3, seed=9)
        m2 = dtw_kmeans(series, 3, seed=9)
        assert np.array_equal(m1.labels, m2.labels)
        assert m1.wcss == m2.wcss

    def test_k_above_n_rejected(self):
        series, _ = planted_series(n_per=1, seed=7)
        with pytest.raises(ConfigurationError):
            dtw_kmeans(series, len(series) + 1, seed=0)

    def test_medoid_mode(self):
        series, labels = planted_series(n_per=8, seed=8)
        model = dtw_kmeans_best(series, 4, seed=0, restarts=3, centroid_mode="medoid")
        assert adjusted_rand_index(model.labels, labels) >= 0.9

    def test_empty_cluster_reseeded_from_farthest(self):
        # two distinct locations, k=3: one centroid must empty and re-seed,
        # and every cluster stays populated in the result
        near = np.zeros((3, 2))
        far = np.full((3, 2), 50.0)
        series = [near.copy() for _ in range(6)] + [far.copy() for _ in range(2)]
        for seed in range(5):
            model = dtw_kmeans(series, 3, seed=seed)
            counts = np.bincount(model.labels, minlength=3)
            assert (counts > 0).all()
            assert model.wcss < 1e-9  # duplicates collapse exactly


class TestWcssSweep:
    def test_monotone_in_k_and_elbow(self):
        series, _ = planted_series(n_per=8, seed=9)
        sweep = wcss_sweep(series, k_range=range(2, 7), n_seeds=5, base_seed=0)
        best = sweep.best_by_k()
        values = [best[k] for k in sorted(best)]
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))
        assert elbow_pick(best) == 4

    def test_rerun_identical(self):
        series, _ = planted_series(n_per=4, seed=10)
        a = wcss_sweep(series, k_range=range(2, 5), n_seeds=2, base_seed=1).table
        b = wcss_sweep(series, k_range=range(2, 5), n_seeds=2, base_seed=1).table
        assert a == b


class TestRobustness:
    def test_identical_labelings_all_ones(self):
        lab = {f"p{i}": i % 3 for i in range(30)}
        result = robustness({"a": lab, "b": dict(lab)})
        pairs = result.matched[("a", "b")]
        assert all(p.jaccard == 1.0 for p in pairs)
        assert np.allclose(result.jaccard_matrix, 1.0)

    def test_disjoint_after_matching_zero(self):
        a = {"a": 0, "b": 0, "c": 1, "d": 1}
        b = {"a": 0, "b": 0, "c": 0, "d": 0}
        pairs = match_clusters(a, b)
        by_cluster = {p.cluster_a: p for p in pairs}
        assert by_cluster[1].jaccard == 0.0

    def test_jaccard_helper(self):
        assert jaccard({"a", "b", "c"}, {"b", "c", "d"}) == 0.5
        assert jaccard(set(), set()) == 1.0

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(15)
        a = {f"p{i}": int(rng.integers(0, 4)) for i in range(60)}
        b = {f"p{i}": int(rng.integers(0, 4)) for i in range(60)}
        base = sorted(p.jaccard for p in match_clusters(a, b))
        perm = [2, 3, 0, 1]
        b_perm = {k: perm[v] for k, v in b.items()}
        permuted = sorted(p.jaccard for p in match_clusters(a, b_perm))
        assert np.allclose(base, permuted)

    def test_differing_patient_sets_rejected(self):
        with pytest.raises(DataError):
            match_clusters({"a": 0, "b": 1}, {"a": 0, "c": 1})


class TestAri:
    def test_perfect_and_independent(self):
        labels = [0, 0, 1, 1, 2, 2]
        assert adjusted_rand_index(labels, labels) == 1.0
        assert adjusted_rand_index(labels, [x + 5 for x in labels]) == 1.0

    def test_matches_sklearn(self):
        from sklearn.metrics import adjusted_rand_score

        rng = np.random.default_rng(16)
        for _ in range(50):
            n = int(rng.integers(6, 60))
            a = rng.integers(0, 4, size=n)
            b = rng.integers(0, 4, size=n)
            assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_clusters_csv_roundtrip(tmp_path):
    series, _ = planted_series(n_per=3, seed=17)
    model = dtw_kmeans(series, 2, seed=0)
    path = tmp_path / "clusters.csv"
    write_clusters_csv(path, model)
    assert read_clusters_csv(path) == model.assignments


def test_align_trajectories_drop_count():
    trajs = [
        Trajectory("ok", [-6.0, 1.0, 12.0], np.zeros((3, 2))),
        Trajectory("short", [0.0, 1.0, 2.0], np.zeros((3, 2))),
    ]
    aligned, dropped = align_trajectories(trajs)
    assert [a.patient_id for a in aligned] == ["ok"]
    assert dropped == 1
