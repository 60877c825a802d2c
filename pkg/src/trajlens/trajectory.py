"""Temporal clustering of patients in the reduced embedding space.

Per-patient snapshot points become time series, aligned on a fixed year grid
by linear interpolation (no extrapolation), and clustered with k-means under
dependent multivariate dynamic time warping. Centroids are updated by DTW
barycenter averaging; the sweep utilities implement the WCSS elbow and the
cross-hyperparameter Jaccard robustness analysis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, DataError

DEFAULT_GRID = (-5.0, 0.0, 5.0, 10.0, 15.0)

Key = tuple[str, int]


@dataclass
class Trajectory:
    patient_id: str
    times: np.ndarray  # strictly increasing
    values: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise DataError(f"trajectory {self.patient_id}: times not strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise DataError(f"trajectory {self.patient_id}: non-finite samples")


@dataclass
class AlignedTrajectory:
    patient_id: str
    times: np.ndarray  # covered subset of the grid
    values: np.ndarray  # (m, 2)


@dataclass
class ClusterModel:
    k: int
    patient_ids: list[str]
    labels: np.ndarray  # (n,) int
    centroids: list[np.ndarray]
    wcss: float
    seed: int
    iterations: int
    wcss_trace: list[float] = field(default_factory=list)

    @property
    def assignments(self) -> dict[str, int]:
        return {pid: int(c) for pid, c in zip(self.patient_ids, self.labels)}


# ---------------------------------------------------------------------------
# Trajectory construction


def build_trajectories(
    keys: Sequence[Key],
    coords: np.ndarray,
    snapshot_times: dict[Key, float],
    min_samples: int = 3,
) -> tuple[list[Trajectory], int]:
    """Per-patient (t, u1, u2) series; duplicate-t samples are averaged and
    patients with fewer than ``min_samples`` samples are excluded (counted)."""
    coords = np.asarray(coords, dtype=np.float64)
    per_patient: dict[str, dict[float, list[np.ndarray]]] = {}
    for key, xy in zip(keys, coords):
        t = snapshot_times[key]
        per_patient.setdefault(key[0], {}).setdefault(t, []).append(xy)

    trajectories: list[Trajectory] = []
    excluded = 0
    for pid in sorted(per_patient):
        groups = per_patient[pid]
        times = sorted(groups)
        if len(times) < min_samples:
            excluded += 1
            continue
        values = np.array([np.mean(groups[t], axis=0) for t in times])
        trajectories.append(Trajectory(pid, np.array(times), values))
    return trajectories, excluded


def interpolate(
    trajectory: Trajectory,
    grid: Sequence[float] = DEFAULT_GRID,
    min_points: int = 3,
) -> AlignedTrajectory | None:
    """Linear interpolation onto the grid points inside the observed time
    range; points outside are omitted (never extrapolated). Returns None when
    fewer than ``min_points`` grid points are covered."""
    t = trajectory.times
    covered = np.array([g for g in grid if t[0] <= g <= t[-1]], dtype=np.float64)
    if covered.size < min_points:
        return None
    u1 = np.interp(covered, t, trajectory.values[:, 0])
    u2 = np.interp(covered, t, trajectory.values[:, 1])
    return AlignedTrajectory(trajectory.patient_id, covered, np.column_stack([u1, u2]))


def align_trajectories(
    trajectories: Sequence[Trajectory], grid: Sequence[float] = DEFAULT_GRID
) -> tuple[list[AlignedTrajectory], int]:
    aligned = []
    dropped = 0
    for traj in trajectories:
        a = interpolate(traj, grid)
        if a is None:
            dropped += 1
        else:
            aligned.append(a)
    return aligned, dropped


# ---------------------------------------------------------------------------
# Dynamic time warping


@njit(cache=True)
def _dtw_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape[0], b.shape[0]
    dim = a.shape[1]
    table = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for d in range(dim):
                diff = a[i, d] - b[j, d]
                s += diff * diff
            cost = np.sqrt(s)
            if i == 0 and j == 0:
                prev = 0.0
            elif i == 0:
                prev = table[0, j - 1]
            elif j == 0:
                prev = table[i - 1, 0]
            else:
                prev = table[i - 1, j - 1]
                if table[i - 1, j] < prev:
                    prev = table[i - 1, j]
                if table[i, j - 1] < prev:
                    prev = table[i, j - 1]
            table[i, j] = cost + prev
    return table


@njit(cache=True)
def _dtw_path(table: np.ndarray) -> np.ndarray:
    n, m = table.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    i, j = n - 1, m - 1
    pos = path.shape[0] - 1
    path[pos, 0] = i
    path[pos, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = table[i - 1, j - 1]
            move = 0
            if table[i - 1, j] < best:
                best = table[i - 1, j]
                move = 1
            if table[i, j - 1] < best:
                move = 2
            if move == 0:
                i -= 1
                j -= 1
            elif move == 1:
                i -= 1
            else:
                j -= 1
        pos -= 1
        path[pos, 0] = i
        path[pos, 1] = j
    return path[pos:]


def _as_series(obj) -> np.ndarray:
    arr = obj.values if isinstance(obj, AlignedTrajectory) else np.asarray(obj, dtype=np.float64)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.size == 0:
        raise DataError("dtw: empty series")
    return np.ascontiguousarray(arr)


def dtw(a, b) -> float:
    """Dependent multivariate DTW distance: Euclidean local cost, steps
    {(1,0), (0,1), (1,1)}, no warping window."""
    sa, sb = _as_series(a), _as_series(b)
    if sa.shape[1] != sb.shape[1]:
        raise DataError(f"dtw: dimension mismatch {sa.shape[1]} vs {sb.shape[1]}")
    return float(_dtw_table(sa, sb)[-1, -1])


def dtw_path(a, b) -> np.ndarray:
    """Optimal alignment path as an array of (i, j) index pairs."""
    sa, sb = _as_series(a), _as_series(b)
    return np.asarray(_dtw_path(_dtw_table(sa, sb)))


# ---------------------------------------------------------------------------
# DBA and k-means


def dba(
    series: Sequence[np.ndarray], init: np.ndarray, n_iter: int = 10
) -> np.ndarray:
    """DTW barycenter averaging: realign members to the running centroid and
    replace each centroid sample by the mean of its aligned points."""
    centroid = np.array(init, dtype=np.float64)
    for _ in range(n_iter):
        sums = np.zeros_like(centroid)
        counts = np.zeros(centroid.shape[0], dtype=np.float64)
        for s in series:
            path = _dtw_path(_dtw_table(centroid, s))
            for ci, sj in path:
                sums[ci] += s[sj]
                counts[ci] += 1.0
        new = sums / counts[:, None]
        if np.allclose(new, centroid, rtol=0.0, atol=1e-12):
            centroid = new
            break
        centroid = new
    return centroid


def _medoid(series: Sequence[np.ndarray]) -> np.ndarray:
    best_i, best_cost = 0, np.inf
    for i, s in enumerate(series):
        cost = sum(dtw(s, t) ** 2 for t in series)
        if cost < best_cost:
            best_i, best_cost = i, cost
    return np.array(series[best_i])


def _kmeanspp_seed(series: list[np.ndarray], k: int, rng: np.random.Generator) -> list[np.ndarray]:
    n = len(series)
    first = int(rng.integers(n))
    centroids = [np.array(series[first])]
    closest_sq = np.array([dtw(s, centroids[0]) ** 2 for s in series])
    for _ in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=closest_sq / total))
        centroids.append(np.array(series[nxt]))
        d_new = np.array([dtw(s, centroids[-1]) ** 2 for s in series])
        closest_sq = np.minimum(closest_sq, d_new)
    return centroids


def dtw_kmeans(
    series: Sequence[AlignedTrajectory] | Sequence[np.ndarray],
    k: int,
    seed: int = 0,
    max_iter: int = 50,
    dba_iterations: int = 10,
    centroid_mode: str = "dba",
) -> ClusterModel:
    """k-means under DTW with k-means++ seeding and DBA centroid updates.

    An emptied cluster is re-seeded from the point farthest from its assigned
    centroid. Deterministic under ``seed``; stops when assignments stabilize.
    """
    if centroid_mode not in ("dba", "medoid"):
        raise ConfigurationError(f"unknown centroid_mode {centroid_mode!r}")
    ids = [
        s.patient_id if isinstance(s, AlignedTrajectory) else str(i)
        for i, s in enumerate(series)
    ]
    arrays = [_as_series(s) for s in series]
    n = len(arrays)
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the {n} series")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seed(arrays, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    wcss_trace: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dists = np.empty((n, k), dtype=np.float64)
        for i, s in enumerate(arrays):
            for c in range(k):
                dists[i, c] = dtw(s, centroids[c])
        new_labels = dists.argmin(axis=1)

        for c in range(k):
            if not np.any(new_labels == c):
                per_point = dists[np.arange(n), new_labels]
                farthest = int(per_point.argmax())
                centroids[c] = np.array(arrays[farthest])
                new_labels[farthest] = c
                dists[:, c] = [dtw(s, centroids[c]) for s in arrays]

        wcss_trace.append(float(np.sum(dists[np.arange(n), new_labels] ** 2)))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = [arrays[i] for i in np.flatnonzero(labels == c)]
            if centroid_mode == "dba":
                centroids[c] = dba(members, centroids[c], n_iter=dba_iterations)
            else:
                centroids[c] = _medoid(members)

    wcss = float(
        sum(dtw(arrays[i], centroids[labels[i]]) ** 2 for i in range(n))
    )
    return ClusterModel(
        k=k,
        patient_ids=ids,
        labels=labels,
        centroids=[np.asarray(c) for c in centroids],
        wcss=wcss,
        seed=seed,
        iterations=iterations,
        wcss_trace=wcss_trace,
    )


def dtw_kmeans_best(
    series,
    k: int,
    seed: int = 0,
    restarts: int = 5,
    max_iter: int = 50,
    centroid_mode: str = "dba",
) -> ClusterModel:
    """Best of ``restarts`` seeded runs by WCSS (seeds seed..seed+restarts-1)."""
    best: ClusterModel | None = None
    for i in range(restarts):
        model = dtw_kmeans(series, k, seed=seed + i, max_iter=max_iter, centroid_mode=centroid_mode)
        if best is None or model.wcss < best.wcss:
            best = model
    return best


# ---------------------------------------------------------------------------
# Sweeps and robustness


@dataclass
class WcssSweep:
    table: dict[tuple[int, int], float]  # (k, seed) -> wcss
    k_range: list[int]
    seeds: list[int]

    def best_by_k(self) -> dict[int, float]:
        return {k: min(self.table[(k, s)] for s in self.seeds) for k in self.k_range}

    def median_by_k(self) -> dict[int, float]:
        return {
            k: float(np.median([self.table[(k, s)] for s in self.seeds])) for k in self.k_range
        }


def wcss_sweep(
    series,
    k_range: Sequence[int] = tuple(range(2, 9)),
    n_seeds: int = 20,
    base_seed: int = 0,
    max_iter: int = 50,
) -> WcssSweep:
    seeds = [base_seed + i for i in range(n_seeds)]
    table = {}
    for k in k_range:
        for s in seeds:
            table[(k, s)] = dtw_kmeans(series, k, seed=s, max_iter=max_iter).wcss
    return WcssSweep(table=table, k_range=list(k_range), seeds=seeds)


def elbow_pick(best_by_k: dict[int, float]) -> int:
    """k at the maximum second difference of the per-k best WCSS."""
    ks = sorted(best_by_k)
    if len(ks) < 3:
        raise ConfigurationError("elbow_pick needs at least three k values")
    best_k, best_curv = ks[1], -np.inf
    for a, b, c in zip(ks, ks[1:], ks[2:]):
        curv = best_by_k[a] - 2.0 * best_by_k[b] + best_by_k[c]
        if curv > best_curv:
            best_k, best_curv = b, curv
    return best_k


def jaccard(a: set, b: set) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass
class MatchedPair:
    cluster_a: int
    cluster_b: int
    overlap: int
    jaccard: float


def match_clusters(assign_a: dict[str, int], assign_b: dict[str, int]) -> list[MatchedPair]:
    """Hungarian maximum-overlap matching of two labelings over the same
    patients; per matched pair report raw overlap and Jaccard similarity."""
    if set(assign_a) != set(assign_b):
        raise DataError("labelings cover different patient sets")
    patients = sorted(assign_a)
    k = max(max(assign_a.values()), max(assign_b.values())) + 1
    contingency = np.zeros((k, k), dtype=np.int64)
    for p in patients:
        contingency[assign_a[p], assign_b[p]] += 1
    rows, cols = linear_sum_assignment(-contingency)
    out = []
    for ca, cb in zip(rows, cols):
        set_a = {p for p in patients if assign_a[p] == ca}
        set_b = {p for p in patients if assign_b[p] == cb}
        out.append(
            MatchedPair(int(ca), int(cb), int(contingency[ca, cb]), jaccard(set_a, set_b))
        )
    return out


@dataclass
class RobustnessResult:
    combos: list
    matched: dict[tuple, list[MatchedPair]]  # (combo_a, combo_b) -> pairs
    jaccard_matrix: np.ndarray  # mean matched Jaccard per combo pair
    overlap_matrix: np.ndarray  # matched overlap fraction per combo pair


def robustness(labelings: dict) -> RobustnessResult:
    """Pairwise cluster matching across hyperparameter combos."""
    combos = sorted(labelings)
    if not combos:
        raise ConfigurationError("robustness: no labelings given")
    n_patients = len(labelings[combos[0]])
    jac = np.eye(len(combos))
    ovl = np.eye(len(combos))
    matched: dict[tuple, list[MatchedPair]] = {}
    for i, ca in enumerate(combos):
        for j, cb in enumerate(combos):
            if j <= i:
                continue
            pairs = match_clusters(labelings[ca], labelings[cb])
            matched[(ca, cb)] = pairs
            jac[i, j] = jac[j, i] = float(np.mean([p.jaccard for p in pairs]))
            ovl[i, j] = ovl[j, i] = sum(p.overlap for p in pairs) / n_patients
    return RobustnessResult(combos=combos, matched=matched, jaccard_matrix=jac, overlap_matrix=ovl)


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected agreement between two labelings."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise DataError("ARI: labelings differ in length")
    ka = np.unique(a)
    kb = np.unique(b)
    contingency = np.zeros((ka.size, kb.size), dtype=np.int64)
    for i, ca in enumerate(ka):
        for j, cb in enumerate(kb):
            contingency[i, j] = int(np.sum((a == ca) & (b == cb)))

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(a.size)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# Serialization


def write_trajectories_jsonl(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(
                json.dumps(
                    {
                        "patient_id": t.patient_id,
                        "times": [float(x) for x in t.times],
                        "u1": [float(x) for x in t.values[:, 0]],
                        "u2": [float(x) for x in t.values[:, 1]],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def write_clusters_csv(path, model: ClusterModel) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "cluster"])
        for pid, c in sorted(model.assignments.items()):
            w.writerow([pid, c])


def read_clusters_csv(path) -> dict[str, int]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                out[row[0]] = int(row[1])
    return out


def write_wcss_csv(path, sweep: WcssSweep) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "seed", "wcss"])
        for (k, s), v in sorted(sweep.table.items()):
            w.writerow([k, s, repr(v)])


def write_jaccard_csv(path, result: RobustnessResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["combo_a", "combo_b", "cluster_a", "cluster_b", "overlap", "jaccard"])
        for (ca, cb), pairs in sorted(result.matched.items()):
            for p in pairs:
                w.writerow([ca, cb, p.cluster_a, p.cluster_b, p.overlap, repr(p.jaccard)])
