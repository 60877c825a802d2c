#!/usr/bin/env python3
"""Patient trajectories in the reduced space: interpolation onto the 5-year
grid, multivariate DTW, k-means with DTW barycenter averaging, the WCSS elbow,
and cross-labeling Jaccard robustness."""

import numpy as np

from trajlens.trajectory import (
    AlignedTrajectory,
    Trajectory,
    adjusted_rand_index,
    dtw,
    dtw_kmeans_best,
    elbow_pick,
    interpolate,
    match_clusters,
    wcss_sweep,
)

# --- DTW basics ---------------------------------------------------------------
a = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
b = [[0.0, 0.0], [2.0, 0.0]]
print(f"dtw(3-point line, 2-point line) = {dtw(a, b)}")
print(f"dtw(x, x) = {dtw(a, a)}, dtw single pair = {dtw([[0, 0]], [[3, 4]])}")

# --- interpolation onto the grid ------------------------------------------------
traj = Trajectory("demo", [-10.0, 0.0, 10.0], np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]]))
aligned = interpolate(traj, [-5, 0, 5, 10, 15])
print("\ninterpolated grid values (no extrapolation beyond +10):")
for t, (u1, u2) in zip(aligned.times, aligned.values):
    print(f"  t={t:+.0f}y -> ({u1:.1f}, {u2:.1f})")

# --- planted archetypes + clustering -------------------------------------------
rng = np.random.default_rng(1)
ramp = np.linspace(0.0, 12.0, 5)
directions = [(1, 0), (0, 1), (-1, 0), (0, -1)]
series, truth = [], []
for c, (dx, dy) in enumerate(directions):
    anchor = np.column_stack([dx * ramp, dy * ramp])
    for i in range(25):
        series.append(AlignedTrajectory(
            f"p{c}_{i}", np.array([-5.0, 0.0, 5.0, 10.0, 15.0]),
            anchor + rng.normal(scale=0.4, size=anchor.shape)))
        truth.append(c)

model = dtw_kmeans_best(series, k=4, seed=0, restarts=5)
print(f"\nk-means (k=4): wcss {model.wcss:.1f} after {model.iterations} iterations, "
      f"ARI vs planted = {adjusted_rand_index(model.labels, truth):.3f}")

# --- elbow over k ----------------------------------------------------------------
sweep = wcss_sweep(series, k_range=range(2, 8), n_seeds=5, base_seed=0)
best = sweep.best_by_k()
print("\nbest WCSS by k:", {k: round(v, 1) for k, v in best.items()})
print("elbow picks k =", elbow_pick(best))

# --- robustness via Hungarian-matched Jaccard -------------------------------------
other = dtw_kmeans_best(series, k=4, seed=100, restarts=3)
pairs = match_clusters(model.assignments, other.assignments)
print("\nmatched clusters across two runs (clusterA -> clusterB, overlap, jaccard):")
for p in pairs:
    print(f"  {p.cluster_a} -> {p.cluster_b}: overlap {p.overlap}, jaccard {p.jaccard:.2f}")
