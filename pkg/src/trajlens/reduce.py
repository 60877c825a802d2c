"""From-scratch 2D reduction of snapshot embeddings (UMAP-style).

Stages: exact brute-force kNN graph, per-point smooth-kNN calibration
(bisection for sigma with rho = nearest-neighbor distance), directed fuzzy
weights combined by probabilistic union, a low-dimensional curve fit for the
(a, b) kernel parameters, and a seeded stochastic layout with per-edge
attractive updates scheduled by edge weight plus uniform negative sampling.

The layout loop is single-threaded and seed-deterministic; identical seeds
give bitwise-identical coordinates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import ConfigurationError, DataError

SMOOTH_K_TOLERANCE = 1e-5
DEGENERATE_SIGMA_SCALE = 1e3
GRAD_CLIP = 4.0
N_NEIGHBORS_GRID = (15, 30, 50, 100)
MIN_DIST_GRID = (0.01, 0.1, 0.5, 1.0)
DEFAULT_COMBO = (15, 0.1)

Key = tuple[str, int]


@dataclass
class NeighborGraph:
    indices: np.ndarray  # (n, k) int64
    distances: np.ndarray  # (n, k) float64, ascending per row

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass
class ReducedPoints:
    keys: list[Key]
    coords: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.shape != (len(self.keys), 2):
            raise DataError("reduced coordinates must be (n, 2) aligned with keys")


def knn_graph(x: np.ndarray, k: int, chunk_rows: int = 1024) -> NeighborGraph:
    """Exact Euclidean k nearest neighbors (self excluded, ties by index)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k >= n:
        raise ConfigurationError(f"k={k} must be below the number of points {n}")
    sq = np.einsum("ij,ij->i", x, x)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for lo in range(0, n, chunk_rows):
        hi = min(lo + chunk_rows, n)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (x[lo:hi] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        indices[lo:hi] = order
        distances[lo:hi] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return NeighborGraph(indices=indices, distances=distances)


def smooth_knn(
    distances: np.ndarray,
    k: int | None = None,
    n_iter: int = 64,
    tolerance: float = SMOOTH_K_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point (rho, sigma) such that sum_j exp(-max(0, d_j - rho)/sigma)
    hits log2(k). rho is the nearest-neighbor distance. Rows whose distances
    are all equal have no solution; they get a large capped sigma and are
    flagged in the returned boolean mask."""
    distances = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    n, kk = distances.shape
    if k is None:
        k = kk
    target = math.log2(k)
    rho = distances[:, 0].copy()
    sigma = np.empty(n, dtype=np.float64)
    degenerate = np.zeros(n, dtype=bool)
    for i in range(n):
        d = distances[i]
        if np.all(d == d[0]):
            degenerate[i] = True
            sigma[i] = max(DEGENERATE_SIGMA_SCALE * float(d.mean()), 1e-12)
            continue
        lo, hi, mid = 0.0, np.inf, 1.0
        for _ in range(n_iter):
            psum = float(np.exp(-np.maximum(d - rho[i], 0.0) / mid).sum())
            if abs(psum - target) < tolerance:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigma[i] = mid
    return rho, sigma, degenerate


def membership_strengths(graph: NeighborGraph, rho: np.ndarray, sigma: np.ndarray) -> sp.coo_matrix:
    """Directed fuzzy weights exp(-max(0, d - rho_i)/sigma_i) for each edge."""
    n, k = graph.indices.shape
    rows = np.repeat(np.arange(n), k)
    cols = graph.indices.ravel()
    gaps = np.maximum(graph.distances - rho[:, None], 0.0)
    vals = np.exp(-gaps / sigma[:, None]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n))


def fuzzy_union(a):
    """Probabilistic t-conorm union: B = A + A^T - A o A^T (elementwise)."""
    if sp.issparse(a):
        at = a.T.tocsr()
        acsr = a.tocsr()
        return (acsr + at - acsr.multiply(at)).tocoo()
    a = np.asarray(a, dtype=np.float64)
    return a + a.T - a * a.T


def fit_curve(
    min_dist: float,
    spread: float = 1.0,
    max_iter: int = 200,
    return_trace: bool = False,
):
    """Fit (a, b) of 1/(1 + a x^(2b)) to the offset-exponential target by
    damped Gauss-Newton from (1, 1) over x in (0, 3*spread]."""
    if min_dist <= 0:
        raise ConfigurationError(f"min_dist must be positive, got {min_dist}")
    x = np.linspace(0.0, 3.0 * spread, 301)[1:]
    y = np.where(x < min_dist, 1.0, np.exp(-(x - min_dist) / spread))
    log_x = np.log(x)

    def residuals(a: float, b: float) -> np.ndarray:
        return 1.0 / (1.0 + a * x ** (2.0 * b)) - y

    a, b = 1.0, 1.0
    r = residuals(a, b)
    sse = float(r @ r)
    trace = [sse]
    converged = False
    for _ in range(max_iter):
        xp = x ** (2.0 * b)
        denom = (1.0 + a * xp) ** 2
        jac = np.stack([-xp / denom, -2.0 * a * xp * log_x / denom], axis=1)
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        t = 1.0
        improved = False
        while t > 1e-12:
            na, nb = a + t * step[0], b + t * step[1]
            if nb > 0 and na > 0:
                nr = residuals(na, nb)
                nsse = float(nr @ nr)
                if nsse < sse:
                    improved = True
                    break
            t /= 2.0
        if not improved:
            converged = True
            break
        a, b, r = na, nb, nr
        gain, sse = sse - nsse, nsse
        trace.append(sse)
        if gain < 1e-14:
            converged = True
            break
    if not converged:
        raise DataError(f"fit_curve did not converge after {max_iter} iterations; sse={sse:.3e}")
    return (a, b, trace) if return_trace else (a, b)


# ---------------------------------------------------------------------------
# Layout gradients (pure forms used by tests; the kernel mirrors them)


def attractive_energy(yi: np.ndarray, yj: np.ndarray, a: float, b: float) -> float:
    s = float(np.sum((yi - yj) ** 2))
    return math.log1p(a * s**b)


def repulsive_energy(yi: np.ndarray, yj: np.ndarray, a: float, b: float, eps: float = 0.0) -> float:
    s = float(np.sum((yi - yj) ** 2)) + eps
    return math.log1p(a * s**b) - math.log(a) - b * math.log(s)


def attractive_gradient(yi: np.ndarray, yj: np.ndarray, a: float, b: float) -> np.ndarray:
    """Update direction applied to yi for an attractive edge (negative gradient
    of the attractive energy)."""
    diff = yi - yj
    s = float(diff @ diff)
    if s <= 0.0:
        return np.zeros_like(diff)
    coeff = -2.0 * a * b * s ** (b - 1.0) / (a * s**b + 1.0)
    return coeff * diff


def repulsive_gradient(
    yi: np.ndarray, yj: np.ndarray, a: float, b: float, eps: float = 0.0
) -> np.ndarray:
    """Update direction applied to yi for a negative sample (negative gradient
    of the regularized repulsive energy)."""
    diff = yi - yj
    s = float(diff @ diff) + eps
    coeff = 2.0 * b / (s * (a * s**b + 1.0))
    return coeff * diff


@njit(cache=True)
def _rand_uint(state: np.ndarray) -> np.uint64:
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(2685821657736338717)


@njit(cache=True)
def _clip(v: float, cap: float) -> float:
    if v > cap:
        return cap
    if v < -cap:
        return -cap
    return v


@njit(cache=True)
def _layout_epochs(
    positions: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
    epochs_per_sample: np.ndarray,
    epoch_of_next_sample: np.ndarray,
    epochs_per_negative: np.ndarray,
    epoch_of_next_negative: np.ndarray,
    n_epochs: int,
    a: float,
    b: float,
    gamma: float,
    initial_lr: float,
    rng_state: np.ndarray,
    eps: float,
) -> None:
    n_vertices = positions.shape[0]
    dim = positions.shape[1]
    for epoch in range(n_epochs):
        alpha = initial_lr * (1.0 - epoch / n_epochs)
        for e in range(head.shape[0]):
            if epoch_of_next_sample[e] > epoch:
                continue
            j = head[e]
            k = tail[e]
            s = 0.0
            for d in range(dim):
                diff = positions[j, d] - positions[k, d]
                s += diff * diff
            if s > 0.0:
                coeff = -2.0 * a * b * s ** (b - 1.0) / (a * s**b + 1.0)
            else:
                coeff = 0.0
            for d in range(dim):
                g = _clip(coeff * (positions[j, d] - positions[k, d]), GRAD_CLIP)
                positions[j, d] += g * alpha
                positions[k, d] -= g * alpha
            epoch_of_next_sample[e] += epochs_per_sample[e]

            n_neg = int((epoch - epoch_of_next_negative[e]) / epochs_per_negative[e])
            for _ in range(n_neg):
                k2 = int(_rand_uint(rng_state) % np.uint64(n_vertices))
                if k2 == j:
                    continue
                s = eps
                for d in range(dim):
                    diff = positions[j, d] - positions[k2, d]
                    s += diff * diff
                coeff = 2.0 * gamma * b / (s * (a * s**b + 1.0))
                for d in range(dim):
                    if coeff > 0.0:
                        g = _clip(coeff * (positions[j, d] - positions[k2, d]), GRAD_CLIP)
                    else:
                        g = GRAD_CLIP
                    positions[j, d] += g * alpha
            epoch_of_next_negative[e] += n_neg * epochs_per_negative[e]


def optimize_layout(
    graph,
    n_epochs: int = 200,
    seed: int = 0,
    negative_samples: int = 5,
    initial_lr: float = 1.0,
    a: float | None = None,
    b: float | None = None,
    min_dist: float = 0.1,
    gamma: float = 1.0,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Seeded stochastic layout of a symmetric fuzzy graph into 2D.

    Initialization is uniform random in [-10, 10]^2 under the seed;
    ``n_epochs=0`` returns it unchanged. Per-component updates are clipped at
    magnitude 4 and the learning rate anneals linearly to zero.
    """
    coo = sp.coo_matrix(graph)
    n = coo.shape[0]
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-10.0, 10.0, size=(n, 2)) if init is None else np.array(init, dtype=np.float64)
    if n_epochs == 0:
        return positions
    if a is None or b is None:
        a, b = fit_curve(min_dist)

    keep = coo.data > 0
    head = coo.row[keep].astype(np.int64)
    tail = coo.col[keep].astype(np.int64)
    weights = coo.data[keep].astype(np.float64)
    if head.size == 0:
        return positions

    eps_per_sample = weights.max() / weights
    eons = eps_per_sample.copy()
    eps_per_neg = eps_per_sample / float(negative_samples)
    eonns = eps_per_neg.copy()
    rng_state = np.array([rng.integers(1, 2**63, dtype=np.uint64) | np.uint64(1)], dtype=np.uint64)

    _layout_epochs(
        positions,
        head,
        tail,
        eps_per_sample,
        eons,
        eps_per_neg,
        eonns,
        int(n_epochs),
        float(a),
        float(b),
        float(gamma),
        float(initial_lr),
        rng_state,
        1e-3,
    )
    if not np.all(np.isfinite(positions)):
        raise DataError("layout diverged to non-finite coordinates")
    return positions


def fuzzy_graph_from_embedding(x: np.ndarray, n_neighbors: int) -> sp.coo_matrix:
    knn = knn_graph(x, n_neighbors)
    rho, sigma, _ = smooth_knn(knn.distances, n_neighbors)
    return fuzzy_union(membership_strengths(knn, rho, sigma))


def reduce_embedding(
    x: np.ndarray,
    n_neighbors: int = 15,
    min_dist: float = 0.1,
    n_epochs: int = 200,
    seed: int = 0,
    negative_samples: int = 5,
    initial_lr: float = 1.0,
) -> np.ndarray:
    """Full reduction of an (n, d) matrix to (n, 2) coordinates."""
    graph = fuzzy_graph_from_embedding(np.asarray(x, dtype=np.float64), n_neighbors)
    a, b = fit_curve(min_dist)
    return optimize_layout(
        graph,
        n_epochs=n_epochs,
        seed=seed,
        negative_samples=negative_samples,
        initial_lr=initial_lr,
        a=a,
        b=b,
    )


def sweep(
    x: np.ndarray,
    n_neighbors_grid: Sequence[int] = N_NEIGHBORS_GRID,
    min_dist_grid: Sequence[float] = MIN_DIST_GRID,
    n_epochs: int = 200,
    seed: int = 0,
) -> dict[tuple[int, float], np.ndarray]:
    """Run the full reduction for every hyperparameter combo. The default
    combo (15, 0.1) is included whenever it is part of the grids."""
    results: dict[tuple[int, float], np.ndarray] = {}
    for nn in n_neighbors_grid:
        graph = fuzzy_graph_from_embedding(x, nn)
        for md in min_dist_grid:
            a, b = fit_curve(md)
            results[(nn, float(md))] = optimize_layout(
                graph, n_epochs=n_epochs, seed=seed, a=a, b=b
            )
    return results


def combo_tag(combo: tuple[int, float]) -> str:
    return f"nn{combo[0]}_md{combo[1]:g}"


def write_reduced_csv(path, keys: Sequence[Key], by_combo: dict[tuple[int, float], np.ndarray]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "snapshot_index", "u1", "u2", "combo"])
        for combo in sorted(by_combo):
            coords = by_combo[combo]
            tag = combo_tag(combo)
            for (pid, sidx), (u1, u2) in zip(keys, coords):
                w.writerow([pid, sidx, repr(float(u1)), repr(float(u2)), tag])


def read_reduced_csv(path, combo: str | None = None) -> tuple[list[Key], np.ndarray, list[str]]:
    """Return (keys, coords, combos-present); filter by combo tag when given."""
    keys: list[Key] = []
    rows: list[tuple[float, float]] = []
    combos: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["patient_id", "snapshot_index", "u1", "u2"]:
            raise DataError(f"{path}: unexpected header {header}")
        has_combo = len(header) > 4
        for row in reader:
            tag = row[4] if has_combo else ""
            if tag not in combos:
                combos.append(tag)
            if combo is not None and tag != combo:
                continue
            keys.append((row[0], int(row[1])))
            rows.append((float(row[2]), float(row[3])))
    return keys, np.asarray(rows, dtype=np.float64).reshape(len(rows), 2), combos
