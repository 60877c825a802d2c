"""Snapshot embeddings and the disease-status classifier head.

The built-in embedding baseline factorizes a positive PMI co-occurrence
matrix (symmetric context window over non-special tokens) with seeded
randomized subspace iteration, then mean-pools the token vectors per snapshot
and L2-normalizes the rows. Externally computed embeddings (e.g. from a
transformer encoder) drop in through the same CSV contract.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cohort import FoldAssignment
from .errors import ConfigurationError, DataError
from .tokenizer import TokenSequence

Key = tuple[str, int]


@dataclass
class EmbeddingMatrix:
    keys: list[Key]
    vectors: np.ndarray  # (n, d) float64
    row_normalized: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.keys) != self.vectors.shape[0]:
            raise DataError("embedding matrix rows must align with snapshot keys")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def normalized(self) -> "EmbeddingMatrix":
        """Unit-norm rows; idempotent. Zero rows are left untouched."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return EmbeddingMatrix(list(self.keys), self.vectors / safe, row_normalized=True)

    def row_index(self) -> dict[Key, int]:
        return {k: i for i, k in enumerate(self.keys)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "snapshot_index"] + [f"e_{j}" for j in range(self.dim)])
            for (pid, sidx), row in zip(self.keys, self.vectors):
                w.writerow([pid, sidx] + [repr(float(v)) for v in row])


def _window_cooccurrence(streams: Sequence[Sequence[int]], vocab_size: int, window: int) -> np.ndarray:
    counts = np.zeros((vocab_size, vocab_size), dtype=np.float64)
    for stream in streams:
        ids = np.asarray(stream, dtype=np.int64)
        n = ids.shape[0]
        for off in range(1, window + 1):
            if n <= off:
                break
            left, right = ids[:-off], ids[off:]
            np.add.at(counts, (left, right), 1.0)
            np.add.at(counts, (right, left), 1.0)
    return counts


def compute_ppmi(counts: np.ndarray) -> np.ndarray:
    """Positive pointwise mutual information; independent pairs clamp to 0."""
    total = counts.sum()
    if total == 0:
        raise DataError("no co-occurrences observed")
    marginals = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / np.outer(marginals, marginals))
    pmi[~np.isfinite(pmi)] = 0.0
    return np.maximum(pmi, 0.0)


def _randomized_factorization(
    m: np.ndarray, dim: int, seed: int, n_iter: int = 20, oversample: int = 10
) -> np.ndarray:
    """Rank-``dim`` token vectors U_d * sqrt(s_d) via randomized subspace
    iteration with per-step QR re-orthonormalization."""
    rng = np.random.default_rng(seed)
    k = min(dim + oversample, m.shape[0])
    y = m @ rng.standard_normal((m.shape[1], k))
    q, _ = np.linalg.qr(y)
    for _ in range(n_iter):
        q, _ = np.linalg.qr(m.T @ q)
        q, _ = np.linalg.qr(m @ q)
    b = q.T @ m
    u_b, s, _ = np.linalg.svd(b, full_matrices=False)
    u = (q @ u_b)[:, :dim]
    return u * np.sqrt(s[:dim])


def embed_baseline(
    keys: Sequence[Key],
    sequences: Sequence[TokenSequence],
    vocab_size: int,
    dim: int = 200,
    window: int = 5,
    seed: int = 0,
) -> EmbeddingMatrix:
    """Mean-pooled PPMI-factorization snapshot vectors, unit-normalized.

    CLS/SEP/PAD ids are excluded both from the co-occurrence stream and from
    pooling.
    """
    if len(keys) != len(sequences):
        raise DataError("keys and sequences length mismatch")
    streams = [seq.content_ids() for seq in sequences]
    counts = _window_cooccurrence(streams, vocab_size, window)
    active = int(np.count_nonzero(counts.sum(axis=1)))
    if active < 2:
        raise DataError(f"embed_baseline needs >=2 active tokens, found {active}")
    ppmi = compute_ppmi(counts)
    token_vecs = _randomized_factorization(ppmi, min(dim, vocab_size), seed)

    rows = np.zeros((len(streams), token_vecs.shape[1]), dtype=np.float64)
    for i, stream in enumerate(streams):
        if stream:
            rows[i] = token_vecs[list(stream)].mean(axis=0)
    return EmbeddingMatrix(list(keys), rows).normalized()


def ingest_embeddings(
    path,
    expected_keys: Sequence[Key] | None = None,
    normalize: bool = False,
) -> EmbeddingMatrix:
    """Read the embedding CSV contract (patient_id, snapshot_index, e_0..e_{d-1}).

    Rows are aligned to ``expected_keys`` when given; a missing or malformed
    row is a named error.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["patient_id", "snapshot_index"]:
            raise DataError(f"{path}: expected header patient_id,snapshot_index,e_0..")
        dim = len(header) - 2
        keys: list[Key] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            key = (row[0], int(row[1]))
            if len(row) - 2 != dim:
                raise DataError(
                    f"{path}: row for {key} has {len(row) - 2} values, expected {dim}"
                )
            values = [float(v) for v in row[2:]]
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: non-finite value in row for {key} (line {line_no})")
            keys.append(key)
            rows.append(values)

    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    if expected_keys is not None:
        index = {k: i for i, k in enumerate(keys)}
        missing = [k for k in expected_keys if k not in index]
        if missing:
            raise DataError(f"{path}: missing embedding rows for {missing[:5]}")
        order = [index[k] for k in expected_keys]
        keys = list(expected_keys)
        matrix = matrix[order]
    out = EmbeddingMatrix(keys, matrix)
    return out.normalized() if normalize else out


# ---------------------------------------------------------------------------
# Classifier head


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    weight_decay: float = 0.01
    evals_per_epoch: int = 4
    patience: int = 8
    seed: int = 0


@dataclass
class ClassifierModel:
    weights: np.ndarray  # (d, 2)
    bias: np.ndarray  # (2,)
    config: ClassifierConfig = field(default_factory=ClassifierConfig)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x)[:, 1] >= 0.5).astype(np.int64)

    def save(self, path) -> None:
        obj = {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "config": self.config.__dict__,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=np.asarray(obj["bias"], dtype=np.float64),
            config=ClassifierConfig(**obj["config"]),
        )


def cross_entropy(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> float:
    p = model.predict_proba(x)
    eps = 1e-300
    nll = -np.log(p[np.arange(len(y)), y] + eps).mean()
    reg = 0.5 * model.config.weight_decay * float((model.weights**2).sum())
    return float(nll + reg)


def loss_gradients(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray, weight_decay: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of mean softmax cross-entropy + L2 weight penalty (bias unpenalized)."""
    p = softmax(x @ weights + bias)
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    grad_w = x.T @ p + weight_decay * weights
    grad_b = p.sum(axis=0)
    return grad_w, grad_b


def _recall_precision(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float]:
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    recall = tp / (tp + fn) if (tp + fn) else float("nan")
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    return recall, precision


def train_single(
    x: np.ndarray,
    y: np.ndarray,
    x_val: np.ndarray | None,
    y_val: np.ndarray | None,
    config: ClassifierConfig,
) -> ClassifierModel:
    """Mini-batch gradient descent with weight decay and early stopping on the
    validation recall+precision, checked ``evals_per_epoch`` times per epoch."""
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DataError("training fold contains a single class")
    d = x.shape[1]
    weights = np.zeros((d, 2), dtype=np.float64)
    bias = np.zeros(2, dtype=np.float64)
    if config.epochs == 0:
        return ClassifierModel(weights, bias, config)

    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    eval_every = max(1, steps_per_epoch // config.evals_per_epoch)
    monitor = x_val is not None and y_val is not None and len(np.unique(y_val)) == 2

    best_score = -np.inf
    best = (weights.copy(), bias.copy())
    checks_since_best = 0
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            gw, gb = loss_gradients(weights, bias, x[idx], y[idx], config.weight_decay)
            weights -= config.learning_rate * gw
            bias -= config.learning_rate * gb
            step += 1
            if monitor and step % eval_every == 0:
                probe = ClassifierModel(weights, bias, config)
                r, p = _recall_precision(np.asarray(y_val), probe.predict(x_val))
                score = (0.0 if math.isnan(r) else r) + p
                if score > best_score + 1e-12:
                    best_score = score
                    best = (weights.copy(), bias.copy())
                    checks_since_best = 0
                else:
                    checks_since_best += 1
                    if checks_since_best >= config.patience:
                        return ClassifierModel(best[0], best[1], config)
    if monitor and best_score > -np.inf:
        return ClassifierModel(best[0], best[1], config)
    return ClassifierModel(weights, bias, config)


def train_classifier(
    embeddings: EmbeddingMatrix,
    labels: dict[str, int],
    folds: FoldAssignment,
    config: ClassifierConfig,
) -> dict[int, ClassifierModel]:
    """Train one model per fold rotation; snapshot labels are the patient
    label broadcast to every snapshot."""
    y = np.array([labels[pid] for pid, _ in embeddings.keys], dtype=np.int64)
    fold_of_row = np.array([folds.folds[pid] for pid, _ in embeddings.keys], dtype=np.int64)
    models: dict[int, ClassifierModel] = {}
    for i in range(folds.k):
        split = folds.split(i)
        val_f, test_f = i, (i + 1) % folds.k
        train_mask = (fold_of_row != val_f) & (fold_of_row != test_f)
        val_mask = fold_of_row == val_f
        models[i] = train_single(
            embeddings.vectors[train_mask],
            y[train_mask],
            embeddings.vectors[val_mask],
            y[val_mask],
            config,
        )
    return models


def evaluate(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """Binary recall/precision at threshold 0.5 on P(y=1)."""
    y = np.asarray(y, dtype=np.int64)
    if not np.any(y == 1):
        raise DataError("evaluate: no positive examples, recall undefined")
    recall, precision = _recall_precision(y, model.predict(np.asarray(x, dtype=np.float64)))
    return {"recall": recall, "precision": precision}
