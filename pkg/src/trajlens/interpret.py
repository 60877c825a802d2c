"""Clinical interpretation of the reduced embedding space.

Binary marker columns (one per canonical disease/medication) are correlated
against each reduced axis with the point-biserial coefficient, ranked by the
L2 norm of the (r_u1, r_u2) pair, de-duplicated within synonym groups, and
mapped to broad clinical themes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cohort import PatientRecord, Snapshot, add_years
from .errors import ConfigurationError, DegenerateInput

Key = tuple[str, int]


@dataclass
class MarkerMatrix:
    marker_ids: list[str]
    snapshot_keys: list[Key]
    values: np.ndarray  # (n_snapshots, n_markers) in {0, 1}
    metadata: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if not np.isin(self.values, (0, 1)).all():
            raise ConfigurationError("marker matrix entries must be binary")

    def zero_variance_markers(self) -> list[str]:
        flat = self.values
        flagged = []
        for j, marker in enumerate(self.marker_ids):
            col = flat[:, j]
            if col.min() == col.max():
                flagged.append(marker)
        return flagged


@dataclass
class CorrelationRecord:
    marker: str
    r_u1: float
    r_u2: float
    theme: str = "other"

    @property
    def l2(self) -> float:
        return float(np.hypot(self.r_u1, self.r_u2))


def build_marker_matrix(
    records: Sequence[PatientRecord],
    snapshots: Sequence[Snapshot],
    mapping_table: dict[str, str],
) -> tuple[MarkerMatrix, dict[str, int]]:
    """Mark each (snapshot, canonical marker) pair present when the patient
    has at least one mapped raw code dated inside the snapshot window.

    Raw events come from the records, so codes excluded from model inputs
    (the target-disease family) are naturally re-included here. Unmapped
    codes are tallied and returned, not fatal.
    """
    by_patient = {r.patient_id: r for r in records}
    markers = sorted(set(mapping_table.values()))
    marker_pos = {m: j for j, m in enumerate(markers)}
    values = np.zeros((len(snapshots), len(markers)), dtype=np.int8)
    unmapped: dict[str, int] = {}

    window_cache: dict[tuple[str, float, float], set[str]] = {}
    for i, snap in enumerate(snapshots):
        cache_key = (snap.patient_id, snap.window_start, snap.window_end)
        hits = window_cache.get(cache_key)
        if hits is None:
            record = by_patient.get(snap.patient_id)
            hits = set()
            if record is not None:
                lo = add_years(snap.anchor_date, snap.window_start)
                hi = add_years(snap.anchor_date, snap.window_end)
                for visit in record.visits:
                    if lo <= visit.date < hi:
                        for code, _ in visit.codes:
                            marker = mapping_table.get(code)
                            if marker is None:
                                unmapped[code] = unmapped.get(code, 0) + 1
                            else:
                                hits.add(marker)
            window_cache[cache_key] = hits
        for marker in hits:
            values[i, marker_pos[marker]] = 1
    matrix = MarkerMatrix(marker_ids=markers, snapshot_keys=[s.key for s in snapshots], values=values)
    return matrix, unmapped


def point_biserial(f: np.ndarray, u: np.ndarray, name: str = "f") -> float:
    """Point-biserial correlation of a binary column against a real column.

    Uses population standard deviation, which makes the value identical to
    the Pearson correlation of u with the 0/1 coding.
    """
    f = np.asarray(f, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if f.shape != u.shape or f.ndim != 1:
        raise ConfigurationError("point_biserial expects two equal-length 1-D columns")
    if not np.isin(f, (0.0, 1.0)).all():
        raise ConfigurationError(f"column {name!r} is not binary")
    n = f.size
    n1 = int(f.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise DegenerateInput(f"column {name!r} has a single class")
    s_n = float(u.std())
    if s_n == 0.0:
        raise DegenerateInput(f"continuous column for {name!r} is constant")
    m1 = float(u[f == 1.0].mean())
    m0 = float(u[f == 0.0].mean())
    p = n1 / n
    q = n0 / n
    return (m1 - m0) / s_n * float(np.sqrt(p * q))


def correlate_markers(
    markers: MarkerMatrix,
    coords: np.ndarray,
    per_window: dict[Key, int] | None = None,
) -> tuple[list[CorrelationRecord] | dict[int, list[CorrelationRecord]], list[str]]:
    """Point-biserial correlations of every marker column against (u1, u2).

    Default pools all snapshots; passing a key->window mapping computes one
    record set per window instead. Degenerate columns are skipped and
    reported in the second return value.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if per_window is None:
        groups = {None: np.arange(len(markers.snapshot_keys))}
    else:
        groups = {}
        for i, key in enumerate(markers.snapshot_keys):
            groups.setdefault(per_window[key], []).append(i)
        groups = {w: np.asarray(ix) for w, ix in groups.items()}

    skipped: list[str] = []
    outputs: dict = {}
    for window, idx in groups.items():
        records = []
        for j, marker in enumerate(markers.marker_ids):
            f = markers.values[idx, j].astype(np.float64)
            try:
                r1 = point_biserial(f, coords[idx, 0], name=marker)
                r2 = point_biserial(f, coords[idx, 1], name=marker)
            except DegenerateInput:
                skipped.append(marker if window is None else f"{marker}@w{window}")
                continue
            records.append(CorrelationRecord(marker=marker, r_u1=r1, r_u2=r2))
        outputs[window] = records
    if per_window is None:
        return outputs[None], skipped
    return outputs, skipped


def l2_rank(records: Sequence[CorrelationRecord], top_k: int | None = 15) -> list[CorrelationRecord]:
    """Descending by L2 norm of the correlation pair; ties by marker id."""
    ranked = sorted(records, key=lambda r: (-r.l2, r.marker))
    return ranked if top_k is None else ranked[:top_k]


def dedup_synonyms(
    ranked: Sequence[CorrelationRecord], synonym_groups: Sequence[set[str]]
) -> list[CorrelationRecord]:
    """Within each synonym group keep only the highest-ranked member."""
    owner: dict[str, int] = {}
    for gi, group in enumerate(synonym_groups):
        for marker in group:
            if marker in owner:
                raise ConfigurationError(f"marker {marker!r} appears in two synonym groups")
            owner[marker] = gi
    seen_groups: set[int] = set()
    out = []
    for rec in ranked:
        gi = owner.get(rec.marker)
        if gi is None:
            out.append(rec)
        elif gi not in seen_groups:
            seen_groups.add(gi)
            out.append(rec)
    return out


def assign_themes(
    ranked: Sequence[CorrelationRecord], theme_table: dict[str, str]
) -> list[CorrelationRecord]:
    return [
        CorrelationRecord(r.marker, r.r_u1, r.r_u2, theme=theme_table.get(r.marker, "other"))
        for r in ranked
    ]


def write_correlations_csv(path, records: Sequence[CorrelationRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theme", "marker", "r_u1", "r_u2", "l2"])
        for r in records:
            w.writerow([r.theme, r.marker, repr(r.r_u1), repr(r.r_u2), repr(r.l2)])


def write_markers_csv(path, matrix: MarkerMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "snapshot_index"] + matrix.marker_ids)
        for key, row in zip(matrix.snapshot_keys, matrix.values):
            w.writerow([key[0], key[1]] + [int(v) for v in row])


def read_markers_csv(path) -> MarkerMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["patient_id", "snapshot_index"]:
            raise ConfigurationError(f"{path}: unexpected header")
        marker_ids = header[2:]
        keys: list[Key] = []
        rows = []
        for row in reader:
            if not row:
                continue
            keys.append((row[0], int(row[1])))
            rows.append([int(v) for v in row[2:]])
    values = np.asarray(rows, dtype=np.int8).reshape(len(rows), len(marker_ids))
    return MarkerMatrix(marker_ids=marker_ids, snapshot_keys=keys, values=values)


def default_theme_table() -> dict[str, str]:
    """Bundled marker -> broad clinical theme mapping for the T2D use case."""
    table = {
        "Erectile dysfunction": "Erectile dysfunction",
        "Atrial fibrillation": "Cardiovascular disease",
        "Atrial fibrillation and flutter": "Cardiovascular disease",
        "Coronary heart disease": "Cardiovascular disease",
        "Heart failure": "Cardiovascular disease",
        "Chronic renal failure": "Renal failure",
        "Acute renal failure": "Renal failure",
        "Diabetic retinopathy": "T2D complications",
        "T2D with neurological complications": "T2D complications",
        "Diabetic polyneuropathy": "T2D complications",
        "Diabetic nephropathy": "T2D complications",
        "T2D without complications": "T2D without complications",
        # medication indications
        "Aspirin": "Cardiovascular",
        "Bisoprolol": "Cardiovascular",
        "Simvastatin": "Cardiovascular",
        "Furosemide": "Cardiovascular",
        "Clopidogrel": "Cardiovascular",
        "Glucose testing strips": "Diabetes",
        "Insulin": "Diabetes",
        "Metformin": "Diabetes",
        "Diabetes lancets": "Diabetes",
        "Gliclazide": "Diabetes",
        "Amoxicillin": "Infection",
        "Sildenafil": "Urological",
        "Tadalafil": "Urological",
    }
    return table
