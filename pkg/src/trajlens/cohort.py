"""EHR cohort construction: event ingestion, visit aggregation, labelling,
case-control matching, snapshot windowing and cross-validation folds.

Dates are calendar dates; offsets relative to the diagnosis anchor are
expressed in signed years (days / 365.25). Window boundaries use calendar-year
arithmetic (same month/day, shifted year), so a window bound of -10 on a
2000-06-15 anchor is exactly 1990-06-15.
"""

from __future__ import annotations

import datetime as dt
import json
import random
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .errors import ConfigurationError, DataError

DAYS_PER_YEAR = 365.25
DEFAULT_BOUNDS = (-10.0, 0.0, 10.0, 20.0)


class Ontology(str, Enum):
    GP = "GP"
    HOSPITAL = "HOSPITAL"
    MEDICATION = "MEDICATION"


class Label(str, Enum):
    CASE = "CASE"
    CONTROL = "CONTROL"
    DROPPED = "DROPPED"


@dataclass(frozen=True)
class Event:
    patient_id: str
    date: dt.date
    ontology: Ontology
    code: str
    description: str

    def __post_init__(self):
        if not self.description:
            raise DataError(f"event {self.patient_id}/{self.code}: empty description")


@dataclass(frozen=True)
class Visit:
    """One admission: unique (code, description) pairs in first-seen order."""

    patient_id: str
    date: dt.date
    codes: tuple[tuple[str, str], ...]
    ontologies: frozenset[Ontology] = frozenset()

    @property
    def code_set(self) -> set[str]:
        return {c for c, _ in self.codes}


@dataclass
class PatientRecord:
    patient_id: str
    sex: str
    birth_year: int
    ethnicity: str
    visits: list[Visit] = field(default_factory=list)
    diagnosis_date: dt.date | None = None
    label: Label = Label.CONTROL
    index_date: dt.date | None = None

    @property
    def anchor_date(self) -> dt.date | None:
        """Diagnosis date for cases; assigned index date for matched controls."""
        return self.diagnosis_date if self.diagnosis_date is not None else self.index_date

    def all_codes(self) -> set[str]:
        return {c for v in self.visits for c, _ in v.codes}


@dataclass(frozen=True)
class Snapshot:
    """Events of one patient inside one time window around the anchor date.

    ``snapshot_index`` is the unique per-patient sequence position (re-assigned
    after max-length splitting); ``window_index`` identifies the originating
    window in the bounds grid. ``dates``/``codes``/``descriptions`` run in
    parallel, time-ordered.
    """

    patient_id: str
    snapshot_index: int
    window_index: int
    window_start: float
    window_end: float
    anchor_date: dt.date
    dates: tuple[dt.date, ...]
    codes: tuple[str, ...]
    descriptions: tuple[str, ...]
    mean_time_to_diagnosis: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.patient_id, self.snapshot_index)


@dataclass
class FoldSplit:
    model_index: int
    train: list[str]
    validation: list[str]
    test: list[str]


@dataclass
class FoldAssignment:
    """Patient -> fold index; per-model splits follow the rotation scheme
    validation=f_i, test=f_((i+1) mod k), train=the remaining folds."""

    folds: dict[str, int]
    k: int

    def fold_ids(self, i: int) -> list[str]:
        return sorted(p for p, f in self.folds.items() if f == i)

    def split(self, model_index: int) -> FoldSplit:
        if not 0 <= model_index < self.k:
            raise ConfigurationError(f"model index {model_index} outside 0..{self.k - 1}")
        val = model_index
        test = (model_index + 1) % self.k
        train = [p for p, f in sorted(self.folds.items()) if f not in (val, test)]
        return FoldSplit(model_index, train, self.fold_ids(val), self.fold_ids(test))

    def to_json(self) -> dict:
        return {"k": self.k, "folds": dict(sorted(self.folds.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "FoldAssignment":
        return cls(folds=dict(obj["folds"]), k=int(obj["k"]))


def parse_date(raw: str, context: str = "") -> dt.date:
    try:
        return dt.date.fromisoformat(raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid date {raw!r}{' in ' + context if context else ''}") from exc


def add_years(d: dt.date, years: float) -> dt.date:
    """Shift a date by (possibly fractional) years, calendar-aware for whole years."""
    whole = int(years)
    frac = years - whole
    try:
        shifted = d.replace(year=d.year + whole)
    except ValueError:  # Feb 29 -> Feb 28
        shifted = d.replace(year=d.year + whole, day=28)
    if frac:
        shifted += dt.timedelta(days=round(frac * DAYS_PER_YEAR))
    return shifted


def years_between(d: dt.date, anchor: dt.date) -> float:
    """Signed offset of ``d`` relative to ``anchor`` in years."""
    return (d - anchor).days / DAYS_PER_YEAR


# ---------------------------------------------------------------------------
# Visit aggregation


def aggregate_visits(
    events: Sequence[Event],
    merge_window_days: int = 7,
    merge_scope: str = "hospital",
) -> list[Visit]:
    """Collapse one patient's events into visits.

    Same-date events form one provisional visit. A single left-to-right pass
    then merges a visit into the current group when its ORIGINAL date is less
    than ``merge_window_days`` after the group's earliest date. With the
    default ``merge_scope="hospital"`` only visits containing hospital events
    take part in window merging; ``"all"`` merges everything, ``"none"``
    disables the pass.
    """
    if merge_scope not in ("hospital", "all", "none"):
        raise ConfigurationError(f"unknown merge_scope {merge_scope!r}")
    if not events:
        return []
    patients = {e.patient_id for e in events}
    if len(patients) > 1:
        raise DataError(f"aggregate_visits expects one patient, got {sorted(patients)}")

    ordered = sorted(events, key=lambda e: e.date)
    provisional: list[Visit] = []
    for ev in ordered:
        if provisional and provisional[-1].date == ev.date:
            last = provisional[-1]
            provisional[-1] = Visit(
                patient_id=last.patient_id,
                date=last.date,
                codes=_dedup_codes(last.codes + ((ev.code, ev.description),)),
                ontologies=last.ontologies | {ev.ontology},
            )
        else:
            provisional.append(
                Visit(ev.patient_id, ev.date, ((ev.code, ev.description),), frozenset({ev.ontology}))
            )

    if merge_scope == "none":
        return provisional

    def mergeable(v: Visit) -> bool:
        return merge_scope == "all" or Ontology.HOSPITAL in v.ontologies

    merged: list[Visit] = []
    group: Visit | None = None
    for v in provisional:
        if (
            group is not None
            and mergeable(group)
            and mergeable(v)
            and (v.date - group.date).days < merge_window_days
        ):
            group = Visit(
                patient_id=group.patient_id,
                date=group.date,
                codes=_dedup_codes(group.codes + v.codes),
                ontologies=group.ontologies | v.ontologies,
            )
        else:
            if group is not None:
                merged.append(group)
            group = v
    if group is not None:
        merged.append(group)
    return merged


def _dedup_codes(codes: Iterable[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    seen: set[str] = set()
    out = []
    for code, desc in codes:
        if code not in seen:
            seen.add(code)
            out.append((code, desc))
    return tuple(out)


# ---------------------------------------------------------------------------
# Labelling and matching


def relabel_by_medication(
    record: PatientRecord,
    case_meds: frozenset[str] | set[str],
    t1d_meds: frozenset[str] | set[str] = frozenset(),
    t2d_codes: frozenset[str] | set[str] = frozenset(),
    t1d_codes: frozenset[str] | set[str] = frozenset(),
    undefined_codes: frozenset[str] | set[str] = frozenset(),
) -> PatientRecord:
    """Resolve conflicting/undefined diabetes status from prescriptions.

    Ambiguous records (both T1D and T2D codes, or only undefined diabetes
    codes) become CASE when they carry a case medication and no exclusive
    type-1 medication, otherwise DROPPED. Unambiguous records pass through.
    """
    if not case_meds:
        raise ConfigurationError("relabel_by_medication: case medication set is empty")
    codes = record.all_codes()
    has_t2d = bool(codes & set(t2d_codes))
    has_t1d = bool(codes & set(t1d_codes))
    has_undef = bool(codes & set(undefined_codes))
    ambiguous = (has_t1d and has_t2d) or (has_undef and not has_t2d and not has_t1d)
    if not ambiguous:
        return record

    if codes & set(case_meds) and not codes & set(t1d_meds):
        diag = record.diagnosis_date or _earliest_code_date(
            record, set(t2d_codes) | set(t1d_codes) | set(undefined_codes)
        )
        out = replace_record(record, label=Label.CASE, diagnosis_date=diag)
    else:
        out = replace_record(record, label=Label.DROPPED)
    return out


def _earliest_code_date(record: PatientRecord, codes: set[str]) -> dt.date | None:
    dates = [v.date for v in record.visits if v.code_set & codes]
    return min(dates) if dates else None


def replace_record(record: PatientRecord, **kwargs) -> PatientRecord:
    out = PatientRecord(
        patient_id=record.patient_id,
        sex=record.sex,
        birth_year=record.birth_year,
        ethnicity=record.ethnicity,
        visits=list(record.visits),
        diagnosis_date=record.diagnosis_date,
        label=record.label,
        index_date=record.index_date,
    )
    for k, v in kwargs.items():
        setattr(out, k, v)
    return out


def drop_t1d_controls(
    pool: Sequence[PatientRecord], t1d_codes: frozenset[str] | set[str]
) -> list[PatientRecord]:
    """Remove control candidates carrying exclusive type-1 diagnosis codes."""
    return [r for r in pool if not r.all_codes() & set(t1d_codes)]


@dataclass
class MatchResult:
    controls: list[PatientRecord]
    pairs: list[tuple[str, str]]
    unmatched: list[str]


def match_controls(
    cases: Sequence[PatientRecord],
    pool: Sequence[PatientRecord],
    seed: int,
    age_tolerance: int = 2,
) -> MatchResult:
    """Draw one control per case, same sex and birth year within the tolerance.

    Sampling is without replacement and deterministic under ``seed``. Matched
    controls receive the case's diagnosis date as their index date. Cases with
    an exhausted stratum are reported in ``unmatched`` with a warning.
    """
    case_ids = {c.patient_id for c in cases}
    overlap = case_ids & {p.patient_id for p in pool}
    if overlap:
        raise DataError(f"control pool overlaps cases: {sorted(overlap)[:5]}")

    rng = random.Random(seed)
    remaining = sorted(pool, key=lambda r: r.patient_id)
    taken: set[str] = set()
    controls: list[PatientRecord] = []
    pairs: list[tuple[str, str]] = []
    unmatched: list[str] = []

    for case in sorted(cases, key=lambda r: r.patient_id):
        candidates = [
            p
            for p in remaining
            if p.patient_id not in taken
            and p.sex == case.sex
            and abs(p.birth_year - case.birth_year) <= age_tolerance
        ]
        if not candidates:
            unmatched.append(case.patient_id)
            continue
        chosen = candidates[rng.randrange(len(candidates))]
        taken.add(chosen.patient_id)
        matched = replace_record(chosen, label=Label.CONTROL, index_date=case.diagnosis_date)
        controls.append(matched)
        pairs.append((case.patient_id, matched.patient_id))

    if unmatched:
        warnings.warn(f"match_controls: {len(unmatched)} case(s) unmatched", stacklevel=2)
    return MatchResult(controls=controls, pairs=pairs, unmatched=unmatched)


# ---------------------------------------------------------------------------
# Snapshots


def build_snapshots(
    record: PatientRecord,
    bounds: Sequence[float] = DEFAULT_BOUNDS,
    exclude_codes: frozenset[str] | set[str] = frozenset(),
) -> list[Snapshot]:
    """Slice a record's visit events into half-open windows around the anchor.

    Events carrying an excluded code are removed before windowing; windows
    with no remaining events yield no snapshot.
    """
    bounds = list(bounds)
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])) or len(bounds) < 2:
        raise ConfigurationError(f"bounds must be strictly increasing, got {bounds}")
    anchor = record.anchor_date
    if anchor is None:
        raise DataError(f"patient {record.patient_id}: no diagnosis or index date to anchor on")

    boundary_dates = [add_years(anchor, b) for b in bounds]
    flat: list[tuple[dt.date, str, str]] = []
    for visit in sorted(record.visits, key=lambda v: v.date):
        for code, desc in visit.codes:
            if code not in exclude_codes:
                flat.append((visit.date, code, desc))

    snapshots: list[Snapshot] = []
    for i in range(len(bounds) - 1):
        lo, hi = boundary_dates[i], boundary_dates[i + 1]
        window = [(d, c, s) for d, c, s in flat if lo <= d < hi]
        if not window:
            continue
        dates = tuple(d for d, _, _ in window)
        snapshots.append(
            Snapshot(
                patient_id=record.patient_id,
                snapshot_index=i,
                window_index=i,
                window_start=bounds[i],
                window_end=bounds[i + 1],
                anchor_date=anchor,
                dates=dates,
                codes=tuple(c for _, c, _ in window),
                descriptions=tuple(s for _, _, s in window),
                mean_time_to_diagnosis=_mean_offset(dates, anchor),
            )
        )
    return snapshots


def _mean_offset(dates: Sequence[dt.date], anchor: dt.date) -> float:
    first, last = dates[0], dates[-1]
    return ((first - anchor).days + (last - anchor).days) / (2.0 * DAYS_PER_YEAR)


def mean_time_to_diagnosis(snapshot: Snapshot) -> float:
    """Midpoint of the snapshot's first and last event dates, in signed years
    relative to the anchor. A single-event snapshot returns that event's offset."""
    if not snapshot.dates:
        raise DataError(f"snapshot {snapshot.key}: empty")
    return _mean_offset(snapshot.dates, snapshot.anchor_date)


def split_by_max_len(snapshot: Snapshot, vocab, max_len: int = 64) -> list[Snapshot]:
    """Split a snapshot into sub-snapshots each tokenizing to <= max_len tokens
    (specials included). Description order and multiset are preserved; each
    sub-snapshot gets its own mean time to diagnosis."""
    from .tokenizer import count_pieces  # local import to avoid a cycle

    budget = max_len - 2  # CLS + SEP
    counts = [count_pieces(d, vocab) for d in snapshot.descriptions]
    for desc, n in zip(snapshot.descriptions, counts):
        if n > budget:
            raise DataError(
                f"description {desc!r} alone tokenizes to {n} pieces, over the {max_len}-token cap"
            )

    chunks: list[tuple[int, int]] = []
    start, used = 0, 0
    for j, n in enumerate(counts):
        if used + n > budget:
            chunks.append((start, j))
            start, used = j, n
        else:
            used += n
    chunks.append((start, len(counts)))

    if len(chunks) == 1:
        return [snapshot]
    out = []
    for lo, hi in chunks:
        dates = snapshot.dates[lo:hi]
        out.append(
            Snapshot(
                patient_id=snapshot.patient_id,
                snapshot_index=snapshot.snapshot_index,
                window_index=snapshot.window_index,
                window_start=snapshot.window_start,
                window_end=snapshot.window_end,
                anchor_date=snapshot.anchor_date,
                dates=dates,
                codes=snapshot.codes[lo:hi],
                descriptions=snapshot.descriptions[lo:hi],
                mean_time_to_diagnosis=_mean_offset(dates, snapshot.anchor_date),
            )
        )
    return out


def reindex_snapshots(snapshots: Sequence[Snapshot]) -> list[Snapshot]:
    """Assign sequential per-patient snapshot indices (stable in time order),
    keeping window_index as the originating window."""
    by_patient: dict[str, list[Snapshot]] = {}
    for s in snapshots:
        by_patient.setdefault(s.patient_id, []).append(s)
    out: list[Snapshot] = []
    for pid in sorted(by_patient):
        ordered = sorted(
            by_patient[pid], key=lambda s: (s.window_index, s.dates[0], s.snapshot_index)
        )
        for i, s in enumerate(ordered):
            out.append(replace(s, snapshot_index=i))
    return out


# ---------------------------------------------------------------------------
# Folds


def assign_folds(patient_ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldAssignment:
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise DataError("assign_folds: patient ids are not unique")
    if k > len(ids):
        raise ConfigurationError(f"k={k} exceeds the {len(ids)} available patients")
    shuffled = sorted(ids)
    random.Random(seed).shuffle(shuffled)
    folds: dict[str, int] = {}
    base, extra = divmod(len(shuffled), k)
    pos = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        for pid in shuffled[pos : pos + size]:
            folds[pid] = f
        pos += size
    return FoldAssignment(folds=folds, k=k)


# ---------------------------------------------------------------------------
# File formats (events.jsonl / patients.jsonl / snapshots.jsonl / folds.json)


def parse_event_obj(obj: dict, line_no: int | None = None) -> Event:
    ctx = f"events.jsonl line {line_no}" if line_no is not None else "event"
    try:
        ontology = Ontology(obj["ontology"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{ctx}: bad ontology {obj.get('ontology')!r}") from exc
    return Event(
        patient_id=str(obj["patient_id"]),
        date=parse_date(obj.get("date"), f"{ctx} (patient {obj.get('patient_id')}, code {obj.get('code')})"),
        ontology=ontology,
        code=str(obj["code"]),
        description=str(obj["description"]),
    )


def read_events_jsonl(path) -> dict[str, list[Event]]:
    by_patient: dict[str, list[Event]] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            ev = parse_event_obj(json.loads(line), i)
            by_patient.setdefault(ev.patient_id, []).append(ev)
    return by_patient


def read_patients_jsonl(path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            diag = obj.get("diagnosis_date")
            idx = obj.get("index_date")
            records.append(
                PatientRecord(
                    patient_id=str(obj["patient_id"]),
                    sex=str(obj["sex"]),
                    birth_year=int(obj["birth_year"]),
                    ethnicity=str(obj.get("ethnicity", "Unknown")),
                    diagnosis_date=parse_date(diag, f"patients.jsonl line {i}") if diag else None,
                    label=Label(obj.get("label", "CONTROL")),
                    index_date=parse_date(idx, f"patients.jsonl line {i}") if idx else None,
                )
            )
    return records


def snapshot_to_obj(s: Snapshot) -> dict:
    return {
        "patient_id": s.patient_id,
        "snapshot_index": s.snapshot_index,
        "window_index": s.window_index,
        "window_start": s.window_start,
        "window_end": s.window_end,
        "anchor_date": s.anchor_date.isoformat(),
        "dates": [d.isoformat() for d in s.dates],
        "codes": list(s.codes),
        "descriptions": list(s.descriptions),
        "mean_time_to_diagnosis": s.mean_time_to_diagnosis,
    }


def snapshot_from_obj(obj: dict) -> Snapshot:
    return Snapshot(
        patient_id=str(obj["patient_id"]),
        snapshot_index=int(obj["snapshot_index"]),
        window_index=int(obj["window_index"]),
        window_start=float(obj["window_start"]),
        window_end=float(obj["window_end"]),
        anchor_date=parse_date(obj["anchor_date"]),
        dates=tuple(parse_date(d) for d in obj["dates"]),
        codes=tuple(obj["codes"]),
        descriptions=tuple(obj["descriptions"]),
        mean_time_to_diagnosis=float(obj["mean_time_to_diagnosis"]),
    )


def write_snapshots_jsonl(snapshots: Sequence[Snapshot], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in snapshots:
            fh.write(json.dumps(snapshot_to_obj(s), sort_keys=True) + "\n")


def read_snapshots_jsonl(path) -> list[Snapshot]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(snapshot_from_obj(json.loads(line)))
    return out
