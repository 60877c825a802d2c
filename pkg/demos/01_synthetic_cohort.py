#!/usr/bin/env python3
"""Generate a synthetic cohort with planted progression structure and walk
through the cohort-construction steps: visit aggregation, case-control
matching, snapshot windowing, and cross-validation folds."""

import collections
import tempfile
from pathlib import Path

from trajlens import cohort as ch
from trajlens.synth import bundled_profile_t2d, generate_cohort

profile = bundled_profile_t2d()
print("bundled profile:", profile.name)
for spec in profile.specs:
    print(f"  archetype {spec.archetype_id} ({spec.name}): "
          f"male {spec.male_fraction:.1%}, age at diagnosis ~{spec.age_mean}")

# --- generate and write the input files -----------------------------------
outdir = Path(tempfile.mkdtemp(prefix="trajlens_demo_"))
cohort = generate_cohort(profile, n_patients=20, seed=42)
cohort.write(outdir / "events.jsonl", outdir / "patients.jsonl", outdir / "ground_truth.json")
print(f"\nwrote {len(cohort.events)} events for {len(cohort.patients)} patients to {outdir}")

events = ch.read_events_jsonl(outdir / "events.jsonl")
patients = ch.read_patients_jsonl(outdir / "patients.jsonl")
cases = [p for p in patients if p.label == ch.Label.CASE]
pool = [p for p in patients if p.label == ch.Label.CONTROL]

# --- visit aggregation: same-day dedup + <7-day hospital merging -----------
example = cases[0]
example.visits = ch.aggregate_visits(events[example.patient_id])
print(f"\npatient {example.patient_id}: {len(events[example.patient_id])} events "
      f"-> {len(example.visits)} visits after aggregation")

# --- case-control matching on sex and birth year ---------------------------
for record in pool:
    record.visits = ch.aggregate_visits(events[record.patient_id])
match = ch.match_controls(cases, pool, seed=0)
print(f"matched {len(match.controls)} controls, {len(match.unmatched)} unmatched")

# --- snapshots around the diagnosis date -----------------------------------
snapshots = ch.build_snapshots(example, profile.bounds, profile.exclude_codes)
print(f"\nsnapshot windows for {example.patient_id} "
      f"(diagnosis {example.diagnosis_date}):")
for snap in snapshots:
    print(f"  window [{snap.window_start:+.0f}, {snap.window_end:+.0f}) years: "
          f"{len(snap.descriptions)} events, "
          f"mean time to diagnosis {snap.mean_time_to_diagnosis:+.2f}y")
print("first descriptions:", list(snapshots[0].descriptions[:4]))

# --- five folds, rotation scheme -------------------------------------------
folds = ch.assign_folds([p.patient_id for p in cases], k=5, seed=0)
sizes = collections.Counter(folds.folds.values())
print(f"\nfold sizes: {dict(sorted(sizes.items()))}")
split = folds.split(0)
print(f"model 0: train {len(split.train)}, validation {len(split.validation)}, "
      f"test {len(split.test)} (validation=f_0, test=f_1)")
