import collections
import json
import math

import pytest

from trajlens.cohort import Label, read_events_jsonl, read_patients_jsonl
from trajlens.errors import ConfigurationError
from trajlens.synth import (
    ArchetypeSpec,
    GroundTruth,
    bundled_profile_t2d,
    generate_cohort,
    trimmed_profile,
)
from trajlens.tokenizer import train_vocab


@pytest.fixture(scope="module")
def profile():
    return bundled_profile_t2d()


@pytest.fixture(scope="module")
def small_cohort(profile):
    return generate_cohort(trimmed_profile(profile, 2), 50, seed=5)


class TestGenerateCohort:
    def test_case_count(self, small_cohort):
        cases = [p for p in small_cohort.patients if p["label"] == "CASE"]
        assert len(cases) == 100

    def test_one_control_per_case(self, small_cohort):
        controls = [p for p in small_cohort.patients if p["label"] == "CONTROL"]
        assert len(controls) == 100
        # compatible strata: for every case there is a same-sex same-birth-year control
        cases = [p for p in small_cohort.patients if p["label"] == "CASE"]
        case_strata = collections.Counter((p["sex"], p["birth_year"]) for p in cases)
        ctrl_strata = collections.Counter((p["sex"], p["birth_year"]) for p in controls)
        assert case_strata == ctrl_strata

    def test_byte_identical_under_seed(self, profile, tmp_path):
        small = trimmed_profile(profile, 2)
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir()
            generate_cohort(small, 10, seed=9).write(
                d / "events.jsonl", d / "patients.jsonl", d / "truth.json"
            )
        for fname in ("events.jsonl", "patients.jsonl", "truth.json"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_different_seeds_differ(self, profile):
        small = trimmed_profile(profile, 2)
        a = generate_cohort(small, 10, seed=1)
        b = generate_cohort(small, 10, seed=2)
        assert a.events != b.events

    def test_theme_frequencies_within_three_sigma(self, profile):
        cohort = generate_cohort(profile, 60, seed=13)
        truth = cohort.ground_truth
        code_theme = profile.code_theme()
        bounds = profile.bounds
        spec_by_name = {s.name: s for s in profile.specs}
        counts: dict = {}
        for ev in cohort.events:
            arch = truth.archetypes[ev["patient_id"]]
            if arch == "control":
                continue
            pid = ev["patient_id"]
            anchor = next(
                p["diagnosis_date"] for p in cohort.patients if p["patient_id"] == pid
            )
            import datetime as dt

            offset = (
                dt.date.fromisoformat(ev["date"]) - dt.date.fromisoformat(anchor)
            ).days / 365.25
            window = next(
                (w for w in range(len(bounds) - 1) if bounds[w] <= offset < bounds[w + 1]),
                None,
            )
            if window is None:
                window = len(bounds) - 2  # rounding at the upper boundary
            counts.setdefault((arch, window), collections.Counter())[
                code_theme[ev["code"]]
            ] += 1
        for (arch, window), themed in counts.items():
            probs = spec_by_name[arch].window_theme_probs[window]
            total = sum(themed.values())
            for theme, p in probs.items():
                if p == 0:
                    continue
                sigma = math.sqrt(p * (1 - p) / total)
                assert abs(themed[theme] / total - p) <= 3 * sigma + 1e-9, (
                    arch,
                    window,
                    theme,
                )

    def test_too_few_archetypes_or_patients(self, profile):
        with pytest.raises(ConfigurationError):
            generate_cohort(trimmed_profile(profile, 1), 50, seed=0)
        with pytest.raises(ConfigurationError):
            generate_cohort(profile, 5, seed=0)

    def test_degenerate_spec_rejected(self, profile):
        import dataclasses

        bad_spec = dataclasses.replace(
            profile.specs[0],
            window_theme_probs=[{"nonexistent": 1.0}] * 3,
        )
        bad = dataclasses.replace(profile, specs=[bad_spec] + profile.specs[1:])
        with pytest.raises(ConfigurationError):
            generate_cohort(bad, 10, seed=0)

    def test_files_validate_against_cohort_schemas(self, small_cohort, tmp_path):
        small_cohort.write(
            tmp_path / "events.jsonl", tmp_path / "patients.jsonl", tmp_path / "truth.json"
        )
        events = read_events_jsonl(tmp_path / "events.jsonl")
        patients = read_patients_jsonl(tmp_path / "patients.jsonl")
        assert len(patients) == 200
        assert set(events) <= {p.patient_id for p in patients}
        cases = [p for p in patients if p.label == Label.CASE]
        assert all(p.diagnosis_date is not None for p in cases)
        truth = GroundTruth.from_json(json.loads((tmp_path / "truth.json").read_text()))
        assert set(truth.archetypes) == {p.patient_id for p in patients}


class TestBundledProfile:
    def test_four_archetypes(self, profile):
        assert len(profile.specs) == 4

    def test_archetype_one_male_dominant(self, profile):
        assert profile.specs[1].male_fraction == pytest.approx(0.9043)

    def test_demographic_parameters_follow_observed_clusters(self, profile):
        ages = [s.age_mean for s in profile.specs]
        assert ages == pytest.approx([59.43, 56.17, 64.42, 56.43])

    def test_exclusion_codes_are_target_disease(self, profile):
        assert "E11.9" in profile.exclude_codes
        assert "I48" not in profile.exclude_codes

    def test_mapping_and_theme_tables_consistent(self, profile):
        mapping = profile.mapping_table()
        themes = profile.theme_table()
        assert set(mapping.values()) <= set(themes)
        assert themes["Erectile dysfunction"] == "ed"
        assert themes["Metformin"] == "management"
        assert all(
            themes[mapping[code]] == "other"
            for code in mapping
            if code.startswith(("BG", "AD", "AS", "LB", "PR"))
        )

    def test_vocabulary_target_reachable(self, profile):
        cohort = generate_cohort(profile, 25, seed=7)
        corpus = [e["description"] for e in cohort.events]
        vocab = train_vocab(corpus, 2025)
        assert len(vocab) == 2025

    def test_case_meds_nonempty_and_probabilities_sum(self, profile):
        assert profile.case_meds
        profile.validate()
