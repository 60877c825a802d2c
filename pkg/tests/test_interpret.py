import datetime as dt
import random

import numpy as np
import pytest
from scipy import stats

from trajlens.cohort import Label, PatientRecord, Visit, build_snapshots
from trajlens.errors import ConfigurationError, DegenerateInput
from trajlens.interpret import (
    CorrelationRecord,
    MarkerMatrix,
    assign_themes,
    build_marker_matrix,
    correlate_markers,
    dedup_synonyms,
    default_theme_table,
    l2_rank,
    point_biserial,
    read_markers_csv,
    write_markers_csv,
)

# Tables 1 and 2 rows: (theme, marker, r_u1, r_u2, published L2)
COMORBIDITY_TABLE = [
    ("Erectile dysfunction", "Erectile dysfunction", 0.588, -0.284, 0.653),
    ("Cardiovascular disease", "Atrial fibrillation", -0.045, 0.22, 0.225),
    ("Cardiovascular disease", "Coronary heart disease", -0.0, 0.211, 0.211),
    ("Cardiovascular disease", "Heart failure", 0.032, 0.187, 0.19),
    ("Renal failure", "Chronic renal failure", 0.099, 0.216, 0.238),
    ("Renal failure", "Acute renal failure", 0.003, 0.206, 0.206),
    ("T2D complications", "Diabetic retinopathy", 0.329, 0.219, 0.395),
    ("T2D complications", "T2D with neurological complications", 0.187, 0.152, 0.241),
    ("T2D complications", "Diabetic polyneuropathy", 0.178, 0.148, 0.231),
    ("T2D complications", "Diabetic nephropathy", 0.154, 0.129, 0.2),
    ("T2D without complications", "T2D without complications", -0.003, 0.353, 0.353),
]
MEDICATION_TABLE = [
    ("Cardiovascular", "Aspirin", 0.125, 0.026, 0.127),
    ("Cardiovascular", "Bisoprolol", 0.062, 0.111, 0.127),
    ("Cardiovascular", "Simvastatin", 0.082, -0.043, 0.093),
    ("Cardiovascular", "Furosemide", 0.052, 0.075, 0.092),
    ("Cardiovascular", "Clopidogrel", 0.056, 0.069, 0.088),
    ("Diabetes", "Glucose testing strips", 0.151, 0.043, 0.157),
    ("Diabetes", "Insulin", 0.121, 0.096, 0.154),
    ("Diabetes", "Metformin", 0.141, -0.024, 0.143),
    ("Diabetes", "Diabetes lancets", 0.123, 0.015, 0.124),
    ("Diabetes", "Gliclazide", 0.099, -0.003, 0.1),
    ("Infection", "Amoxicillin", 0.044, -0.081, 0.092),
    ("Urological", "Sildenafil", 0.177, -0.064, 0.188),
    ("Urological", "Tadalafil", 0.122, -0.053, 0.133),
]


class TestPointBiserial:
    def test_perfect_separation(self):
        assert point_biserial([1, 1, 0, 0], [2, 2, 1, 1]) == pytest.approx(1.0)

    def test_constant_u_degenerate(self):
        with pytest.raises(DegenerateInput):
            point_biserial([1, 0, 1, 0], [5, 5, 5, 5])

    def test_single_class_degenerate_names_column(self):
        with pytest.raises(DegenerateInput, match="mycol"):
            point_biserial([1, 1, 1, 1], [1, 2, 3, 4], name="mycol")

    def test_derived_example_via_pearson(self):
        f = np.array([1, 0, 0, 0], dtype=float)
        u = np.array([4, 1, 2, 3], dtype=float)
        assert point_biserial(f, u) == pytest.approx(np.corrcoef(f, u)[0, 1], abs=1e-12)
        assert point_biserial(f, u) == pytest.approx(0.7746, abs=1e-4)

    def test_equals_pearson_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(4, 500))
            f = rng.integers(0, 2, size=n).astype(float)
            u = rng.normal(size=n)
            if f.min() == f.max() or u.std() == 0:
                continue
            r = point_biserial(f, u)
            assert abs(r - np.corrcoef(f, u)[0, 1]) <= 1e-12
            assert abs(r) <= 1.0 + 1e-12

    def test_matches_scipy(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(5, 60))
            f = rng.integers(0, 2, size=n).astype(float)
            u = rng.normal(size=n)
            if f.min() == f.max():
                continue
            assert point_biserial(f, u) == pytest.approx(
                stats.pointbiserialr(f, u).statistic, abs=1e-12
            )

    def test_affine_behaviour(self):
        rng = np.random.default_rng(2)
        f = rng.integers(0, 2, size=50).astype(float)
        f[0], f[1] = 0, 1
        u = rng.normal(size=50)
        base = point_biserial(f, u)
        assert point_biserial(f, 3.5 * u + 11) == pytest.approx(base, abs=1e-12)
        assert point_biserial(f, -u) == pytest.approx(-base, abs=1e-12)

    def test_non_binary_rejected(self):
        with pytest.raises(ConfigurationError):
            point_biserial([0, 1, 2], [1.0, 2.0, 3.0])


class TestL2Rank:
    def test_published_l2_norms(self):
        for _, marker, r1, r2, l2 in COMORBIDITY_TABLE + MEDICATION_TABLE:
            rec = CorrelationRecord(marker, r1, r2)
            assert rec.l2 == pytest.approx(l2, abs=0.001)

    def test_zero_pair(self):
        assert CorrelationRecord("x", 0.0, 0.0).l2 == 0.0

    def test_descending_and_topk(self):
        records = [
            CorrelationRecord(m, r1, r2) for _, m, r1, r2, _ in COMORBIDITY_TABLE
        ]
        ranked = l2_rank(records, top_k=None)
        values = [r.l2 for r in ranked]
        assert values == sorted(values, reverse=True)
        assert ranked[0].marker == "Erectile dysfunction"
        assert len(l2_rank(records, top_k=5)) == 5

    def test_ranking_is_permutation(self):
        rng = np.random.default_rng(4)
        records = [
            CorrelationRecord(f"m{i}", float(rng.normal()), float(rng.normal()))
            for i in range(30)
        ]
        ranked = l2_rank(records, top_k=None)
        assert sorted(r.marker for r in ranked) == sorted(r.marker for r in records)

    def test_axis_swap_and_negation_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            r1, r2 = rng.normal(), rng.normal()
            d = CorrelationRecord("x", r1, r2).l2
            assert CorrelationRecord("x", r2, r1).l2 == pytest.approx(d, abs=1e-15)
            assert CorrelationRecord("x", -r1, r2).l2 == pytest.approx(d, abs=1e-15)
            assert CorrelationRecord("x", r1, -r2).l2 == pytest.approx(d, abs=1e-15)


class TestDedup:
    def ranked(self):
        return [
            CorrelationRecord("Atrial fibrillation", 0.0, 0.225),
            CorrelationRecord("Coronary heart disease", 0.0, 0.211),
            CorrelationRecord("Atrial fibrillation and flutter", 0.0, 0.2),
        ]

    def test_keeps_highest_in_group(self):
        groups = [{"Atrial fibrillation", "Atrial fibrillation and flutter"}]
        out = dedup_synonyms(self.ranked(), groups)
        names = [r.marker for r in out]
        assert "Atrial fibrillation" in names
        assert "Atrial fibrillation and flutter" not in names

    def test_empty_groups_identity(self):
        assert dedup_synonyms(self.ranked(), []) == self.ranked()

    def test_counting_check(self):
        rng = random.Random(6)
        markers = [f"m{i}" for i in range(20)]
        ranked = [CorrelationRecord(m, rng.random(), rng.random()) for m in markers]
        groups = [{"m0", "m1", "m2"}, {"m5", "m6"}]
        out = dedup_synonyms(l2_rank(ranked, None), groups)
        assert len(out) == 20 - (3 - 1) - (2 - 1)

    def test_marker_in_two_groups_rejected(self):
        with pytest.raises(ConfigurationError):
            dedup_synonyms(self.ranked(), [{"a", "b"}, {"b", "c"}])


class TestThemes:
    def test_insulin_is_diabetes(self):
        table = default_theme_table()
        (rec,) = assign_themes([CorrelationRecord("Insulin", 0.1, 0.1)], table)
        assert rec.theme == "Diabetes"

    def test_unmapped_is_other(self):
        (rec,) = assign_themes([CorrelationRecord("Novel marker", 0.1, 0.1)], {})
        assert rec.theme == "other"

    def test_bundled_table_reproduces_published_themes(self):
        table = default_theme_table()
        for theme, marker, _, _, _ in COMORBIDITY_TABLE + MEDICATION_TABLE:
            assert table[marker] == theme


class TestMarkerMatrix:
    def make_inputs(self):
        diag = dt.date(2000, 1, 1)
        visits = [
            Visit("p1", dt.date(2001, 5, 1), (("C03CA01", "Furosemide"),)),
            Visit("p1", dt.date(2005, 2, 1), (("I48", "Atrial fibrillation"),)),
        ]
        rec = PatientRecord("p1", "F", 1950, "White", visits, diag, Label.CASE)
        snaps = build_snapshots(rec, [-10, 0, 10])
        mapping = {"C03CA01": "Furosemide", "I48": "Atrial fibrillation"}
        return [rec], snaps, mapping

    def test_medication_in_window_marks_one(self):
        records, snaps, mapping = self.make_inputs()
        matrix, unmapped = build_marker_matrix(records, snaps, mapping)
        j = matrix.marker_ids.index("Furosemide")
        assert matrix.values[0, j] == 1
        assert not unmapped

    def test_no_events_in_window_all_zero(self):
        records, snaps, mapping = self.make_inputs()
        matrix, _ = build_marker_matrix(records, snaps, {"ZZZ": "Nothing"})
        assert matrix.values.sum() == 0

    def test_unmapped_counted_not_fatal(self):
        records, snaps, _ = self.make_inputs()
        matrix, unmapped = build_marker_matrix(records, snaps, {"I48": "Atrial fibrillation"})
        assert unmapped == {"C03CA01": 1}

    def test_oracle_recount_on_random_snapshots(self):
        rng = random.Random(13)
        diag = dt.date(2000, 1, 1)
        codes = [f"C{i}" for i in range(12)]
        mapping = {c: f"marker_{c}" for c in codes}
        for _ in range(500):
            visits = [
                Visit(
                    "p1",
                    diag + dt.timedelta(days=rng.randrange(-3500, 3500)),
                    ((rng.choice(codes), "d"),),
                )
                for _ in range(rng.randrange(1, 15))
            ]
            visits.sort(key=lambda v: v.date)
            rec = PatientRecord("p1", "F", 1950, "White", visits, diag, Label.CASE)
            snaps = build_snapshots(rec, [-10, 0, 10])
            if not snaps:
                continue
            matrix, _ = build_marker_matrix([rec], snaps, mapping)
            for i, snap in enumerate(snaps):
                # independent scan straight off the visit list
                from trajlens.cohort import add_years

                lo = add_years(diag, snap.window_start)
                hi = add_years(diag, snap.window_end)
                expect = {
                    mapping[c]
                    for v in visits
                    if lo <= v.date < hi
                    for c, _ in v.codes
                }
                got = {
                    matrix.marker_ids[j]
                    for j in np.flatnonzero(matrix.values[i])
                }
                assert got == expect

    def test_zero_variance_flagging(self):
        matrix = MarkerMatrix(["a", "b"], [("p", 0), ("p", 1)], np.array([[1, 0], [1, 1]]))
        assert matrix.zero_variance_markers() == ["a"]

    def test_csv_roundtrip(self, tmp_path):
        records, snaps, mapping = self.make_inputs()
        matrix, _ = build_marker_matrix(records, snaps, mapping)
        path = tmp_path / "markers.csv"
        write_markers_csv(path, matrix)
        loaded = read_markers_csv(path)
        assert loaded.marker_ids == matrix.marker_ids
        assert loaded.snapshot_keys == matrix.snapshot_keys
        assert np.array_equal(loaded.values, matrix.values)


class TestCorrelateMarkers:
    def test_pooled_and_skip_degenerate(self):
        rng = np.random.default_rng(3)
        n = 40
        keys = [("p", i) for i in range(n)]
        coords = rng.normal(size=(n, 2))
        values = np.zeros((n, 3), dtype=int)
        values[:, 0] = (coords[:, 0] > 0).astype(int)
        values[:, 1] = rng.integers(0, 2, size=n)
        # column 2 stays constant -> degenerate
        matrix = MarkerMatrix(["aligned", "noise", "flat"], keys, values)
        records, skipped = correlate_markers(matrix, coords)
        assert skipped == ["flat"]
        by_name = {r.marker: r for r in records}
        assert by_name["aligned"].r_u1 > 0.5

    def test_per_window_mode(self):
        rng = np.random.default_rng(8)
        keys = [("p", i) for i in range(20)]
        coords = rng.normal(size=(20, 2))
        values = rng.integers(0, 2, size=(20, 1))
        values[0], values[1] = 0, 1
        matrix = MarkerMatrix(["m"], keys, values)
        windows = {k: (0 if i < 10 else 1) for i, k in enumerate(keys)}
        grouped, _ = correlate_markers(matrix, coords, per_window=windows)
        assert set(grouped) == {0, 1}
