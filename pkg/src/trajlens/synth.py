"""Synthetic EHR cohorts with planted progression structure.

Each case patient belongs to an archetype that fixes demographics, an event
rate, and a per-window emission distribution over themed code pools. Controls
come from a background-only archetype, one per case with compatible sex and
birth year so downstream matching succeeds. Everything is deterministic under
the seed (per-patient derived generators), so generated files are
byte-identical across runs.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .cohort import DAYS_PER_YEAR, Label, Ontology
from .errors import ConfigurationError

EPOCH_START = dt.date(1995, 1, 1)
DIAGNOSIS_SPAN_DAYS = 5478  # diagnoses drawn inside 1995..2009


@dataclass(frozen=True)
class CodeEntry:
    code: str
    description: str
    ontology: Ontology
    theme: str


@dataclass
class ArchetypeSpec:
    archetype_id: int
    name: str
    male_fraction: float
    age_mean: float
    age_sd: float
    ethnicity_dist: dict[str, float]
    events_per_year: float
    window_theme_probs: list[dict[str, float]]  # one dict per window

    def validate(self, themes: set[str]) -> None:
        if self.events_per_year <= 0:
            raise ConfigurationError(f"archetype {self.name}: rate must be positive")
        for w, probs in enumerate(self.window_theme_probs):
            total = sum(probs.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigurationError(
                    f"archetype {self.name} window {w}: probabilities sum to {total}"
                )
            unknown = set(probs) - themes
            if unknown:
                raise ConfigurationError(
                    f"archetype {self.name} window {w}: unknown themes {sorted(unknown)}"
                )


@dataclass
class CohortProfile:
    name: str
    specs: list[ArchetypeSpec]
    control_spec: ArchetypeSpec
    pools: dict[str, list[CodeEntry]]
    bounds: tuple[float, ...] = (-10.0, 0.0, 10.0, 20.0)
    grid: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0)
    exclude_themes: tuple[str, ...] = ("t2d",)
    case_med_themes: tuple[str, ...] = ("management",)
    t1d_codes: frozenset = frozenset({"E10"})
    undefined_codes: frozenset = frozenset({"E14"})

    @property
    def exclude_codes(self) -> frozenset:
        return frozenset(
            e.code for t in self.exclude_themes for e in self.pools.get(t, [])
        )

    @property
    def t2d_codes(self) -> frozenset:
        return self.exclude_codes

    @property
    def case_meds(self) -> frozenset:
        return frozenset(
            e.code for t in self.case_med_themes for e in self.pools.get(t, [])
        )

    def mapping_table(self) -> dict[str, str]:
        """Raw code -> canonical marker (the entry's description)."""
        return {e.code: e.description for pool in self.pools.values() for e in pool}

    def theme_table(self) -> dict[str, str]:
        """Canonical marker -> broad theme; background markers map to 'other'."""
        out = {}
        for theme, pool in self.pools.items():
            label = "other" if theme == "background" else theme
            for e in pool:
                out[e.description] = label
        return out

    def code_theme(self) -> dict[str, str]:
        return {e.code: e.theme for pool in self.pools.values() for e in pool}

    def all_descriptions(self) -> list[str]:
        return [e.description for pool in self.pools.values() for e in pool]

    def validate(self) -> None:
        themes = set(self.pools)
        if len(self.specs) < 1:
            raise ConfigurationError("profile needs at least one archetype")
        for spec in self.specs + [self.control_spec]:
            spec.validate(themes)
            for probs in spec.window_theme_probs:
                if all(
                    not self.pools.get(t) for t, p in probs.items() if p > 0
                ):
                    raise ConfigurationError(
                        f"archetype {spec.name}: a window draws only from empty pools"
                    )


@dataclass
class GroundTruth:
    archetypes: dict[str, str]  # patient -> archetype name ("control" for pool)
    marker_themes: dict[str, str]
    stage_bounds: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "archetypes": dict(sorted(self.archetypes.items())),
            "marker_themes": dict(sorted(self.marker_themes.items())),
            "stage_bounds": list(self.stage_bounds),
        }

    @classmethod
    def from_json(cls, obj) -> "GroundTruth":
        return cls(
            archetypes=dict(obj["archetypes"]),
            marker_themes=dict(obj["marker_themes"]),
            stage_bounds=tuple(obj["stage_bounds"]),
        )


@dataclass
class GeneratedCohort:
    events: list[dict]  # event objects in file order
    patients: list[dict]
    ground_truth: GroundTruth

    def write(self, events_path, patients_path, truth_path=None) -> None:
        with open(events_path, "w", encoding="utf-8") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
        with open(patients_path, "w", encoding="utf-8") as fh:
            for p in self.patients:
                fh.write(json.dumps(p, sort_keys=True) + "\n")
        if truth_path is not None:
            with open(truth_path, "w", encoding="utf-8") as fh:
                json.dump(self.ground_truth.to_json(), fh, sort_keys=True, indent=1)


def _sample_categorical(rng: np.random.Generator, dist: dict[str, float]) -> str:
    keys = sorted(dist)
    probs = np.array([dist[k] for k in keys], dtype=np.float64)
    probs = probs / probs.sum()
    return keys[int(rng.choice(len(keys), p=probs))]


def _patient_events(
    rng: np.random.Generator,
    patient_id: str,
    anchor: dt.date,
    spec: ArchetypeSpec,
    profile: CohortProfile,
) -> list[dict]:
    events: list[dict] = []
    bounds = profile.bounds
    for w in range(len(bounds) - 1):
        probs = spec.window_theme_probs[w]
        span = bounds[w + 1] - bounds[w]
        n = int(rng.poisson(spec.events_per_year * span))
        offsets = np.sort(rng.uniform(bounds[w], bounds[w + 1], size=n))
        for off in offsets:
            theme = _sample_categorical(rng, probs)
            pool = profile.pools[theme]
            entry = pool[int(rng.integers(len(pool)))]
            date = anchor + dt.timedelta(days=int(np.floor(off * DAYS_PER_YEAR)))
            events.append(
                {
                    "patient_id": patient_id,
                    "date": date.isoformat(),
                    "ontology": entry.ontology.value,
                    "code": entry.code,
                    "description": entry.description,
                }
            )
    return events


def generate_cohort(profile: CohortProfile, n_patients: int, seed: int) -> GeneratedCohort:
    """Generate ``n_patients`` cases per archetype plus one background-only
    control per case (compatible sex/birth year)."""
    profile.validate()
    if len(profile.specs) < 2:
        raise ConfigurationError("generate_cohort needs >=2 archetypes")
    if n_patients < 10:
        raise ConfigurationError("generate_cohort needs >=10 patients per archetype")

    events: list[dict] = []
    patients: list[dict] = []
    archetypes: dict[str, str] = {}
    counter = 0
    case_meta: list[tuple[str, int, dt.date]] = []  # (sex, birth_year, anchor)

    for spec in profile.specs:
        for _ in range(n_patients):
            rng = np.random.default_rng([seed, counter])
            pid = f"case_{counter:05d}"
            sex = "M" if rng.random() < spec.male_fraction else "F"
            anchor = EPOCH_START + dt.timedelta(days=int(rng.integers(DIAGNOSIS_SPAN_DAYS)))
            age = float(np.clip(rng.normal(spec.age_mean, spec.age_sd), 35.0, 80.0))
            birth_year = anchor.year - int(round(age))
            ethnicity = _sample_categorical(rng, spec.ethnicity_dist)
            patients.append(
                {
                    "patient_id": pid,
                    "sex": sex,
                    "birth_year": birth_year,
                    "ethnicity": ethnicity,
                    "diagnosis_date": anchor.isoformat(),
                    "label": Label.CASE.value,
                }
            )
            events.extend(_patient_events(rng, pid, anchor, spec, profile))
            archetypes[pid] = spec.name
            case_meta.append((sex, birth_year, anchor))
            counter += 1

    for i, (sex, birth_year, anchor) in enumerate(case_meta):
        rng = np.random.default_rng([seed, counter])
        pid = f"ctrl_{i:05d}"
        ethnicity = _sample_categorical(rng, profile.control_spec.ethnicity_dist)
        patients.append(
            {
                "patient_id": pid,
                "sex": sex,
                "birth_year": birth_year,
                "ethnicity": ethnicity,
                "diagnosis_date": None,
                "label": Label.CONTROL.value,
            }
        )
        events.extend(_patient_events(rng, pid, anchor, profile.control_spec, profile))
        archetypes[pid] = "control"
        counter += 1

    truth = GroundTruth(
        archetypes=archetypes,
        marker_themes=profile.theme_table(),
        stage_bounds=profile.bounds,
    )
    return GeneratedCohort(events=events, patients=patients, ground_truth=truth)


# ---------------------------------------------------------------------------
# Bundled type 2 diabetes profile


def _dx(code: str, description: str, theme: str, hospital: bool = False) -> CodeEntry:
    return CodeEntry(code, description, Ontology.HOSPITAL if hospital else Ontology.GP, theme)


def _med(code: str, description: str, theme: str) -> CodeEntry:
    return CodeEntry(code, description, Ontology.MEDICATION, theme)


def _background_pool() -> list[CodeEntry]:
    # Families sized so the pooled description corpus supports a 2025-token
    # subword vocabulary with margin (distinct-word merge capacity > 2200).
    roots = [
        "derm", "gastr", "neur", "cardi", "nephr", "hepat", "arthr", "bronch",
        "rhin", "ophthalm", "ot", "cyst", "col", "enter", "phleb", "myos",
        "oste", "fibr", "lymph", "thyroid", "pancreat", "gingiv", "laryng",
        "pharyng", "sinus", "tendin", "vascul", "spondyl", "radicul", "follicul",
        "blephar", "cholecyst", "diverticul", "duoden", "encephal", "epididym",
        "gloss", "hidraden", "kerat", "mastoid", "onych", "orchi", "peritone",
        "pleur", "prostat", "salping", "splen", "stomat", "urethr", "vesicul",
    ]
    suffixes = ["itis", "osis", "algia", "opathy", "ectasia", "oma", "odynia", "orrhexis"]
    modifiers = [
        "acute", "chronic", "recurrent", "mild", "moderate", "intermittent",
        "persistent", "seasonal", "atypical", "localized",
    ]
    anatomy = [
        "shoulder", "elbow", "wrist", "ankle", "cervical", "lumbar", "thoracic",
        "cranial", "femoral", "tibial", "brachial", "carpal", "tarsal", "occipital",
        "temporal", "parietal", "frontal", "sacral", "coccygeal", "patellar",
        "scapular", "clavicular", "sternal", "costal", "pelvic", "inguinal",
        "axillary", "popliteal", "plantar", "palmar",
    ]
    symptoms = [
        "pain", "stiffness", "swelling", "numbness", "weakness", "tremor",
        "lesion", "rash", "ulcer", "spasm", "contusion", "laceration", "sprain",
        "strain", "tenderness", "effusion", "haematoma", "paraesthesia",
    ]
    analytes = [
        "ferritin", "homocysteine", "triglyceride", "creatinine", "bilirubin",
        "albumin", "fibrinogen", "troponin", "amylase", "lipase", "urate",
        "magnesium", "phosphate", "cortisol", "prolactin", "thyroxine",
        "testosterone", "oestradiol", "folate", "cobalamin", "haemoglobin",
        "platelet", "neutrophil", "lymphocyte", "eosinophil", "reticulocyte",
        "transferrin", "haptoglobin", "ceruloplasmin", "procalcitonin",
        "myoglobin", "aldosterone", "renin", "parathormone", "calcitonin",
        "osmolality", "lactate", "ammonia", "copper", "selenium",
    ]
    procedures = [
        "arthroscopy", "colonoscopy", "gastroscopy", "cystoscopy", "bronchoscopy",
        "laparoscopy", "hysteroscopy", "sigmoidoscopy", "thoracoscopy", "fundoscopy",
        "audiometry", "tonometry", "densitometry", "polysomnography", "electromyography",
        "venepuncture", "paracentesis", "thoracentesis", "curettage", "cryotherapy",
        "debridement", "cauterisation", "sclerotherapy", "phototherapy", "iontophoresis",
    ]
    admin = [
        "blood pressure monitoring", "influenza vaccination", "medication review",
        "annual health screening", "smoking cessation advice", "dietary counselling",
        "wound dressing change", "travel immunisation consult", "hearing assessment",
        "minor surgery follow up", "physiotherapy referral", "telephone triage encounter",
        "repeat prescription issued", "new patient registration", "blood sample collection",
        "electrocardiogram recording", "spirometry measurement", "cervical screening recall",
        "weight management clinic", "home visit assessment",
    ]
    pool = []
    i = 0
    for root in roots:
        for suffix in suffixes:
            term = f"{modifiers[i % len(modifiers)]} {root}{suffix}"
            pool.append(_dx(f"BG{i:03d}", term, "background", hospital=(i % 4 == 0)))
            i += 1
    pairs = [(a, s) for a in anatomy for s in symptoms]
    for j in range(0, len(pairs), 5):
        a, s = pairs[j]
        pool.append(_dx(f"AS{j:03d}", f"{a} {s}", "background"))
    for j, name in enumerate(analytes):
        pool.append(_dx(f"LB{j:03d}", f"serum {name} measurement", "background"))
    for j, name in enumerate(procedures):
        pool.append(_dx(f"PR{j:03d}", f"diagnostic {name}", "background", hospital=(j % 2 == 0)))
    for j, term in enumerate(admin):
        pool.append(_dx(f"AD{j:03d}", term, "background"))
    return pool


def _bundled_pools() -> dict[str, list[CodeEntry]]:
    return {
        "background": _background_pool(),
        "management": [
            _med("A10BA02", "Metformin", "management"),
            _med("A10BB09", "Gliclazide", "management"),
            _med("A10AB01", "Insulin", "management"),
            _med("V04CA02", "Glucose testing strips", "management"),
            _med("V04CA90", "Diabetes lancets", "management"),
        ],
        "cardiovascular": [
            _dx("I48", "Atrial fibrillation", "cardiovascular", hospital=True),
            _dx("I25", "Coronary heart disease", "cardiovascular", hospital=True),
            _dx("I50", "Heart failure", "cardiovascular", hospital=True),
            _dx("I10", "Essential hypertension", "cardiovascular"),
            _dx("E78", "Hypercholesterolemia", "cardiovascular"),
            _dx("I20", "Angina pectoris", "cardiovascular", hospital=True),
            _med("B01AC06", "Aspirin", "cardiovascular"),
            _med("C07AB07", "Bisoprolol", "cardiovascular"),
            _med("C10AA01", "Simvastatin", "cardiovascular"),
            _med("C03CA01", "Furosemide", "cardiovascular"),
            _med("B01AC04", "Clopidogrel", "cardiovascular"),
        ],
        "renal": [
            _dx("N18", "Chronic renal failure", "renal", hospital=True),
            _dx("N17", "Acute renal failure", "renal", hospital=True),
            _dx("N19", "Unspecified kidney failure", "renal", hospital=True),
            _dx("N08", "Glomerular disorders", "renal"),
        ],
        "complications": [
            _dx("H36.0", "Diabetic retinopathy", "complications"),
            _dx("G63.2", "Diabetic polyneuropathy", "complications"),
            _dx("N08.3", "Diabetic nephropathy", "complications"),
            _dx("G99.0", "T2D with neurological complications", "complications", hospital=True),
        ],
        "ed": [
            _dx("N48.4", "Erectile dysfunction", "ed"),
            _med("G04BE03", "Sildenafil", "ed"),
            _med("G04BE08", "Tadalafil", "ed"),
        ],
        "t2d": [
            _dx("E11.9", "T2D without complications", "t2d", hospital=True),
            _dx("E11.8", "T2D with unspecified complications", "t2d", hospital=True),
            _dx("X40J.", "Type 2 diabetes mellitus", "t2d"),
        ],
    }


_ETHNICITY = {
    "White": 0.900,
    "S.Asian": 0.052,
    "Black": 0.021,
    "Asian": 0.008,
    "Mixed background": 0.010,
    "E.Asian": 0.003,
    "Unknown": 0.006,
}


def bundled_profile_t2d() -> CohortProfile:
    """Four case archetypes qualitatively mirroring the observed T2D cluster
    profiles: severe multi-complication, male-dominant ED, older cardiovascular
    drift, and stable/controlled; plus a background-only control archetype."""
    eth = dict(_ETHNICITY)
    specs = [
        ArchetypeSpec(
            archetype_id=0,
            name="severe",
            male_fraction=0.6572,
            age_mean=59.43,
            age_sd=6.0,
            ethnicity_dist=eth,
            events_per_year=4.0,
            window_theme_probs=[
                {"background": 0.85, "cardiovascular": 0.10, "management": 0.05},
                {
                    "background": 0.15,
                    "management": 0.15,
                    "cardiovascular": 0.20,
                    "renal": 0.25,
                    "complications": 0.15,
                    "t2d": 0.10,
                },
                {
                    "background": 0.10,
                    "management": 0.10,
                    "cardiovascular": 0.20,
                    "renal": 0.30,
                    "complications": 0.20,
                    "t2d": 0.10,
                },
            ],
        ),
        ArchetypeSpec(
            archetype_id=1,
            name="ed",
            male_fraction=0.9043,
            age_mean=56.17,
            age_sd=6.0,
            ethnicity_dist=eth,
            events_per_year=4.0,
            window_theme_probs=[
                {"background": 0.90, "management": 0.10},
                {
                    "background": 0.20,
                    "management": 0.15,
                    "ed": 0.40,
                    "complications": 0.15,
                    "t2d": 0.10,
                },
                {
                    "background": 0.15,
                    "management": 0.10,
                    "ed": 0.45,
                    "complications": 0.20,
                    "t2d": 0.10,
                },
            ],
        ),
        ArchetypeSpec(
            archetype_id=2,
            name="cardio",
            male_fraction=0.5157,
            age_mean=64.42,
            age_sd=6.0,
            ethnicity_dist=eth,
            events_per_year=4.0,
            window_theme_probs=[
                {"background": 0.80, "cardiovascular": 0.20},
                {
                    "background": 0.25,
                    "management": 0.15,
                    "cardiovascular": 0.50,
                    "t2d": 0.10,
                },
                {
                    "background": 0.15,
                    "management": 0.10,
                    "cardiovascular": 0.65,
                    "t2d": 0.10,
                },
            ],
        ),
        ArchetypeSpec(
            archetype_id=3,
            name="stable",
            male_fraction=0.4983,
            age_mean=56.43,
            age_sd=6.0,
            ethnicity_dist=eth,
            events_per_year=4.0,
            window_theme_probs=[
                {"background": 0.92, "management": 0.08},
                {"background": 0.55, "management": 0.35, "t2d": 0.10},
                {"background": 0.55, "management": 0.35, "t2d": 0.10},
            ],
        ),
    ]
    control = ArchetypeSpec(
        archetype_id=-1,
        name="control",
        male_fraction=0.5,
        age_mean=58.0,
        age_sd=7.0,
        ethnicity_dist=eth,
        events_per_year=3.0,
        window_theme_probs=[{"background": 1.0}] * 3,
    )
    return CohortProfile(name="t2d", specs=specs, control_spec=control, pools=_bundled_pools())


def trimmed_profile(profile: CohortProfile, n_archetypes: int) -> CohortProfile:
    """Copy of a profile keeping only the first ``n_archetypes`` archetypes."""
    return dataclasses.replace(profile, specs=profile.specs[:n_archetypes])
