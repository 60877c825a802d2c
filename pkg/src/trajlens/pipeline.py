"""End-to-end orchestration and report tables.

Stages run in a fixed order (cohort, tokenize, embed, reduce, interpret,
cluster, report), each consuming the previous stage's files from the output
directory. A manifest records a content hash for every input and artifact;
identical settings and seed give byte-identical manifests, so the manifest
hash is the pipeline's determinism witness. Output-directory paths are kept
out of the manifest for that reason.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import cohort as ch
from . import embedder as emb
from . import interpret as itp
from . import reduce as red
from . import synth as syn
from . import tokenizer as tok
from . import trajectory as trj
from .errors import ConfigurationError, DataError

STAGE_ORDER = ("cohort", "tokenize", "embed", "reduce", "interpret", "cluster", "report")
STAGE_DEPS = {
    "cohort": (),
    "tokenize": ("cohort",),
    "embed": ("tokenize",),
    "reduce": ("embed",),
    "interpret": ("reduce",),
    "cluster": ("reduce",),
    "report": ("cluster", "interpret"),
}


@dataclass
class RunConfig:
    outdir: str
    seed: int = 0
    stages: tuple[str, ...] = STAGE_ORDER
    # inputs: either a bundled synthetic profile or explicit files
    synth_profile: str | None = "t2d"
    synth_n: int = 25
    events: str | None = None
    patients: str | None = None
    # cohort
    bounds: tuple[float, ...] = ch.DEFAULT_BOUNDS
    max_len: int = 64
    folds: int = 5
    age_tolerance: int = 2
    # tokenize / embed
    vocab_size: int = tok.DEFAULT_VOCAB_SIZE
    embed_dim: int = 200
    cooc_window: int = 5
    classifier_epochs: int = 30
    classifier_batch: int = 64
    classifier_lr: float = 0.1
    classifier_weight_decay: float = 0.01
    # reduce
    n_neighbors: int = 15
    min_dist: float = 0.1
    layout_epochs: int = 200
    run_sweep: bool = False
    # interpret
    top_k: int = 15
    markers: str | None = None  # pre-built markers.csv instead of profile mapping
    # cluster
    grid: tuple[float, ...] = trj.DEFAULT_GRID
    k: int = 4
    kmeans_restarts: int = 5
    wcss_seeds: int = 0  # 0 disables the elbow sweep
    wcss_k_range: tuple[int, ...] = tuple(range(2, 9))

    def validate(self, partial: bool = False) -> None:
        unknown = set(self.stages) - set(STAGE_ORDER)
        if unknown:
            raise ConfigurationError(f"unknown stages {sorted(unknown)}")
        enabled = set(self.stages)
        if not partial:
            for stage in self.stages:
                missing = [d for d in STAGE_DEPS[stage] if d not in enabled]
                if missing:
                    raise ConfigurationError(
                        f"stage {stage!r} enabled but its dependency {missing[0]!r} is disabled"
                    )
        if self.synth_profile is None and "cohort" in enabled:
            if not self.events or not self.patients:
                raise ConfigurationError("no synth profile: events and patients paths required")
        if self.synth_profile not in (None, "t2d"):
            raise ConfigurationError(f"unknown synth profile {self.synth_profile!r}")
        if len(self.bounds) < 2 or any(b >= c for b, c in zip(self.bounds, self.bounds[1:])):
            raise ConfigurationError("bounds must be strictly increasing")

    def settings(self) -> dict:
        """Manifest form of the config: everything except filesystem paths."""
        obj = dataclasses.asdict(self)
        for key in ("outdir", "events", "patients"):
            obj.pop(key)
        obj["stages"] = list(self.stages)
        for key in ("bounds", "grid", "wcss_k_range"):
            obj[key] = list(obj[key])
        return obj

    def to_json(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["stages"] = list(self.stages)
        for key in ("bounds", "grid", "wcss_k_range"):
            obj[key] = list(obj[key])
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        kwargs = dict(obj)
        for key in ("stages", "bounds", "grid", "wcss_k_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PipelineState:
    config: RunConfig
    profile: syn.CohortProfile | None
    events_path: str = ""
    patients_path: str = ""
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def run_pipeline(config: RunConfig, partial: bool = False) -> dict:
    """Execute the enabled stages and return the manifest (also written to
    ``manifest.json`` in the output directory). ``partial`` skips the stage
    dependency check so a single stage can run over existing artifacts."""
    config.validate(partial=partial)
    outdir = config.outdir
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=1, sort_keys=True)

    manifest: dict = {"settings": config.settings(), "inputs": {}, "stages": {}}
    profile = syn.bundled_profile_t2d() if config.synth_profile == "t2d" else None

    if profile is not None:
        events_path = config.events or os.path.join(outdir, "events.jsonl")
        patients_path = config.patients or os.path.join(outdir, "patients.jsonl")
        if not (partial and os.path.exists(events_path) and os.path.exists(patients_path)):
            generated = syn.generate_cohort(profile, config.synth_n, config.seed)
            truth_path = os.path.join(outdir, "ground_truth.json")
            generated.write(events_path, patients_path, truth_path)
        for label, path in (
            ("events.jsonl", events_path),
            ("patients.jsonl", patients_path),
            ("ground_truth.json", os.path.join(outdir, "ground_truth.json")),
        ):
            if os.path.exists(path):
                manifest["inputs"][label] = _sha256(path)
    else:
        events_path = config.events or os.path.join(outdir, "events.jsonl")
        patients_path = config.patients or os.path.join(outdir, "patients.jsonl")
        for label, path in (("events.jsonl", events_path), ("patients.jsonl", patients_path)):
            if path and os.path.exists(path):
                manifest["inputs"][label] = _sha256(path)

    state = PipelineState(
        config=config, profile=profile, events_path=events_path, patients_path=patients_path
    )
    runners = {
        "cohort": lambda: _stage_cohort(state, events_path, patients_path, outdir),
        "tokenize": lambda: _stage_tokenize(state, outdir),
        "embed": lambda: _stage_embed(state, outdir),
        "reduce": lambda: _stage_reduce(state, outdir),
        "interpret": lambda: _stage_interpret(state, outdir),
        "cluster": lambda: _stage_cluster(state, outdir),
        "report": lambda: _stage_report(state, outdir),
    }
    for stage in STAGE_ORDER:
        if stage not in config.stages:
            continue
        try:
            outputs = runners[stage]()
        except (ConfigurationError, DataError):
            raise
        except Exception as exc:  # annotate with the failing stage
            raise DataError(f"stage {stage!r} failed: {exc}") from exc
        manifest["stages"][stage] = {
            "outputs": {name: _sha256(os.path.join(outdir, name)) for name in sorted(outputs)}
        }

    manifest_path = os.path.join(outdir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def manifest_hash(outdir) -> str:
    return _sha256(os.path.join(outdir, "manifest.json"))


# ---------------------------------------------------------------------------
# Stages


def _stage_cohort(state: PipelineState, events_path, patients_path, outdir) -> list[str]:
    cfg, profile = state.config, state.profile
    events_by_patient = ch.read_events_jsonl(events_path)
    records = ch.read_patients_jsonl(patients_path)
    exclude = profile.exclude_codes if profile else frozenset()

    for record in records:
        record.visits = ch.aggregate_visits(events_by_patient.get(record.patient_id, []))

    if profile is not None:
        cleaned = []
        for record in records:
            relabeled = ch.relabel_by_medication(
                record,
                case_meds=profile.case_meds,
                t2d_codes=profile.t2d_codes,
                t1d_codes=profile.t1d_codes,
                undefined_codes=profile.undefined_codes,
            )
            if relabeled.label != ch.Label.DROPPED:
                cleaned.append(relabeled)
        records = cleaned

    cases = [r for r in records if r.label == ch.Label.CASE]
    pool = [r for r in records if r.label == ch.Label.CONTROL]
    if profile is not None:
        pool = ch.drop_t1d_controls(pool, profile.t1d_codes)
    match = ch.match_controls(cases, pool, seed=cfg.seed, age_tolerance=cfg.age_tolerance)
    retained = cases + match.controls

    snapshots: list[ch.Snapshot] = []
    for record in retained:
        snapshots.extend(ch.build_snapshots(record, cfg.bounds, exclude))
    patient_ids = sorted({s.patient_id for s in snapshots})
    folds = ch.assign_folds(patient_ids, k=cfg.folds, seed=cfg.seed)

    ch.write_snapshots_jsonl(snapshots, os.path.join(outdir, "snapshots.jsonl"))
    with open(os.path.join(outdir, "folds.json"), "w", encoding="utf-8") as fh:
        json.dump(folds.to_json(), fh, indent=1, sort_keys=True)

    state.records = retained
    state.snapshots = snapshots
    return ["snapshots.jsonl", "folds.json"]


def _stage_tokenize(state: PipelineState, outdir) -> list[str]:
    cfg = state.config
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots.jsonl"))
    corpus = [d for s in snapshots for d in s.descriptions]
    vocab = tok.train_vocab(corpus, cfg.vocab_size)
    vocab.save(os.path.join(outdir, "vocab.txt"))

    split: list[ch.Snapshot] = []
    for s in snapshots:
        split.extend(ch.split_by_max_len(s, vocab, cfg.max_len))
    split = ch.reindex_snapshots(split)
    ch.write_snapshots_jsonl(split, os.path.join(outdir, "snapshots_split.jsonl"))
    return ["vocab.txt", "snapshots_split.jsonl"]


def _stage_embed(state: PipelineState, outdir) -> list[str]:
    cfg = state.config
    vocab = tok.Vocabulary.load(os.path.join(outdir, "vocab.txt"))
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots_split.jsonl"))
    keys = [s.key for s in snapshots]
    sequences = [tok.encode(s.descriptions, vocab, cfg.max_len) for s in snapshots]
    matrix = emb.embed_baseline(
        keys, sequences, len(vocab), dim=cfg.embed_dim, window=cfg.cooc_window, seed=cfg.seed
    )
    matrix.write_csv(os.path.join(outdir, "embeddings.csv"))

    outputs = ["embeddings.csv"]
    outputs.extend(classify_embeddings(cfg, outdir, matrix, state.patients_path))
    return outputs


def classify_embeddings(
    cfg: RunConfig, outdir, matrix: emb.EmbeddingMatrix, patients_path: str | None = None
) -> list[str]:
    """Train one classifier per fold rotation on case/control labels and write
    per-model weights plus test-fold metrics. No-op if only one class exists."""
    with open(os.path.join(outdir, "folds.json"), encoding="utf-8") as fh:
        folds = ch.FoldAssignment.from_json(json.load(fh))
    labels = _patient_labels(outdir, patients_path)
    if len(set(labels.values())) != 2:
        return []
    config = emb.ClassifierConfig(
        epochs=cfg.classifier_epochs,
        batch_size=cfg.classifier_batch,
        learning_rate=cfg.classifier_lr,
        weight_decay=cfg.classifier_weight_decay,
        seed=cfg.seed,
    )
    models = emb.train_classifier(matrix, labels, folds, config)
    y = np.array([labels[pid] for pid, _ in matrix.keys])
    fold_of_row = np.array([folds.folds[pid] for pid, _ in matrix.keys])
    metrics = {}
    outputs = []
    for i, model in models.items():
        test_mask = fold_of_row == (i + 1) % folds.k
        metrics[f"model_{i}"] = emb.evaluate(model, matrix.vectors[test_mask], y[test_mask])
        model.save(os.path.join(outdir, f"classifier_{i}.json"))
        outputs.append(f"classifier_{i}.json")
    metrics["mean"] = {
        m: float(np.mean([metrics[f"model_{i}"][m] for i in models]))
        for m in ("recall", "precision")
    }
    with open(os.path.join(outdir, "classifier_metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
    outputs.append("classifier_metrics.json")
    return outputs


def _patient_labels(outdir, patients_path: str | None = None) -> dict[str, int]:
    labels = {}
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots_split.jsonl"))
    patients = {s.patient_id for s in snapshots}
    records = ch.read_patients_jsonl(patients_path or os.path.join(outdir, "patients.jsonl"))
    known = {r.patient_id: r.label for r in records}
    for pid in patients:
        labels[pid] = 1 if known.get(pid) == ch.Label.CASE else 0
    return labels


def _stage_reduce(state: PipelineState, outdir) -> list[str]:
    cfg = state.config
    matrix = emb.ingest_embeddings(os.path.join(outdir, "embeddings.csv"), normalize=True)
    if cfg.run_sweep:
        by_combo = red.sweep(matrix.vectors, n_epochs=cfg.layout_epochs, seed=cfg.seed)
        if (cfg.n_neighbors, cfg.min_dist) not in by_combo:
            by_combo[(cfg.n_neighbors, cfg.min_dist)] = red.reduce_embedding(
                matrix.vectors,
                n_neighbors=cfg.n_neighbors,
                min_dist=cfg.min_dist,
                n_epochs=cfg.layout_epochs,
                seed=cfg.seed,
            )
    else:
        coords = red.reduce_embedding(
            matrix.vectors,
            n_neighbors=cfg.n_neighbors,
            min_dist=cfg.min_dist,
            n_epochs=cfg.layout_epochs,
            seed=cfg.seed,
        )
        by_combo = {(cfg.n_neighbors, cfg.min_dist): coords}
    red.write_reduced_csv(os.path.join(outdir, "reduced.csv"), matrix.keys, by_combo)
    return ["reduced.csv"]


def _primary_combo_tag(cfg: RunConfig) -> str:
    return red.combo_tag((cfg.n_neighbors, cfg.min_dist))


def _load_reduced(outdir, cfg: RunConfig):
    return red.read_reduced_csv(
        os.path.join(outdir, "reduced.csv"), combo=_primary_combo_tag(cfg)
    )


def _marker_inputs(state: PipelineState, outdir):
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots_split.jsonl"))
    if not state.records:
        events = ch.read_events_jsonl(state.events_path)
        records = ch.read_patients_jsonl(state.patients_path)
        keep = {s.patient_id for s in snapshots}
        anchors: dict[str, ch.Snapshot] = {s.patient_id: s for s in snapshots}
        state.records = []
        for r in records:
            if r.patient_id not in keep:
                continue
            r.visits = ch.aggregate_visits(events.get(r.patient_id, []))
            if r.anchor_date is None:
                r.index_date = anchors[r.patient_id].anchor_date
            state.records.append(r)
    return state.records, snapshots


def _stage_interpret(state: PipelineState, outdir) -> list[str]:
    cfg, profile = state.config, state.profile
    keys, coords, _ = _load_reduced(outdir, cfg)
    theme_table = profile.theme_table() if profile else itp.default_theme_table()

    if cfg.markers:
        supplied = itp.read_markers_csv(cfg.markers)
        row_of = {k: i for i, k in enumerate(supplied.snapshot_keys)}
        missing = [k for k in keys if k not in row_of]
        if missing:
            raise DataError(f"{cfg.markers}: missing marker rows for {missing[:5]}")
        matrix = itp.MarkerMatrix(
            marker_ids=supplied.marker_ids,
            snapshot_keys=list(keys),
            values=supplied.values[[row_of[k] for k in keys]],
        )
        unmapped: dict[str, int] = {}
    else:
        if profile is None:
            raise ConfigurationError(
                "interpret stage needs a synth profile (code mapping) or a markers file"
            )
        records, snapshots = _marker_inputs(state, outdir)
        order = {k: i for i, k in enumerate(keys)}
        snapshots = sorted(
            (s for s in snapshots if s.key in order), key=lambda s: order[s.key]
        )
        matrix, unmapped = itp.build_marker_matrix(records, snapshots, profile.mapping_table())
    itp.write_markers_csv(os.path.join(outdir, "markers.csv"), matrix)

    correlations, skipped = itp.correlate_markers(matrix, coords)
    ranked = itp.assign_themes(itp.l2_rank(correlations, cfg.top_k), theme_table)
    itp.write_correlations_csv(os.path.join(outdir, "correlations.csv"), ranked)
    with open(os.path.join(outdir, "interpret_report.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"skipped_markers": sorted(skipped), "unmapped_codes": dict(sorted(unmapped.items()))},
            fh,
            indent=1,
            sort_keys=True,
        )
    return ["markers.csv", "correlations.csv", "interpret_report.json"]


def _case_ids(state: PipelineState) -> set[str]:
    records = ch.read_patients_jsonl(state.patients_path)
    return {r.patient_id for r in records if r.label == ch.Label.CASE}


def _trajectories_for(keys, coords, snapshots, case_ids, grid):
    times = {s.key: s.mean_time_to_diagnosis for s in snapshots}
    key_mask = [i for i, k in enumerate(keys) if k[0] in case_ids]
    kept_keys = [keys[i] for i in key_mask]
    trajectories, _ = trj.build_trajectories(kept_keys, coords[key_mask], times)
    aligned, _ = trj.align_trajectories(trajectories, grid)
    return trajectories, aligned


def _stage_cluster(state: PipelineState, outdir) -> list[str]:
    cfg = state.config
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots_split.jsonl"))
    case_ids = _case_ids(state)
    keys, coords, combos = _load_reduced(outdir, cfg)
    trajectories, aligned = _trajectories_for(keys, coords, snapshots, case_ids, cfg.grid)
    if len(aligned) < cfg.k:
        raise DataError(f"only {len(aligned)} clusterable trajectories for k={cfg.k}")

    model = trj.dtw_kmeans_best(aligned, cfg.k, seed=cfg.seed, restarts=cfg.kmeans_restarts)
    trj.write_trajectories_jsonl(os.path.join(outdir, "trajectories.jsonl"), trajectories)
    trj.write_clusters_csv(os.path.join(outdir, "clusters.csv"), model)
    outputs = ["trajectories.jsonl", "clusters.csv"]

    if cfg.wcss_seeds > 0:
        sweep = trj.wcss_sweep(aligned, cfg.wcss_k_range, n_seeds=cfg.wcss_seeds, base_seed=cfg.seed)
        trj.write_wcss_csv(os.path.join(outdir, "wcss.csv"), sweep)
        outputs.append("wcss.csv")

    if cfg.run_sweep:
        all_keys, _, tags = red.read_reduced_csv(os.path.join(outdir, "reduced.csv"))
        labelings = {}
        for tag in tags:
            keys_t, coords_t, _ = red.read_reduced_csv(os.path.join(outdir, "reduced.csv"), combo=tag)
            _, aligned_t = _trajectories_for(keys_t, coords_t, snapshots, case_ids, cfg.grid)
            m = trj.dtw_kmeans_best(aligned_t, cfg.k, seed=cfg.seed, restarts=cfg.kmeans_restarts)
            labelings[tag] = m.assignments
        common = set.intersection(*(set(v) for v in labelings.values()))
        labelings = {t: {p: c for p, c in v.items() if p in common} for t, v in labelings.items()}
        result = trj.robustness(labelings)
        trj.write_jaccard_csv(os.path.join(outdir, "jaccard.csv"), result)
        outputs.append("jaccard.csv")
    return outputs


def _stage_report(state: PipelineState, outdir) -> list[str]:
    cfg = state.config
    clusters = trj.read_clusters_csv(os.path.join(outdir, "clusters.csv"))
    snapshots = ch.read_snapshots_jsonl(os.path.join(outdir, "snapshots_split.jsonl"))
    keys, coords, _ = _load_reduced(outdir, cfg)
    _, aligned = _trajectories_for(keys, coords, snapshots, set(clusters), cfg.grid)

    means = emit_cluster_means(clusters, aligned)
    _write_table(
        os.path.join(outdir, "cluster_means.csv"),
        ["cluster", "t", "mean_u1", "mean_u2", "count"],
        [[c, t, repr(u1), repr(u2), n] for (c, t), (u1, u2, n) in sorted(means.items())],
    )

    matrix = itp.read_markers_csv(os.path.join(outdir, "markers.csv"))
    theme_table = (
        state.profile.theme_table() if state.profile else itp.default_theme_table()
    )
    snapshot_times = {s.key: s.mean_time_to_diagnosis for s in snapshots}
    prevalence = theme_prevalence(clusters, matrix, theme_table, cfg.grid, snapshot_times)
    _write_table(
        os.path.join(outdir, "theme_prevalence.csv"),
        ["cluster", "theme", "t", "prevalence"],
        [[c, theme, t, repr(v)] for (c, theme, t), v in sorted(prevalence.items())],
    )

    records = ch.read_patients_jsonl(state.patients_path)
    demo = demographics_table(clusters, records)
    _write_table(
        os.path.join(outdir, "demographics.csv"),
        ["cluster", "size", "age_at_diagnosis"]
        + [f"sex_pct_{s}" for s in demo["sex_levels"]]
        + [f"ethnicity_pct_{e}" for e in demo["ethnicity_levels"]],
        demo["rows"],
    )
    return ["cluster_means.csv", "theme_prevalence.csv", "demographics.csv"]


def _write_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# Report tables


def emit_cluster_means(
    clusters: dict[str, int], aligned: Sequence[trj.AlignedTrajectory]
) -> dict[tuple[int, float], tuple[float, float, int]]:
    """(cluster, t) -> (mean u1, mean u2, count) over covered grid values."""
    acc: dict[tuple[int, float], list[np.ndarray]] = {}
    for a in aligned:
        c = clusters.get(a.patient_id)
        if c is None:
            continue
        for t, xy in zip(a.times, a.values):
            acc.setdefault((c, float(t)), []).append(xy)
    return {
        key: (float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])), len(vals))
        for key, vals in acc.items()
    }


def theme_prevalence(
    clusters: dict[str, int],
    markers: itp.MarkerMatrix,
    theme_table: dict[str, str],
    grid: Sequence[float],
    snapshot_times: dict[tuple[str, int], float],
    cumulative: bool = True,
) -> dict[tuple[int, str, float], float]:
    """Fraction of cluster patients with >=1 themed marker recorded at or
    before each grid time (cumulative) or within the enclosing window slot
    (``cumulative=False``). Marker occurrences are timestamped with their
    snapshot's mean time to diagnosis."""
    themes = sorted(set(theme_table.values()) - {"other"})
    theme_of = [theme_table.get(m, "other") for m in markers.marker_ids]

    occurrences: dict[str, dict[str, list[float]]] = {}
    for row, key in enumerate(markers.snapshot_keys):
        pid = key[0]
        if pid not in clusters or key not in snapshot_times:
            continue
        t = snapshot_times[key]
        hit_cols = np.flatnonzero(markers.values[row])
        for j in hit_cols:
            theme = theme_of[j]
            if theme == "other":
                continue
            occurrences.setdefault(pid, {}).setdefault(theme, []).append(t)

    sizes: dict[int, int] = {}
    for pid, c in clusters.items():
        sizes[c] = sizes.get(c, 0) + 1

    out: dict[tuple[int, str, float], float] = {}
    for c in sorted(sizes):
        members = [p for p, cc in clusters.items() if cc == c]
        for theme in themes:
            for t in grid:
                if cumulative:
                    n = sum(
                        1
                        for p in members
                        if occurrences.get(p, {}).get(theme) and min(occurrences[p][theme]) <= t
                    )
                else:
                    n = sum(
                        1
                        for p in members
                        if any(
                            lo <= t and lo <= u < hi
                            for u in occurrences.get(p, {}).get(theme, [])
                            for lo, hi in [_enclosing_slot(grid, t)]
                        )
                    )
                out[(c, theme, float(t))] = n / sizes[c]
    return out


def _enclosing_slot(grid: Sequence[float], t: float) -> tuple[float, float]:
    pts = sorted(grid)
    for lo, hi in zip(pts, pts[1:]):
        if lo <= t < hi:
            return lo, hi
    return pts[-1], float("inf")


def demographics_table(clusters: dict[str, int], records) -> dict:
    """Per cluster: size, mean age at diagnosis, sex %, ethnicity %."""
    by_id = {r.patient_id: r for r in records}
    sex_levels = sorted({r.sex for r in by_id.values()})
    eth_levels = sorted({r.ethnicity for r in by_id.values()})
    rows = []
    for c in sorted(set(clusters.values())):
        members = [by_id[p] for p in clusters if clusters[p] == c and p in by_id]
        size = len(members)
        ages = [
            r.anchor_date.year - r.birth_year for r in members if r.anchor_date is not None
        ]
        age = float(np.mean(ages)) if ages else float("nan")
        sex_pct = [100.0 * sum(1 for r in members if r.sex == s) / size for s in sex_levels]
        eth_pct = [100.0 * sum(1 for r in members if r.ethnicity == e) / size for e in eth_levels]
        rows.append([c, size, repr(age)] + [repr(v) for v in sex_pct] + [repr(v) for v in eth_pct])
    return {"rows": rows, "sex_levels": sex_levels, "ethnicity_levels": eth_levels}
