"""trajlens: desk-scale disease-progression pipeline.

EHR snapshot construction, subword tokenization, snapshot embeddings, 2D
reduction, clinical-marker correlation ranking, and temporal patient
clustering with multivariate DTW, plus a planted-structure synthetic cohort
generator that makes every stage testable.
"""

from .cohort import (
    Event,
    FoldAssignment,
    Label,
    Ontology,
    PatientRecord,
    Snapshot,
    Visit,
    aggregate_visits,
    assign_folds,
    build_snapshots,
    match_controls,
    mean_time_to_diagnosis,
    relabel_by_medication,
    split_by_max_len,
)
from .embedder import (
    ClassifierConfig,
    ClassifierModel,
    EmbeddingMatrix,
    embed_baseline,
    evaluate,
    ingest_embeddings,
    softmax,
    train_classifier,
)
from .errors import ConfigurationError, DataError, DegenerateInput, TrajlensError
from .interpret import (
    CorrelationRecord,
    MarkerMatrix,
    assign_themes,
    build_marker_matrix,
    dedup_synonyms,
    l2_rank,
    point_biserial,
)
from .pipeline import RunConfig, run_pipeline
from .reduce import (
    fit_curve,
    fuzzy_union,
    knn_graph,
    optimize_layout,
    reduce_embedding,
    smooth_knn,
    sweep,
)
from .synth import ArchetypeSpec, CohortProfile, GroundTruth, bundled_profile_t2d, generate_cohort
from .tokenizer import TokenSequence, Vocabulary, decode, encode, train_vocab
from .trajectory import (
    AlignedTrajectory,
    ClusterModel,
    Trajectory,
    adjusted_rand_index,
    build_trajectories,
    dtw,
    dtw_kmeans,
    elbow_pick,
    interpolate,
    jaccard,
    match_clusters,
    robustness,
    wcss_sweep,
)

__version__ = "0.1.0"
