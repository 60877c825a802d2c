#!/usr/bin/env python3
"""Run the whole pipeline on the bundled synthetic profile and read the
report artifacts: manifest, correlation table, cluster means, theme
prevalence, and demographics. Equivalent CLI:

    trajlens run --config run.json
"""

import csv
import json
import tempfile
from pathlib import Path

from trajlens.pipeline import RunConfig, manifest_hash, run_pipeline
from trajlens.synth import GroundTruth
from trajlens.trajectory import adjusted_rand_index, read_clusters_csv

outdir = Path(tempfile.mkdtemp(prefix="trajlens_pipeline_"))
config = RunConfig(
    outdir=str(outdir),
    seed=11,
    synth_n=25,           # patients per archetype; acceptance uses 100
    vocab_size=1500,
    embed_dim=96,
    layout_epochs=120,
    classifier_epochs=6,
)
manifest = run_pipeline(config)
print("stages:", ", ".join(manifest["stages"]))
print("manifest sha256:", manifest_hash(outdir))

metrics = json.loads((outdir / "classifier_metrics.json").read_text())
print(f"\nclassifier mean test recall/precision: "
      f"{metrics['mean']['recall']:.2f} / {metrics['mean']['precision']:.2f}")

print("\ntop correlated markers (theme, marker, L2):")
for row in list(csv.DictReader(open(outdir / "correlations.csv")))[:8]:
    print(f"  {row['theme']:<16} {row['marker']:<28} {float(row['l2']):.3f}")

clusters = read_clusters_csv(outdir / "clusters.csv")
truth = GroundTruth.from_json(json.loads((outdir / "ground_truth.json").read_text()))
names = sorted(set(truth.archetypes[p] for p in clusters))
ari = adjusted_rand_index(
    [clusters[p] for p in sorted(clusters)],
    [names.index(truth.archetypes[p]) for p in sorted(clusters)],
)
print(f"\nclustered {len(clusters)} patients, ARI vs planted archetypes = {ari:.3f}")

print("\ncluster mean positions per time point (first rows):")
for row in list(csv.DictReader(open(outdir / "cluster_means.csv")))[:6]:
    print(f"  cluster {row['cluster']} t={float(row['t']):+5.1f}: "
          f"({float(row['mean_u1']):+7.2f}, {float(row['mean_u2']):+7.2f}) n={row['count']}")

print("\ndemographics per cluster:")
for row in csv.DictReader(open(outdir / "demographics.csv")):
    keep = {k: v for k, v in row.items() if k in ("cluster", "size", "age_at_diagnosis")}
    print(" ", keep)

print(f"\nartifacts in {outdir}")
