"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error. The ``call``
subcommand is a JSON-in/JSON-out surface for scripting bindings: it reads an
argument object from stdin (or ``--json FILE``) and prints
``{"ok": true, "result": ...}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys

import numpy as np

from . import cohort as ch
from . import embedder as emb
from . import interpret as itp
from . import pipeline as pl
from . import reduce as red
from . import synth as syn
from . import tokenizer as tok
from . import trajectory as trj
from .errors import ConfigurationError, DataError, TrajlensError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _base_config(args, stages: tuple[str, ...]) -> pl.RunConfig:
    cfg = pl.RunConfig(outdir=args.outdir, stages=stages)
    for name in (
        "seed", "synth_n", "events", "patients", "bounds", "max_len", "vocab_size",
        "embed_dim", "n_neighbors", "min_dist", "layout_epochs", "run_sweep",
        "top_k", "markers", "grid", "k", "wcss_seeds",
    ):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "profile"):
        cfg.synth_profile = args.profile
    return cfg


def _run_stage(args, stage: str, **overrides) -> int:
    cfg = _base_config(args, (stage,))
    for k, v in overrides.items():
        setattr(cfg, k, v)
    pl.run_pipeline(cfg, partial=True)
    print(f"stage {stage} complete; outputs in {cfg.outdir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.profile != "t2d":
        raise ConfigurationError(f"unknown profile {args.profile!r}")
    profile = syn.bundled_profile_t2d()
    generated = syn.generate_cohort(profile, args.n, args.seed)
    import os

    os.makedirs(args.outdir, exist_ok=True)
    generated.write(
        os.path.join(args.outdir, "events.jsonl"),
        os.path.join(args.outdir, "patients.jsonl"),
        os.path.join(args.outdir, "ground_truth.json"),
    )
    print(f"wrote events.jsonl, patients.jsonl, ground_truth.json to {args.outdir}")
    return EXIT_OK


def cmd_cohort(args) -> int:
    return _run_stage(args, "cohort")


def cmd_tokenize(args) -> int:
    if args.train:
        with open(args.train, encoding="utf-8") as fh:
            corpus = [line.rstrip("\n") for line in fh if line.strip()]
        vocab = tok.train_vocab(corpus, args.vocab_size or tok.DEFAULT_VOCAB_SIZE)
        vocab.save(args.out or "vocab.txt")
        print(f"trained vocabulary of {len(vocab)} tokens")
        return EXIT_OK
    if args.encode is not None:
        vocab = tok.Vocabulary.load(args.vocab)
        seq = tok.encode(args.encode, vocab, args.max_len or tok.DEFAULT_MAX_LEN)
        print(json.dumps({"ids": list(seq.ids), "length": seq.length}))
        return EXIT_OK
    return _run_stage(args, "tokenize")


def cmd_embed(args) -> int:
    if args.ingest:
        import os

        snapshots = ch.read_snapshots_jsonl(os.path.join(args.outdir, "snapshots_split.jsonl"))
        matrix = emb.ingest_embeddings(args.ingest, [s.key for s in snapshots], normalize=True)
        matrix.write_csv(os.path.join(args.outdir, "embeddings.csv"))
        print(f"ingested {len(matrix.keys)} embedding rows of dim {matrix.dim}")
        return EXIT_OK
    return _run_stage(args, "embed")


def cmd_classify(args) -> int:
    import os

    cfg = _base_config(args, ("embed",))
    if args.train:
        matrix = emb.ingest_embeddings(os.path.join(args.outdir, "embeddings.csv"))
        pl.classify_embeddings(cfg, args.outdir, matrix)
        print("trained per-fold classifiers")
        return EXIT_OK
    with open(os.path.join(args.outdir, "classifier_metrics.json"), encoding="utf-8") as fh:
        print(fh.read().strip())
    return EXIT_OK


def cmd_reduce(args) -> int:
    return _run_stage(args, "reduce", run_sweep=bool(args.sweep))


def cmd_interpret(args) -> int:
    return _run_stage(args, "interpret")


def cmd_cluster(args) -> int:
    overrides = {}
    if args.seeds is not None:
        overrides["wcss_seeds"] = args.seeds
    return _run_stage(args, "cluster", **overrides)


def cmd_run(args) -> int:
    cfg = pl.RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.outdir is not None:
        cfg.outdir = args.outdir
    pl.run_pipeline(cfg)
    digest = pl.manifest_hash(cfg.outdir)
    print(json.dumps({"outdir": cfg.outdir, "manifest_sha256": digest}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Bindings surface


def _call_dtw(params: dict):
    a = np.asarray(params["a"], dtype=np.float64)
    b = np.asarray(params["b"], dtype=np.float64)
    for name, arr in (("a", a), ("b", b)):
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise DataError(f"dtw: expected {name} shaped (n, 2), got {arr.shape}")
    return {"distance": trj.dtw(a, b)}


def _call_point_biserial(params: dict):
    return {
        "r": itp.point_biserial(
            np.asarray(params["f"], dtype=np.float64),
            np.asarray(params["u"], dtype=np.float64),
        )
    }


def _call_l2_rank(params: dict):
    records = [
        itp.CorrelationRecord(r["marker"], float(r["r_u1"]), float(r["r_u2"]))
        for r in params["records"]
    ]
    ranked = itp.l2_rank(records, params.get("top_k", 15))
    return {
        "ranked": [
            {"marker": r.marker, "r_u1": r.r_u1, "r_u2": r.r_u2, "l2": r.l2} for r in ranked
        ]
    }


def _call_dtw_kmeans(params: dict):
    series = [np.asarray(s, dtype=np.float64) for s in params["series"]]
    model = trj.dtw_kmeans(
        series,
        int(params["k"]),
        seed=int(params.get("seed", 0)),
        max_iter=int(params.get("max_iter", 50)),
    )
    return {
        "labels": [int(c) for c in model.labels],
        "wcss": model.wcss,
        "iterations": model.iterations,
    }


def _call_reduce(params: dict):
    coords = red.reduce_embedding(
        np.asarray(params["matrix"], dtype=np.float64),
        n_neighbors=int(params.get("n_neighbors", 15)),
        min_dist=float(params.get("min_dist", 0.1)),
        n_epochs=int(params.get("epochs", 200)),
        seed=int(params.get("seed", 0)),
    )
    return {"coords": [[float(u), float(v)] for u, v in coords]}


def _call_run_pipeline(params: dict):
    if "config" in params:
        cfg = pl.RunConfig.load(params["config"])
    elif "config_inline" in params:
        cfg = pl.RunConfig.from_json(params["config_inline"])
    else:
        raise ConfigurationError("run_pipeline call needs 'config' or 'config_inline'")
    manifest = pl.run_pipeline(cfg)
    return {
        "manifest": manifest,
        "manifest_sha256": pl.manifest_hash(cfg.outdir),
        "outdir": cfg.outdir,
    }


CALL_TABLE = {
    "dtw": _call_dtw,
    "point_biserial": _call_point_biserial,
    "l2_rank": _call_l2_rank,
    "dtw_kmeans": _call_dtw_kmeans,
    "reduce": _call_reduce,
    "run_pipeline": _call_run_pipeline,
}


def cmd_call(args) -> int:
    if args.serve:
        return _serve()
    if args.fn is None:
        raise ConfigurationError("call needs a function name (or --serve)")
    if args.fn not in CALL_TABLE:
        raise ConfigurationError(f"unknown function {args.fn!r}; have {sorted(CALL_TABLE)}")
    if args.json:
        with open(args.json, encoding="utf-8") as fh:
            params = json.load(fh)
    else:
        params = json.load(sys.stdin)
    try:
        result = CALL_TABLE[args.fn](params)
    except TrajlensError as exc:
        print(json.dumps({"ok": False, "error": {"type": type(exc).__name__, "message": str(exc)}}))
        return EXIT_CONFIG if isinstance(exc, ConfigurationError) else EXIT_DATA
    print(json.dumps({"ok": True, "result": result}))
    return EXIT_OK


def _serve() -> int:
    """Line-oriented request loop: one JSON object in, one JSON object out.

    Requests look like {"fn": "dtw", "params": {...}}; errors are reported in
    the response line rather than terminating the loop.
    """
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            fn = request["fn"]
            if fn not in CALL_TABLE:
                raise ConfigurationError(f"unknown function {fn!r}")
            out = {"ok": True, "result": CALL_TABLE[fn](request.get("params", {}))}
        except Exception as exc:  # keep serving; the client maps the error
            out = {"ok": False, "error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(out), flush=True)
    return EXIT_OK


# ---------------------------------------------------------------------------


# lets "--bounds -10,0,10,20" parse: comma lists starting with a minus are
# values, not option strings
_NEGATIVE_LIST = re.compile(r"^-\d+(\.\d+)?(,-?\d+(\.\d+)?)*$")


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = _NEGATIVE_LIST


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajlens", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(sp, outdir=True):
        if outdir:
            sp.add_argument("--outdir", default="out")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("synth", help="generate a synthetic cohort")
    sp.add_argument("--profile", default="t2d")
    sp.add_argument("--n", type=int, default=100, help="patients per archetype")
    add_common(sp)
    sp.set_defaults(handler=cmd_synth)

    sp = sub.add_parser("cohort", help="aggregate, label, match and snapshot")
    sp.add_argument("--events", default=None)
    sp.add_argument("--patients", default=None)
    sp.add_argument("--bounds", type=_floats, default=None)
    sp.add_argument("--max-len", dest="max_len", type=int, default=None)
    sp.add_argument("--profile", default=None, help="bundled profile for code sets")
    add_common(sp)
    sp.set_defaults(handler=cmd_cohort)

    sp = sub.add_parser("tokenize", help="train the vocabulary and split snapshots")
    sp.add_argument("--train", default=None, metavar="CORPUS", help="train on a text file")
    sp.add_argument("--encode", default=None, metavar="TEXT", help="encode a string")
    sp.add_argument("--vocab", default="vocab.txt")
    sp.add_argument("--vocab-size", dest="vocab_size", type=int, default=None)
    sp.add_argument("--max-len", dest="max_len", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--profile", default=None)
    add_common(sp)
    sp.set_defaults(handler=cmd_tokenize)

    sp = sub.add_parser("embed", help="baseline embeddings (or ingest external)")
    sp.add_argument("--baseline", action="store_true", default=True)
    sp.add_argument("--ingest", default=None, metavar="CSV")
    sp.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    sp.add_argument("--profile", default=None)
    add_common(sp)
    sp.set_defaults(handler=cmd_embed)

    sp = sub.add_parser("classify", help="train/evaluate the per-fold classifiers")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--train", action="store_true")
    group.add_argument("--eval", action="store_true")
    add_common(sp)
    sp.set_defaults(handler=cmd_classify)

    sp = sub.add_parser("reduce", help="2D reduction of the embeddings")
    sp.add_argument("--n-neighbors", dest="n_neighbors", type=int, default=None)
    sp.add_argument("--min-dist", dest="min_dist", type=float, default=None)
    sp.add_argument("--epochs", dest="layout_epochs", type=int, default=None)
    sp.add_argument("--sweep", action="store_true")
    sp.add_argument("--profile", default=None)
    add_common(sp)
    sp.set_defaults(handler=cmd_reduce)

    sp = sub.add_parser("interpret", help="marker correlations and themes")
    sp.add_argument("--top-k", dest="top_k", type=int, default=None)
    sp.add_argument("--markers", default=None, help="pre-built markers.csv")
    sp.add_argument("--profile", default=None)
    add_common(sp)
    sp.set_defaults(handler=cmd_interpret)

    sp = sub.add_parser("cluster", help="trajectory k-means under DTW")
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--seeds", type=int, default=None, help="WCSS sweep seeds (0 = skip)")
    sp.add_argument("--grid", type=_floats, default=None)
    sp.add_argument("--sweep", dest="run_sweep", action="store_true", default=None)
    sp.add_argument("--profile", default=None)
    add_common(sp)
    sp.set_defaults(handler=cmd_cluster)

    sp = sub.add_parser("run", help="run the full pipeline from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--outdir", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(handler=cmd_run)

    sp = sub.add_parser("call", help="JSON scripting surface for bindings")
    sp.add_argument("fn", nargs="?", default=None)
    sp.add_argument("--json", default=None, help="read params from a file instead of stdin")
    sp.add_argument("--serve", action="store_true", help="answer JSON requests line by line")
    sp.set_defaults(handler=cmd_call)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
