"""Command-line entry point: ``itemfm <subcommand> [flags]``.

Subcommands run one stage each (ingest, split, cooc, train, train-als,
eval, query), ``synth`` writes a synthetic event log, and ``pipeline`` runs
everything in order from one config file. Flags override config values.
Each stage appends one JSON record to the log (``--log``, default stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Sequence

from . import __version__
from .als import SingularSystemError, train_als
from .config import ConfigError, RunConfig, load_config, with_global_seed
from .cooc import build_cooc, load_cooc, save_cooc
from .embed import (
    EmbeddingSet,
    ZeroVectorError,
    compose_final_vectors,
    load_embeddings,
    save_embeddings,
    top_n_similar,
)
from .evaluation import EvalReport, evaluate, quantile_timestamp, time_split, track_counts
from .fm import FeatureSpace, read_side_features, save_params, write_side_features
from .ingest import (
    IngestDiagnostics,
    MalformedEventError,
    ingest,
    read_events,
    read_interactions,
    sort_interactions,
    write_events,
    write_interactions,
)
from .synthetic import SyntheticConfig, generate
from .trainer import TrainingDivergedError, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_DIVERGED = 5
EXIT_BAD_INPUT = 6

_logger = logging.getLogger("itemfm")


class StageLog:
    """Writes one JSON object per line, per finished stage."""

    def __init__(self, path: str | None):
        self.path = path

    def write(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True)
        if self.path is None:
            print(line, file=sys.stderr)
        else:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    @contextmanager
    def stage(self, name: str, seed: int | None, inputs: dict[str, str]) -> Iterator[dict]:
        extra: dict[str, Any] = {"outputs": {}}
        start = time.perf_counter()
        yield extra
        outputs = extra.pop("outputs")
        self.write(
            {
                "stage": name,
                "wall_seconds": round(time.perf_counter() - start, 6),
                "seed": seed,
                "inputs": {k: _file_info(v) for k, v in inputs.items()},
                "outputs": {k: _file_info(v) for k, v in outputs.items()},
                **extra,
            }
        )


def _file_info(path: str) -> dict[str, Any]:
    return {"path": str(path), "bytes": os.path.getsize(path) if os.path.exists(path) else None}


def _require(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(p)


# -- stages --------------------------------------------------------------------


def stage_synth(spec: str, events_out: str, side_out: str | None, log: StageLog) -> None:
    scfg = SyntheticConfig.from_spec(spec)
    with log.stage("synth", scfg.seed, {}) as rec:
        corpus = generate(scfg)
        write_events(corpus.events, events_out)
        rec["outputs"]["events"] = events_out
        if side_out:
            write_side_features(corpus.creators, side_out)
            rec["outputs"]["side_features"] = side_out
        rec["events"] = len(corpus.events)


def stage_ingest(cfg: RunConfig, events: str, out: str, log: StageLog) -> None:
    _require(events)
    with log.stage("ingest", cfg.ingest.rng_seed, {"events": events}) as rec:
        diag = IngestDiagnostics()
        interactions = ingest(read_events(events, diag), cfg.ingest, diag)
        write_interactions(interactions, out)
        rec["outputs"]["interactions"] = out
        rec["diagnostics"] = {
            "events_read": diag.events_read,
            "malformed": diag.malformed,
            "ignored_kinds": dict(sorted(diag.ignored_kinds.items())),
            "merged_pairs": diag.merged_pairs,
            "positive_pairs": diag.positive_pairs,
            "after_floors": diag.after_floors,
            "after_sampling": diag.after_sampling,
        }


def stage_split(cfg: RunConfig, interactions: str, train_out: str, test_out: str, log: StageLog) -> None:
    _require(interactions)
    with log.stage("split", None, {"interactions": interactions}) as rec:
        items = read_interactions(interactions)
        split_ts = cfg.split.split_timestamp
        if split_ts is None:
            split_ts = quantile_timestamp(items, cfg.split.quantile)
        train_i, test_i = time_split(items, split_ts)
        write_interactions(train_i, train_out)
        write_interactions(test_i, test_out)
        rec["outputs"].update(train=train_out, test=test_out)
        rec.update(split_timestamp=split_ts, train=len(train_i), test=len(test_i))


def stage_cooc(cfg: RunConfig, interactions: str, out: str, log: StageLog) -> None:
    _require(interactions)
    with log.stage("cooc", cfg.window.rng_seed, {"interactions": interactions}) as rec:
        cooc = build_cooc(sort_interactions(read_interactions(interactions)), cfg.window)
        save_cooc(cooc, out)
        rec["outputs"]["cooc"] = out
        rec.update(tracks=cooc.n_tracks, entries=cooc.n_entries)


def stage_train(
    cfg: RunConfig,
    cooc_path: str,
    side_path: str | None,
    out: str,
    embeddings_out: str | None,
    log: StageLog,
) -> None:
    _require(cooc_path, side_path)
    inputs = {"cooc": cooc_path, **({"side_features": side_path} if side_path else {})}
    with log.stage("train", cfg.train.seed, inputs) as rec:
        cooc = load_cooc(cooc_path)
        side = read_side_features(side_path) if side_path else None
        space = FeatureSpace.from_mapping(cooc.vocab, side)
        result = train(cooc, space, cfg.train)
        save_params(result.params, space, out, binary=cfg.pipeline.binary)
        rec["outputs"]["params"] = out
        if embeddings_out:
            emb = compose_final_vectors(result.params, space, cooc.vocab, cfg.pipeline.compose)
            save_embeddings(emb, embeddings_out, binary=cfg.pipeline.binary)
            rec["outputs"]["embeddings"] = embeddings_out
        rec["epoch_objective"] = [h.mean_objective for h in result.history]
        rec.update(features=space.n_features, dim=cfg.train.dim)


def stage_train_als(cfg: RunConfig, interactions: str, out: str, log: StageLog) -> None:
    _require(interactions)
    a = cfg.als
    with log.stage("train-als", a.seed, {"interactions": interactions}) as rec:
        model, _, items, history = train_als(
            read_interactions(interactions), a.dim, a.sweeps, a.l2, a.alpha, a.seed, a.l2_items,
            threads=cfg.pipeline.threads,
        )
        save_embeddings(EmbeddingSet(items, model.item_vectors), out, binary=cfg.pipeline.binary)
        rec["outputs"]["embeddings"] = out
        rec.update(alpha=model.alpha, sweep_objective=history)


def stage_eval(
    cfg: RunConfig, embeddings: str, test: str, train_cooc: str, out: str, log: StageLog
) -> EvalReport:
    _require(embeddings, test, train_cooc)
    inputs = {"embeddings": embeddings, "test": test, "train_cooc": train_cooc}
    with log.stage("eval", cfg.eval.rng_seed, inputs) as rec:
        report = evaluate(
            read_interactions(test),
            track_counts(load_cooc(train_cooc)),
            load_embeddings(embeddings),
            cfg.eval,
            cfg.window,
            threads=cfg.pipeline.threads,
        )
        report.save(out)
        rec["outputs"]["report"] = out
        rec.update(
            mpr=report.overall,
            tracks=report.n_tracks,
            skipped_missing=report.skipped_missing,
            skipped_no_context=report.skipped_no_context,
        )
    return report


# -- argument parsing ----------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--config", help="INI run config (default: $ITEMFM_CONFIG if set)")
    g.add_argument("--log", help="append JSON-lines stage records here (default: stderr)")
    g.add_argument("--threads", type=int, help="worker threads for eval and ALS; results do not change")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--radius", type=int, help="window radius in tracks")
    p.add_argument("--radius-seconds", type=int, help="window radius in seconds (time mode)")
    p.add_argument("--mode", choices=["track", "time"])
    p.add_argument("--weighting", choices=["uniform", "inverse_distance"])


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=["logistic", "squared"])
    p.add_argument("--neg", type=int, help="negatives per positive")
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l1", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--ns-exponent", type=float)
    p.add_argument("--weight-mode", choices=["unit", "cooc_weight"])
    p.add_argument("--context-side", action="store_true", default=None,
                   help="also attach the context track's side features")
    p.add_argument("--compose", choices=["track_plus_side", "track_only", "track_plus_context_plus_side"])
    p.add_argument("--text", action="store_true", default=None, help="write text snapshots")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="itemfm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clustered event log")
    p.add_argument("--spec", default="", help='generator options, e.g. "clusters=8 users=100"')
    p.add_argument("--out", required=True)
    p.add_argument("--side-out", help="also write creator side features")

    p = sub.add_parser("ingest", parents=[common], help="events -> positive interactions")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("split", parents=[common], help="time-based train/test split")
    p.add_argument("--interactions", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--split-timestamp", type=int)
    p.add_argument("--quantile", type=float, help="split at this quantile of interaction times")

    p = sub.add_parser("cooc", parents=[common], help="interactions -> co-occurrence matrix")
    p.add_argument("--interactions", required=True)
    p.add_argument("--out", required=True)
    _window_flags(p)

    p = sub.add_parser("train", parents=[common], help="fit the factorization machine")
    p.add_argument("--cooc", required=True)
    p.add_argument("--side-features")
    p.add_argument("--out", required=True, help="parameter snapshot")
    p.add_argument("--embeddings", help="also write composed track vectors")
    p.add_argument("--seed", type=int)
    _train_flags(p)

    p = sub.add_parser("train-als", parents=[common], help="fit the implicit ALS baseline")
    p.add_argument("--interactions", required=True)
    p.add_argument("--out", required=True, help="item embedding snapshot")
    p.add_argument("--dim", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--l2-items", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--text", action="store_true", default=None)

    p = sub.add_parser("eval", parents=[common], help="binned mean percentile rank")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train-cooc", required=True)
    p.add_argument("--bins", help="comma-separated bin edges")
    p.add_argument("--max-eval-tracks", type=int)
    p.add_argument("--out", required=True)
    _window_flags(p)

    p = sub.add_parser("query", parents=[common], help="most similar tracks by cosine")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--n", type=int, default=10)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage from one config")
    p.add_argument("--events", help="raw event log (or use --gen-synthetic)")
    p.add_argument("--gen-synthetic", metavar="SPEC", help='e.g. "clusters=8 users=100"')
    p.add_argument("--side-features")
    p.add_argument("--workdir", help="artifact directory (default: [paths] workdir or .)")
    p.add_argument("--seed", type=int, help="seed for every stage")
    p.add_argument("--split-timestamp", type=int)
    p.add_argument("--quantile", type=float)
    p.add_argument("--no-als", action="store_true", help="skip the ALS baseline")
    p.add_argument("--als-dim", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--als-l2", type=float)
    _window_flags(p)
    _train_flags(p)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    seed = getattr(args, "seed", None)
    if args.command == "pipeline" and seed is not None:
        cfg = with_global_seed(cfg, seed)
        seed = None
    g = lambda name: getattr(args, name, None)  # noqa: E731
    binary = None if g("text") is None else not args.text
    bins = g("bins")
    overrides = {
        "pipeline": {"threads": g("threads"), "compose": g("compose"), "binary": binary},
        "ingest": {"rng_seed": seed if args.command == "ingest" else None},
        "window": {
            "radius_tracks": g("radius"),
            "radius_seconds": g("radius_seconds"),
            "mode": g("mode"),
            "weighting": g("weighting"),
        },
        "split": {"split_timestamp": g("split_timestamp"), "quantile": g("quantile")},
        "train": {
            "loss": g("loss"),
            "negatives": g("neg"),
            "dim": g("dim"),
            "epochs": g("epochs"),
            "learning_rate": g("lr"),
            "l1": g("l1"),
            "l2": g("l2"),
            "ns_exponent": g("ns_exponent"),
            "positive_weight_mode": g("weight_mode"),
            "include_context_side": g("context_side"),
            "seed": seed if args.command == "train" else None,
        },
        "als": {
            "dim": g("als_dim") if args.command == "pipeline" else g("dim"),
            "sweeps": g("sweeps"),
            "l2": g("als_l2") if args.command == "pipeline" else g("l2"),
            "l2_items": g("l2_items"),
            "alpha": g("alpha"),
            "seed": seed if args.command == "train-als" else None,
        },
        "eval": {
            "bin_edges": bins,
            "max_eval_tracks_per_query": g("max_eval_tracks"),
        },
    }
    if args.command == "train-als":
        overrides["train"] = {}
    return cfg.with_overrides(overrides)


def run_pipeline(cfg: RunConfig, args: argparse.Namespace, log: StageLog) -> EvalReport:
    workdir = Path(args.workdir or cfg.paths.get("workdir", "."))
    workdir.mkdir(parents=True, exist_ok=True)
    path = lambda name: str(workdir / name)  # noqa: E731
    events = args.events or cfg.paths.get("events")
    side = args.side_features or cfg.paths.get("side_features")
    spec = args.gen_synthetic if args.gen_synthetic is not None else cfg.paths.get("gen_synthetic")
    if spec is not None:
        if events:
            raise ConfigError("give either an event log or --gen-synthetic, not both")
        seed = cfg.pipeline.seed
        if seed is not None and "seed=" not in spec:
            spec = f"{spec} seed={seed}"
        events, side = path("events.tsv"), side or path("side_features.tsv")
        stage_synth(spec, events, side, log)
    if not events:
        raise ConfigError("no event log: pass --events, --gen-synthetic or set [paths] events")
    stage_ingest(cfg, events, path("interactions.tsv"), log)
    stage_split(cfg, path("interactions.tsv"), path("train.tsv"), path("test.tsv"), log)
    stage_cooc(cfg, path("train.tsv"), path("cooc.txt"), log)
    stage_train(cfg, path("cooc.txt"), side, path("params.fm"), path("embeddings.emb"), log)
    report = stage_eval(cfg, path("embeddings.emb"), path("test.tsv"), path("cooc.txt"), path("report.tsv"), log)
    if not args.no_als:
        stage_train_als(cfg, path("train.tsv"), path("als.emb"), log)
        stage_eval(cfg, path("als.emb"), path("test.tsv"), path("cooc.txt"), path("als_report.tsv"), log)
    return report


def _dispatch(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    log = StageLog(args.log)
    cmd = args.command
    if cmd == "synth":
        stage_synth(args.spec, args.out, args.side_out, log)
    elif cmd == "ingest":
        stage_ingest(cfg, args.events, args.out, log)
    elif cmd == "split":
        stage_split(cfg, args.interactions, args.train_out, args.test_out, log)
    elif cmd == "cooc":
        stage_cooc(cfg, args.interactions, args.out, log)
    elif cmd == "train":
        stage_train(cfg, args.cooc, args.side_features, args.out, args.embeddings, log)
    elif cmd == "train-als":
        stage_train_als(cfg, args.interactions, args.out, log)
    elif cmd == "eval":
        report = stage_eval(cfg, args.embeddings, args.test, args.train_cooc, args.out, log)
        sys.stdout.write(report.to_tsv())
    elif cmd == "query":
        _require(args.embeddings)
        emb = load_embeddings(args.embeddings)
        if args.track not in emb:
            raise KeyError(f"track {args.track!r} is not in {args.embeddings}")
        for track, cos in top_n_similar(args.track, args.n, emb):
            print(f"{track}\t{cos!r}")
    elif cmd == "pipeline":
        report = run_pipeline(cfg, args, log)
        sys.stdout.write(report.to_tsv())
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except FileNotFoundError as exc:
        _fail(f"missing file: {exc.filename or exc}")
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        _fail(f"invalid config: {exc}")
        return EXIT_BAD_CONFIG
    except TrainingDivergedError as exc:
        _fail(f"training diverged: {exc}")
        return EXIT_DIVERGED
    except (MalformedEventError, SingularSystemError, ZeroVectorError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        _fail(f"invalid input: {msg}")
        return EXIT_BAD_INPUT


def _fail(message: str) -> None:
    print(f"itemfm: error: {' '.join(str(message).split())}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
