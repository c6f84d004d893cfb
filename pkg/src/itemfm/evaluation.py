"""Time-based splitting and binned mean percentile rank.

For a track ``a`` with test-period context tracks ``B`` and every other
catalog track in ``I``, the percentile rank is the fraction of (b, i) pairs
where ``i`` is at least as close to ``a`` as ``b`` is (ties count half).
0 means every context track outranks every other track; 0.5 is random.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .cooc import CoocMatrix, WindowConfig, build_cooc
from .embed import EmbeddingSet, ZeroVectorError
from .ingest import PositiveInteraction, sort_interactions

_logger = logging.getLogger(__name__)

DEFAULT_BIN_EDGES = (5, 10, 20, 50, 100, 1000, 5000, 15000)

T = TypeVar("T")


@dataclass(frozen=True)
class EvalConfig:
    bin_edges: tuple[int, ...] = DEFAULT_BIN_EDGES
    max_eval_tracks_per_query: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        edges = tuple(self.bin_edges)
        object.__setattr__(self, "bin_edges", edges)
        if not edges or edges[0] < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin edges must be >= 1 and strictly ascending")
        if self.max_eval_tracks_per_query is not None and self.max_eval_tracks_per_query < 1:
            raise ValueError("max_eval_tracks_per_query must be positive")


@dataclass(frozen=True)
class BinResult:
    edge: int
    count: int
    mpr: float


@dataclass
class EvalReport:
    bins: list[BinResult]
    overall: float
    n_tracks: int
    skipped_missing: int = 0
    skipped_no_context: int = 0
    per_track: dict[str, float] = field(default_factory=dict, repr=False)

    def bin(self, edge: int) -> BinResult | None:
        return next((b for b in self.bins if b.edge == edge), None)

    def mpr_up_to(self, max_count: float, counts: Mapping[str, float]) -> float:
        """Mean percentile rank over evaluated tracks whose train count is at most ``max_count``."""
        vals = [pr for t, pr in self.per_track.items() if counts.get(t, 0.0) <= max_count]
        return float(np.mean(vals)) if vals else float("nan")

    def to_tsv(self) -> str:
        lines = ["bin\tcount\tmpr"]
        lines += [f"{b.edge}\t{b.count}\t{b.mpr!r}" for b in self.bins]
        lines.append(f"avg\t{self.n_tracks}\t{self.overall!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")


def _timestamp(item) -> int:
    ts = getattr(item, "first_timestamp", None)
    return item.timestamp if ts is None else ts


def time_split(items: Iterable[T], split_timestamp: int) -> tuple[list[T], list[T]]:
    """Everything before the split trains; later items test unless the user already had the track.

    Works on interactions or raw events (anything with ``user_id``,
    ``track_id`` and a ``first_timestamp`` or ``timestamp``).
    """
    items = list(items)
    train = [it for it in items if _timestamp(it) < split_timestamp]
    seen = {(it.user_id, it.track_id) for it in train}
    test = [
        it
        for it in items
        if _timestamp(it) >= split_timestamp and (it.user_id, it.track_id) not in seen
    ]
    return train, test


def quantile_timestamp(interactions: Sequence[PositiveInteraction], q: float) -> int:
    """Split point leaving roughly a fraction ``q`` of interactions before it."""
    ts = np.sort([it.first_timestamp for it in interactions])
    if len(ts) == 0:
        raise ValueError("no interactions")
    return int(ts[min(int(q * len(ts)), len(ts) - 1)])


def split_users(
    interactions: Iterable[PositiveInteraction], fraction: float, seed: int = 0
) -> tuple[list[PositiveInteraction], list[PositiveInteraction]]:
    """Partition interactions by user; a seeded ``fraction`` of users goes to the first part."""
    interactions = list(interactions)
    users = sorted({it.user_id for it in interactions})
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(users)[: int(round(fraction * len(users)))].tolist())
    first = [it for it in interactions if it.user_id in chosen]
    second = [it for it in interactions if it.user_id not in chosen]
    return first, second


def _pr_from_cosines(cos_b: np.ndarray, cos_i: np.ndarray) -> float:
    cos_i = np.sort(cos_i)
    lo = np.searchsorted(cos_i, cos_b, side="left")
    hi = np.searchsorted(cos_i, cos_b, side="right")
    above = len(cos_i) - hi
    ties = hi - lo
    return float((above.sum() + 0.5 * ties.sum()) / (len(cos_b) * len(cos_i)))


def percentile_rank(
    a: str,
    context: Iterable[str],
    all_tracks: Iterable[str],
    embeddings: EmbeddingSet,
) -> float:
    """Percentile rank of track ``a`` against its context set."""
    context = set(context) - {a}
    others = [t for t in dict.fromkeys(all_tracks) if t != a and t not in context]
    if not context:
        raise ValueError(f"track {a!r} has no context tracks")
    if not others:
        raise ValueError(f"track {a!r} has no remaining tracks to rank against")
    ids = [a, *sorted(context), *others]
    vecs = embeddings.vectors[[embeddings.index[t] for t in ids]]
    norms = np.linalg.norm(vecs, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise ZeroVectorError(f"zero-norm embedding for track {ids[zero[0]]!r}")
    unit = vecs / norms[:, None]
    cos = unit[1:] @ unit[0]
    nb = len(context)
    return _pr_from_cosines(cos[:nb], cos[nb:])


def assign_bin(count: float, edges: Sequence[int]) -> int:
    """Smallest edge >= count; counts above the last edge go to the last bin."""
    for e in edges:
        if count <= e:
            return e
    return edges[-1]


def track_counts(cooc: CoocMatrix) -> dict[str, float]:
    return {t: float(c) for t, c in zip(cooc.vocab, cooc.track_counts)}


def context_sets(
    test: Iterable[PositiveInteraction], window: WindowConfig
) -> dict[str, list[str]]:
    """Tracks played in the context of each test track, using the training window."""
    cooc = build_cooc(sort_interactions(test), window)
    return {t: [cooc.vocab[j] for j in cooc.neighbours(i)] for i, t in enumerate(cooc.vocab)}


def evaluate(
    test: Iterable[PositiveInteraction],
    train_counts: Mapping[str, float],
    embeddings: EmbeddingSet,
    cfg: EvalConfig = EvalConfig(),
    window: WindowConfig = WindowConfig(),
    threads: int = 1,
) -> EvalReport:
    """Binned MPR of ``embeddings`` on test-period context pairs.

    Every track of the embedding vocabulary is a candidate. Test tracks
    without an embedding are skipped and counted, as are tracks whose
    context tracks all lack embeddings. Per-track ranks are independent, so
    ``threads > 1`` changes only the wall time, never the result.
    """
    contexts = context_sets(test, window)
    unit = embeddings.normalized()
    rng = np.random.default_rng(cfg.rng_seed)
    cap = cfg.max_eval_tracks_per_query
    report = EvalReport([], float("nan"), 0)
    tasks = []
    for a, ctx in contexts.items():
        ia = embeddings.index.get(a)
        if ia is None:
            report.skipped_missing += 1
            continue
        ib = np.array(sorted({embeddings.index[b] for b in ctx if b in embeddings.index} - {ia}))
        if len(ib) == 0:
            report.skipped_no_context += 1
            continue
        mask = np.ones(len(embeddings), dtype=bool)
        mask[ib] = False
        mask[ia] = False
        ii = np.flatnonzero(mask)
        if len(ii) == 0:
            report.skipped_no_context += 1
            continue
        if cap is not None and len(ii) > cap:
            ii = np.sort(rng.choice(ii, size=cap, replace=False))
        tasks.append((a, ia, ib, ii))

    def rank(task) -> float:
        _, ia, ib, ii = task
        cos = unit @ unit[ia]
        return _pr_from_cosines(cos[ib], cos[ii])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            prs = list(pool.map(rank, tasks))
    else:
        prs = [rank(t) for t in tasks]
    binned: dict[int, list[float]] = {e: [] for e in cfg.bin_edges}
    for (a, *_), pr in zip(tasks, prs):
        report.per_track[a] = pr
        binned[assign_bin(train_counts.get(a, 0.0), cfg.bin_edges)].append(pr)
    report.bins = [BinResult(e, len(v), float(np.mean(v))) for e, v in binned.items() if v]
    report.n_tracks = len(report.per_track)
    if report.per_track:
        report.overall = float(np.mean(list(report.per_track.values())))
    _logger.info(
        "evaluated %d tracks (%d without embedding, %d without context): MPR %.4f",
        report.n_tracks,
        report.skipped_missing,
        report.skipped_no_context,
        report.overall,
    )
    return report
