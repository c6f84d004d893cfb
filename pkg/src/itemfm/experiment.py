"""Glue for comparing ITEM, ITEMc and IMPL on one time-based split.

Used by the acceptance tests, the demos and the ``pipeline`` command.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .als import train_als
from .cooc import CoocMatrix, WindowConfig, build_cooc
from .embed import ComposeMode, EmbeddingSet, compose_final_vectors
from .evaluation import EvalConfig, EvalReport, evaluate, quantile_timestamp, time_split
from .fm import FeatureSpace
from .ingest import PositiveInteraction, sort_interactions
from .trainer import TrainConfig, TrainResult, train

_logger = logging.getLogger(__name__)


@dataclass
class Split:
    train: list[PositiveInteraction]
    test: list[PositiveInteraction]
    cooc: CoocMatrix
    window: WindowConfig

    def occurrences(self) -> dict[str, int]:
        """Train interactions per track (distinct users, since pairs are unique)."""
        return dict(Counter(it.track_id for it in self.train))


def prepare_split(
    interactions: Iterable[PositiveInteraction],
    split_timestamp: int | None = None,
    quantile: float = 0.8,
    window: WindowConfig = WindowConfig(),
) -> Split:
    """Time split (at ``split_timestamp`` or the given quantile) plus the train co-occurrences."""
    interactions = sort_interactions(interactions)
    if split_timestamp is None:
        split_timestamp = quantile_timestamp(interactions, quantile)
    train_i, test_i = time_split(interactions, split_timestamp)
    cooc = build_cooc(sort_interactions(train_i), window)
    return Split(train_i, test_i, cooc, window)


def fit_item(
    split: Split,
    cfg: TrainConfig,
    side: Mapping[str, Sequence[str]] | None = None,
    mode: ComposeMode = "track_plus_side",
) -> tuple[EmbeddingSet, TrainResult, FeatureSpace]:
    space = FeatureSpace.from_mapping(split.cooc.vocab, side)
    result = train(split.cooc, space, cfg)
    return compose_final_vectors(result.params, space, split.cooc.vocab, mode), result, space


def fit_impl(
    train_interactions: Iterable[PositiveInteraction],
    k: int,
    sweeps: int,
    reg: float,
    alpha: float | None = None,
    seed: int = 0,
) -> tuple[EmbeddingSet, list[float]]:
    """Item vectors of the ALS model and its per-sweep objectives."""
    model, _, items, history = train_als(train_interactions, k, sweeps, reg, alpha, seed)
    return EmbeddingSet(items, model.item_vectors), history


def tune_impl_reg(
    train_interactions: Sequence[PositiveInteraction],
    grid: Sequence[float],
    k: int,
    sweeps: int,
    window: WindowConfig = WindowConfig(),
    quantile: float = 0.8,
    seed: int = 0,
) -> tuple[float, dict[float, float]]:
    """Pick the regularization with the best MPR on a validation split of the train period.

    The train interactions are split again in time; each candidate is fit on
    the earlier part and scored on the later part. Test data is never seen.
    """
    inner = prepare_split(train_interactions, quantile=quantile, window=window)
    counts = inner.occurrences()
    scores = {}
    for reg in grid:
        emb, _ = fit_impl(inner.train, k, sweeps, reg, seed=seed)
        scores[reg] = evaluate(inner.test, counts, emb, EvalConfig(), window).overall
        _logger.info("validation MPR at reg=%g: %.4f", reg, scores[reg])
    best = min(grid, key=lambda r: (scores[r], r))
    return best, scores


def score(split: Split, embeddings: EmbeddingSet, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Evaluate on the test period, binning tracks by train interaction count."""
    return evaluate(split.test, split.occurrences(), embeddings, cfg, split.window)
