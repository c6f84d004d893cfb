"""SGD training of the item-item factorization machine.

Every observed (track, context) entry of the co-occurrence matrix becomes a
training instance. Under the logistic loss each positive is accompanied by
``negatives`` instances whose context track is drawn from the smoothed
track-occurrence distribution; under the squared loss the target is the
log2 co-occurrence weight. Step sizes follow AdaGrad with one accumulator
per bias and one per latent vector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from numba import njit

from .cooc import CoocMatrix
from .fm import FeatureSpace, FMParams

_logger = logging.getLogger(__name__)

_LOGISTIC, _SQUARED = 0, 1
_OBJECTIVE_STREAM = 0x0B1EC7


class TrainingDivergedError(FloatingPointError):
    """Parameters became NaN or infinite; the learning rate is likely too high."""


@dataclass(frozen=True)
class TrainConfig:
    loss: Literal["logistic", "squared"] = "logistic"
    negatives: int = 5
    ns_exponent: float = 0.75
    epochs: int = 10
    learning_rate: float = 0.05
    l1: float = 0.0
    l2: float = 0.0
    adagrad_epsilon: float = 1e-8
    seed: int = 0
    dim: int = 150
    positive_weight_mode: Literal["unit", "cooc_weight"] = "unit"
    include_context_side: bool = False

    def __post_init__(self):
        if self.loss not in ("logistic", "squared"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.positive_weight_mode not in ("unit", "cooc_weight"):
            raise ValueError(f"unknown positive_weight_mode {self.positive_weight_mode!r}")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class AdaGradState:
    """Accumulated squared gradients: one scalar per bias and one per latent vector."""

    Gw: np.ndarray
    Gv: np.ndarray

    @classmethod
    def zeros(cls, n_features: int) -> AdaGradState:
        return cls(np.zeros(n_features), np.zeros(n_features))

    def copy(self) -> AdaGradState:
        return AdaGradState(self.Gw.copy(), self.Gv.copy())


@dataclass(frozen=True)
class EpochSummary:
    epoch: int
    mean_objective: float
    instances: int


@dataclass
class TrainResult:
    params: FMParams
    state: AdaGradState
    history: list[EpochSummary] = field(default_factory=list)


class NegativeSampler:
    """Draws track indices with probability proportional to count ** exponent.

    Tracks with zero count are never drawn, including at exponent 0.
    """

    def __init__(self, counts: np.ndarray, exponent: float, seed: int = 0):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0 or not (counts > 0).any():
            raise ValueError("cannot sample negatives from an empty co-occurrence matrix")
        weights = np.where(counts > 0, np.power(counts, exponent, where=counts > 0), 0.0)
        self.probabilities = weights / weights.sum()
        self._cdf = np.cumsum(self.probabilities)
        self._cdf[-1] = 1.0
        self._rng = np.random.default_rng(seed)

    def draw(self, size: int, rng: np.random.Generator | None = None) -> np.ndarray:
        u = (rng or self._rng).random(size)
        return np.searchsorted(self._cdf, u, side="right").astype(np.int64)


def make_negative_sampler(cooc: CoocMatrix, exponent: float, seed: int = 0) -> NegativeSampler:
    return NegativeSampler(cooc.track_counts, exponent, seed)


def loss_value(yhat: float, y: float, loss: str) -> float:
    if loss == "logistic":
        return float(np.logaddexp(0.0, -yhat * y))
    if loss == "squared":
        return float((yhat - y) ** 2)
    raise ValueError(f"unknown loss {loss!r}")


def loss_derivative(yhat: float, y: float, loss: str) -> float:
    """dL/dyhat."""
    if loss == "logistic":
        z = yhat * y
        # -y * sigmoid(-z), written to avoid overflow for large |z|
        if z >= 0:
            e = math.exp(-z)
            return -y * e / (1.0 + e)
        return -y / (1.0 + math.exp(z))
    if loss == "squared":
        return 2.0 * (yhat - y)
    raise ValueError(f"unknown loss {loss!r}")


# -- numba kernels ------------------------------------------------------------


@njit(cache=True)
def _instance_slots(track, context, C, side_indptr, side_slots, include_ctx, out):
    out[0] = track
    out[1] = C + context
    m = 2
    for s in range(side_indptr[track], side_indptr[track + 1]):
        out[m] = side_slots[s]
        m += 1
    if include_ctx:
        for s in range(side_indptr[context], side_indptr[context + 1]):
            slot = side_slots[s]
            dup = False
            for a in range(2, m):
                if out[a] == slot:
                    dup = True
                    break
            if not dup:
                out[m] = slot
                m += 1
    return m


@njit(cache=True)
def _predict(slots, m, w, V, sum_buf):
    k = V.shape[1]
    for f in range(k):
        sum_buf[f] = 0.0
    yhat = 0.0
    sq = 0.0
    for a in range(m):
        i = slots[a]
        yhat += w[i]
        for f in range(k):
            x = V[i, f]
            sum_buf[f] += x
            sq += x * x
    dot = 0.0
    for f in range(k):
        dot += sum_buf[f] * sum_buf[f]
    return yhat + 0.5 * (dot - sq)


@njit(cache=True)
def _loss_and_slope(yhat, y, loss_kind):
    if loss_kind == 0:
        z = yhat * y
        if z >= 0.0:
            e = math.exp(-z)
            return math.log1p(e), -y * e / (1.0 + e)
        e = math.exp(z)
        return -z + math.log1p(e), -y / (1.0 + e)
    r = yhat - y
    return r * r, 2.0 * r


@njit(cache=True)
def _sgd_step(slots, m, y, p, loss_kind, w, V, Gw, Gv, lr, l1, l2, eps, sum_buf, grad_buf):
    """One AdaGrad step on p * L(yhat, y) plus the active slots' L2 pull.

    Gradients are taken at the pre-step parameters. Returns the pre-step
    value of the instance objective.
    """
    k = V.shape[1]
    yhat = _predict(slots, m, w, V, sum_buf)
    loss, slope = _loss_and_slope(yhat, y, loss_kind)
    g = p * slope
    reg = 0.0
    for a in range(m):
        i = slots[a]
        wi = w[i]
        norm2 = 0.0
        vv = 0.0
        for f in range(k):
            x = V[i, f]
            gv = g * (sum_buf[f] - x) + 2.0 * l2 * x
            grad_buf[a, f] = gv
            norm2 += gv * gv
            vv += x * x
        reg += l1 * wi * wi + l2 * vv
        gw = g + 2.0 * l1 * wi
        grad_buf[a, k] = gw
        grad_buf[a, k + 1] = norm2
    for a in range(m):
        i = slots[a]
        gw = grad_buf[a, k]
        Gw[i] += gw * gw
        w[i] -= lr / math.sqrt(Gw[i] + eps) * gw
        Gv[i] += grad_buf[a, k + 1]
        rate = lr / math.sqrt(Gv[i] + eps)
        for f in range(k):
            V[i, f] -= rate * grad_buf[a, f]
    return p * loss + reg


@njit(cache=True)
def _run_epoch(
    order, rows, cols, targets, pos_weights, negatives, n_neg,
    C, side_indptr, side_slots, include_ctx, loss_kind,
    w, V, Gw, Gv, lr, l1, l2, eps,
):
    k = V.shape[1]
    max_side = 0
    for t in range(C):
        d = side_indptr[t + 1] - side_indptr[t]
        if d > max_side:
            max_side = d
    slots = np.empty(2 + 2 * max_side, dtype=np.int64)
    sum_buf = np.empty(k)
    grad_buf = np.empty((slots.shape[0], k + 2))
    total = 0.0
    count = 0
    for t in range(order.shape[0]):
        e = order[t]
        i = rows[e]
        m = _instance_slots(i, cols[e], C, side_indptr, side_slots, include_ctx, slots)
        total += _sgd_step(slots, m, targets[e], pos_weights[e], loss_kind,
                           w, V, Gw, Gv, lr, l1, l2, eps, sum_buf, grad_buf)
        count += 1
        for r in range(n_neg):
            j = negatives[t * n_neg + r]
            m = _instance_slots(i, j, C, side_indptr, side_slots, include_ctx, slots)
            total += _sgd_step(slots, m, -1.0, 1.0, loss_kind,
                               w, V, Gw, Gv, lr, l1, l2, eps, sum_buf, grad_buf)
            count += 1
    return total, count


@njit(cache=True)
def _data_loss(
    rows, cols, targets, pos_weights, negatives, n_neg,
    C, side_indptr, side_slots, include_ctx, loss_kind, w, V,
):
    k = V.shape[1]
    max_side = 0
    for t in range(C):
        d = side_indptr[t + 1] - side_indptr[t]
        if d > max_side:
            max_side = d
    slots = np.empty(2 + 2 * max_side, dtype=np.int64)
    sum_buf = np.empty(k)
    total = 0.0
    for e in range(rows.shape[0]):
        i = rows[e]
        m = _instance_slots(i, cols[e], C, side_indptr, side_slots, include_ctx, slots)
        loss, _ = _loss_and_slope(_predict(slots, m, w, V, sum_buf), targets[e], loss_kind)
        total += pos_weights[e] * loss
        for r in range(n_neg):
            m = _instance_slots(i, negatives[e * n_neg + r], C, side_indptr, side_slots,
                                include_ctx, slots)
            loss, _ = _loss_and_slope(_predict(slots, m, w, V, sum_buf), -1.0, loss_kind)
            total += loss
    return total


# -- python surface -----------------------------------------------------------


def _loss_kind(cfg: TrainConfig) -> int:
    return _LOGISTIC if cfg.loss == "logistic" else _SQUARED


def _positive_instances(cooc: CoocMatrix, cfg: TrainConfig):
    rows, cols, vals = cooc.ordered_pairs()
    if cfg.loss == "logistic":
        targets = np.ones(len(vals))
    else:
        targets = np.log2(vals)
    if cfg.positive_weight_mode == "unit":
        weights = np.ones(len(vals))
    else:
        weights = 1.0 + np.log2(1.0 + vals)
    return rows, cols, targets, weights


def _check_shapes(cooc: CoocMatrix, space: FeatureSpace, params: FMParams, cfg: TrainConfig):
    if space.catalog_size != cooc.n_tracks:
        raise ValueError("feature space catalog does not match the co-occurrence vocabulary")
    if params.n_features != space.n_features or params.k != cfg.dim:
        raise ValueError(
            f"params shape {params.V.shape} does not match n={space.n_features}, k={cfg.dim}"
        )


def sgd_step(
    slots: Sequence[int],
    y: float,
    p: float,
    params: FMParams,
    state: AdaGradState,
    cfg: TrainConfig,
) -> float:
    """Apply one in-place update for a single instance; returns its pre-step objective."""
    idx = np.asarray(slots, dtype=np.int64)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("active slots must be distinct")
    sum_buf = np.empty(params.k)
    grad_buf = np.empty((len(idx), params.k + 2))
    return _sgd_step(
        idx, len(idx), float(y), float(p), _loss_kind(cfg),
        params.w, params.V, state.Gw, state.Gv,
        cfg.learning_rate, cfg.l1, cfg.l2, cfg.adagrad_epsilon, sum_buf, grad_buf,
    )


def train_epoch(
    cooc: CoocMatrix,
    space: FeatureSpace,
    params: FMParams,
    state: AdaGradState,
    cfg: TrainConfig,
    epoch: int = 0,
) -> EpochSummary:
    """One pass over all observed entries in seeded random order; updates in place.

    The permutation and the negative draws come from a generator seeded by
    ``(cfg.seed, epoch)``, so each epoch is reproducible on its own.
    """
    _check_shapes(cooc, space, params, cfg)
    rows, cols, targets, weights = _positive_instances(cooc, cfg)
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(rows)).astype(np.int64)
    n_neg = cfg.negatives if cfg.loss == "logistic" else 0
    if n_neg and len(rows):
        negatives = make_negative_sampler(cooc, cfg.ns_exponent).draw(len(rows) * n_neg, rng)
    else:
        negatives = np.zeros(0, dtype=np.int64)
    indptr, side_slots = space.side_csr()
    total, count = _run_epoch(
        order, rows, cols, targets, weights, negatives, n_neg,
        space.catalog_size, indptr, side_slots, cfg.include_context_side, _loss_kind(cfg),
        params.w, params.V, state.Gw, state.Gv,
        cfg.learning_rate, cfg.l1, cfg.l2, cfg.adagrad_epsilon,
    )
    if not params.is_finite():
        raise TrainingDivergedError(
            f"non-finite parameters after epoch {epoch}; lower the learning rate "
            f"(currently {cfg.learning_rate})"
        )
    mean = total / count if count else 0.0
    return EpochSummary(epoch, mean, count)


def objective_value(
    cooc: CoocMatrix, space: FeatureSpace, params: FMParams, cfg: TrainConfig
) -> float:
    """Full objective: weighted data loss plus global L2 on all biases and vectors.

    Under the logistic loss the negatives are a fixed draw seeded by
    ``cfg.seed``, so successive calls on changing parameters are comparable.
    """
    reg = cfg.l1 * float(params.w @ params.w) + cfg.l2 * float(np.einsum("ij,ij->", params.V, params.V))
    if cooc.n_entries == 0:
        return reg
    _check_shapes(cooc, space, params, cfg)
    rows, cols, targets, weights = _positive_instances(cooc, cfg)
    n_neg = cfg.negatives if cfg.loss == "logistic" else 0
    if n_neg:
        rng = np.random.default_rng([cfg.seed, _OBJECTIVE_STREAM])
        negatives = make_negative_sampler(cooc, cfg.ns_exponent).draw(len(rows) * n_neg, rng)
    else:
        negatives = np.zeros(0, dtype=np.int64)
    indptr, side_slots = space.side_csr()
    data = _data_loss(
        rows, cols, targets, weights, negatives, n_neg,
        space.catalog_size, indptr, side_slots, cfg.include_context_side, _loss_kind(cfg),
        params.w, params.V,
    )
    return data + reg


def train(
    cooc: CoocMatrix,
    space: FeatureSpace,
    cfg: TrainConfig,
    params: FMParams | None = None,
    state: AdaGradState | None = None,
    callback: Callable[[EpochSummary, FMParams], None] | None = None,
) -> TrainResult:
    """Initialise (unless given) and run ``cfg.epochs`` epochs."""
    if params is None:
        params = FMParams.init(space.n_features, cfg.dim, cfg.seed)
    if state is None:
        state = AdaGradState.zeros(space.n_features)
    result = TrainResult(params, state)
    for epoch in range(cfg.epochs):
        summary = train_epoch(cooc, space, params, state, cfg, epoch)
        result.history.append(summary)
        _logger.debug("epoch %d: mean objective %.6f", epoch, summary.mean_objective)
        if callback is not None:
            callback(summary, params)
    return result
