"""Implicit-feedback matrix factorization trained by alternating least squares.

Every (user, track) cell takes part in the objective: observed cells have
preference 1 and confidence ``1 + alpha``, all others preference 0 and
confidence 1. Each half-sweep solves the ridge-regularized weighted least
squares exactly for one side, using the shared Gram matrix so the cost is
proportional to the observed cells rather than the full grid.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .ingest import PositiveInteraction

_logger = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    """A normal-equation system had no unique solution (regularization is zero)."""


@dataclass
class ImplicitModel:
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    alpha: float
    reg: float
    reg_items: float | None = None

    @property
    def k(self) -> int:
        return self.item_vectors.shape[1]

    @property
    def item_reg(self) -> float:
        return self.reg if self.reg_items is None else self.reg_items

    @classmethod
    def init(
        cls,
        n_users: int,
        n_items: int,
        k: int,
        alpha: float,
        reg: float,
        seed: int = 0,
        reg_items: float | None = None,
    ) -> ImplicitModel:
        rng = np.random.default_rng(seed)
        scale = 0.1 / np.sqrt(k)
        return cls(
            rng.normal(0.0, scale, size=(n_users, k)),
            rng.normal(0.0, scale, size=(n_items, k)),
            alpha,
            reg,
            reg_items,
        )


def interaction_matrix(
    interactions: Iterable[PositiveInteraction],
    users: list[str] | None = None,
    items: list[str] | None = None,
) -> tuple[sp.csr_matrix, list[str], list[str]]:
    """Binary users x tracks CSR matrix plus the row and column vocabularies.

    Vocabularies default to sorted ids; interactions outside given
    vocabularies are dropped.
    """
    interactions = list(interactions)
    if users is None:
        users = sorted({it.user_id for it in interactions})
    if items is None:
        items = sorted({it.track_id for it in interactions})
    uidx = {u: i for i, u in enumerate(users)}
    iidx = {t: i for i, t in enumerate(items)}
    pairs = {
        (uidx[it.user_id], iidx[it.track_id])
        for it in interactions
        if it.user_id in uidx and it.track_id in iidx
    }
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    mat = sp.csr_matrix((np.ones(len(pairs)), (rows, cols)), shape=(len(users), len(items)))
    mat.sort_indices()
    return mat, users, items


def choose_alpha(R: sp.spmatrix) -> float:
    """Confidence scale that makes the extra positive mass equal the zero-cell count."""
    n_obs = R.nnz
    if n_obs == 0:
        raise ValueError("no observed interactions")
    zeros = R.shape[0] * R.shape[1] - n_obs
    if zeros == 0:
        warnings.warn("fully dense interaction matrix; alpha is 0", RuntimeWarning, stacklevel=2)
    return zeros / n_obs


def _solve(A: np.ndarray, b: np.ndarray, reg: float) -> np.ndarray:
    try:
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except np.linalg.LinAlgError:
        if reg > 0:
            raise
    # without a ridge term a PSD system may still be nonsingular but not PD in floating point
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[0]:
        raise SingularSystemError("singular normal equations; use reg > 0")
    return x


def solve_side(
    R: sp.csr_matrix, fixed: np.ndarray, alpha: float, reg: float, threads: int = 1
) -> np.ndarray:
    """Exact minimiser for every row of ``R`` given the other side's vectors.

    For row ``u`` with observed columns ``J``:
    ``(Y'Y + alpha * Y_J'Y_J + reg I) x = (1 + alpha) * sum_J y_j``.
    Rows are independent; ``threads > 1`` solves blocks of rows concurrently
    with identical results.
    """
    k = fixed.shape[1]
    base = fixed.T @ fixed + reg * np.eye(k)
    out = np.empty((R.shape[0], k))

    def solve_rows(block: range) -> None:
        for u in block:
            cols = R.indices[R.indptr[u] : R.indptr[u + 1]]
            if len(cols) == 0:
                if reg > 0:
                    out[u] = 0.0
                else:
                    out[u] = _solve(base, np.zeros(k), reg)
                continue
            Y = fixed[cols]
            A = base + alpha * (Y.T @ Y)
            b = (1.0 + alpha) * Y.sum(axis=0)
            out[u] = _solve(A, b, reg)

    n = R.shape[0]
    if threads > 1 and n > 1:
        step = -(-n // threads)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(solve_rows, [range(s, min(s + step, n)) for s in range(0, n, step)]))
    else:
        solve_rows(range(n))
    return out


def objective(R: sp.csr_matrix, model: ImplicitModel) -> float:
    """Weighted squared error over all cells plus the ridge terms.

    Uses sum over all cells of s^2 = <U'U, P'P> and corrects the observed cells.
    """
    U, P = model.user_vectors, model.item_vectors
    total = float(np.sum((U.T @ U) * (P.T @ P)))
    coo = R.tocoo()
    s = np.einsum("ij,ij->i", U[coo.row], P[coo.col])
    total += float(np.sum((1.0 + model.alpha) * (1.0 - s) ** 2 - s**2))
    total += model.reg * float(np.sum(U * U)) + model.item_reg * float(np.sum(P * P))
    return total


def als_sweep(
    R: sp.csr_matrix, model: ImplicitModel, threads: int = 1
) -> tuple[ImplicitModel, float]:
    """Users given items, then items given users; returns the model and objective."""
    if R.shape != (model.user_vectors.shape[0], model.item_vectors.shape[0]):
        raise ValueError(f"matrix shape {R.shape} does not match the model")
    R = sp.csr_matrix(R)
    model.user_vectors = solve_side(R, model.item_vectors, model.alpha, model.reg, threads)
    model.item_vectors = solve_side(
        R.T.tocsr(), model.user_vectors, model.alpha, model.item_reg, threads
    )
    return model, objective(R, model)


def train_als(
    interactions: Iterable[PositiveInteraction],
    k: int,
    sweeps: int,
    reg: float,
    alpha: float | None = None,
    seed: int = 0,
    reg_items: float | None = None,
    threads: int = 1,
) -> tuple[ImplicitModel, list[str], list[str], list[float]]:
    """Fit from interactions. Returns the model, user ids, track ids and per-sweep objectives."""
    R, users, items = interaction_matrix(interactions)
    if alpha is None:
        alpha = choose_alpha(R)
    model = ImplicitModel.init(len(users), len(items), k, alpha, reg, seed, reg_items)
    history = []
    for sweep in range(sweeps):
        model, value = als_sweep(R, model, threads)
        history.append(value)
        _logger.debug("als sweep %d: objective %.6g", sweep, value)
    return model, users, items, history
