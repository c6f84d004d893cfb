"""Sliding-window track-track co-occurrence counts.

A window slides along each user's time-ordered positive interactions; the
central track is paired with every track inside the window. Counts are kept
in a symmetric sparse matrix whose nonzero support is the set of observed
pairs used for training.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .ingest import PositiveInteraction

_EXACT_LIMIT = 2**53


class UnsortedInputError(ValueError):
    """Interactions are not grouped by user or not time-ordered within a user."""


@dataclass(frozen=True)
class WindowConfig:
    mode: Literal["track", "time"] = "track"
    radius_tracks: int = 5
    radius_seconds: int = 3600
    weighting: Literal["uniform", "inverse_distance"] = "uniform"
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("track", "time"):
            raise ValueError(f"unknown window mode {self.mode!r}")
        if self.weighting not in ("uniform", "inverse_distance"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.mode == "track" and self.radius_tracks < 1:
            raise ValueError("radius_tracks must be >= 1")
        if self.mode == "time" and self.radius_seconds <= 0:
            raise ValueError("radius_seconds must be positive")


@dataclass
class CoocMatrix:
    """Symmetric weighted co-occurrence matrix over a dense track vocabulary.

    ``matrix`` stores both (i, j) and (j, i); every stored weight is positive.
    ``track_counts[i]`` is the row sum of track ``i``.
    """

    vocab: list[str]
    matrix: sp.csr_matrix
    track_counts: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("duplicate track ids in vocabulary")

    @classmethod
    def empty(cls) -> CoocMatrix:
        return cls([], sp.csr_matrix((0, 0), dtype=np.float64), np.zeros(0))

    @property
    def n_tracks(self) -> int:
        return len(self.vocab)

    @property
    def n_entries(self) -> int:
        """Number of observed unordered pairs."""
        return self.matrix.nnz // 2

    def weight(self, a: str, b: str) -> float:
        i, j = self.index.get(a), self.index.get(b)
        if i is None or j is None:
            return 0.0
        return float(self.matrix[i, j])

    def upper(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unordered pairs as (i, j, weight) arrays with i < j, sorted by (i, j)."""
        coo = sp.triu(self.matrix, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    def ordered_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Every stored entry, both orientations, in CSR order."""
        m = self.matrix
        rows = np.repeat(np.arange(m.shape[0], dtype=np.int64), np.diff(m.indptr))
        return rows, m.indices.astype(np.int64), m.data.copy()

    def neighbours(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i] : m.indptr[i + 1]]

    def to_dict(self) -> dict[tuple[str, str], float]:
        rows, cols, vals = self.ordered_pairs()
        return {(self.vocab[r], self.vocab[c]): float(v) for r, c, v in zip(rows, cols, vals)}


def _user_sequences(
    interactions: Iterable[PositiveInteraction],
) -> list[tuple[str, list[str], list[int]]]:
    seqs: list[tuple[str, list[str], list[int]]] = []
    seen: set[str] = set()
    for it in interactions:
        if not seqs or seqs[-1][0] != it.user_id:
            if it.user_id in seen:
                raise UnsortedInputError(f"interactions of user {it.user_id!r} are not contiguous")
            seen.add(it.user_id)
            seqs.append((it.user_id, [], []))
        _, tracks, times = seqs[-1]
        if times and (it.first_timestamp, it.track_id) < (times[-1], tracks[-1]):
            raise UnsortedInputError(
                f"interactions of user {it.user_id!r} are not sorted by (timestamp, track_id)"
            )
        if times and (it.first_timestamp, it.track_id) == (times[-1], tracks[-1]):
            raise ValueError(f"duplicate interaction {it}")
        tracks.append(it.track_id)
        times.append(it.first_timestamp)
    for user, tracks, _ in seqs:
        if len(set(tracks)) != len(tracks):
            raise ValueError(f"user {user!r} has repeated tracks; interactions must be merged")
    return seqs


def window_pairs(
    positions_user: np.ndarray, times: np.ndarray, cfg: WindowConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All in-window position pairs (p, q), p < q, with their rank distance.

    ``positions_user`` labels each position of the concatenated sequences
    with its user; pairs never cross users.
    """
    n = len(positions_user)
    left, right, dist = [], [], []
    max_d = n - 1
    if cfg.mode == "track":
        max_d = min(max_d, cfg.radius_tracks)
    for d in range(1, max_d + 1):
        same = positions_user[:-d] == positions_user[d:]
        if cfg.mode == "time":
            same &= (times[d:] - times[:-d]) <= cfg.radius_seconds
        if not same.any():
            # gaps only grow with d in both modes
            break
        p = np.flatnonzero(same)
        left.append(p)
        right.append(p + d)
        dist.append(np.full(len(p), d, dtype=np.int64))
    if not left:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(left), np.concatenate(right), np.concatenate(dist)


def build_cooc(interactions: Iterable[PositiveInteraction], cfg: WindowConfig) -> CoocMatrix:
    """Count windowed track pairs over user sequences.

    Input must be grouped by user and sorted within each user by
    (first_timestamp, track_id); violations raise ``UnsortedInputError``.
    Every position is a window center, so an in-window pair of tracks (a, b)
    at rank distance ``d`` is generated twice, once from each side, and
    ``weight(a, b) = weight(b, a)`` grows by ``2 * w(d)`` with ``w(d) = 1`` or
    ``1/d``. Weights are the correctly rounded values of the exact rational
    sums, so results do not depend on summation order.
    """
    seqs = _user_sequences(interactions)
    prov: dict[str, int] = {}
    track_idx, user_lab, times = [], [], []
    for u, (_, tracks, ts) in enumerate(seqs):
        track_idx.extend(prov.setdefault(t, len(prov)) for t in tracks)
        user_lab.extend([u] * len(tracks))
        times.extend(ts)
    track_idx = np.asarray(track_idx, dtype=np.int64)
    p, q, d = window_pairs(np.asarray(user_lab), np.asarray(times, dtype=np.int64), cfg)
    if len(p) == 0:
        return CoocMatrix.empty()

    a, b = track_idx[p], track_idx[q]
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    dist = np.concatenate([d, d])
    n_prov = len(prov)
    keys, inverse = np.unique(rows * n_prov + cols, return_inverse=True)

    if cfg.weighting == "uniform":
        denom = 1
        numer_per_pair = np.bincount(inverse).astype(np.float64)
    else:
        denom = math.lcm(*np.unique(dist).tolist())
        counts = np.bincount(inverse)
        if denom * int(counts.max()) < _EXACT_LIMIT:
            numer_per_pair = np.bincount(inverse, weights=(denom // dist).astype(np.float64))
        else:
            numer_per_pair = None
    key_rows, key_cols = keys // n_prov, keys % n_prov

    if numer_per_pair is not None:
        weights = numer_per_pair / denom
        row_numer = np.bincount(key_rows, weights=numer_per_pair, minlength=n_prov)
        if row_numer.max() < _EXACT_LIMIT:
            counts_prov = row_numer / denom
        else:
            counts_prov = _exact_row_sums(key_rows, numer_per_pair, denom, n_prov)
    else:
        weights, counts_prov = _exact_fallback(inverse, dist, key_rows, len(keys), n_prov)

    # one generation per center; doubling is exact in binary floating point
    weights = 2.0 * weights
    counts_prov = 2.0 * counts_prov

    # keep only tracks that took part in at least one pair, in first-appearance order
    present = np.zeros(n_prov, dtype=bool)
    present[key_rows] = True
    remap = np.full(n_prov, -1, dtype=np.int64)
    remap[present] = np.arange(int(present.sum()))
    inv_prov = [None] * n_prov
    for t, i in prov.items():
        inv_prov[i] = t
    vocab = [inv_prov[i] for i in np.flatnonzero(present)]
    n = len(vocab)
    matrix = sp.csr_matrix((weights, (remap[key_rows], remap[key_cols])), shape=(n, n))
    matrix.sort_indices()
    return CoocMatrix(vocab, matrix, counts_prov[present])


def _exact_row_sums(rows, numer, denom, n):
    sums = [0] * n
    for r, v in zip(rows.tolist(), numer.tolist()):
        sums[r] += int(v)
    return np.array([s / denom for s in sums])


def _exact_fallback(inverse, dist, key_rows, n_keys, n_prov):
    pair_sum = [Fraction(0)] * n_keys
    for k, dd in zip(inverse.tolist(), dist.tolist()):
        pair_sum[k] += Fraction(1, dd)
    row_sum = [Fraction(0)] * n_prov
    for r, v in zip(key_rows.tolist(), pair_sum):
        row_sum[r] += v
    return np.array([float(v) for v in pair_sum]), np.array([float(v) for v in row_sum])


def merge(a: CoocMatrix, b: CoocMatrix) -> CoocMatrix:
    """Entry-wise sum over the union vocabulary (a's tracks first, then b's new ones)."""
    vocab = list(a.vocab)
    index = dict(a.index)
    for t in b.vocab:
        if t not in index:
            index[t] = len(vocab)
            vocab.append(t)
    n = len(vocab)

    def lift(m: CoocMatrix) -> tuple[sp.csr_matrix, np.ndarray]:
        idx = np.array([index[t] for t in m.vocab], dtype=np.int64)
        coo = m.matrix.tocoo()
        lifted = sp.csr_matrix((coo.data, (idx[coo.row], idx[coo.col])), shape=(n, n))
        counts = np.zeros(n)
        counts[idx] = m.track_counts
        return lifted, counts

    ma, ca = lift(a)
    mb, cb = lift(b)
    matrix = (ma + mb).tocsr()
    matrix.sort_indices()
    return CoocMatrix(vocab, matrix, ca + cb)


def build_cooc_by_user(
    interactions: Iterable[PositiveInteraction], cfg: WindowConfig
) -> CoocMatrix:
    """Build one matrix per user and merge them; the partitioned route."""
    by_user: dict[str, list[PositiveInteraction]] = defaultdict(list)
    for it in interactions:
        by_user[it.user_id].append(it)
    result = CoocMatrix.empty()
    for user in by_user:
        result = merge(result, build_cooc(by_user[user], cfg))
    return result


# -- file format ---------------------------------------------------------------


def save_cooc(cooc: CoocMatrix, path: str | Path) -> None:
    """Write ``#cooc v1 <tracks> <entries>``, the vocab block, then i<j entries."""
    rows, cols, vals = cooc.upper()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#cooc v1 {cooc.n_tracks} {len(vals)}\n")
        for i, (t, c) in enumerate(zip(cooc.vocab, cooc.track_counts)):
            fh.write(f"{i}\t{t}\t{float(c)!r}\n")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{i}\t{j}\t{v!r}\n")


def load_cooc(path: str | Path) -> CoocMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "#cooc" or header[1] != "v1":
            raise ValueError(f"{path}: not a cooc v1 file")
        n_tracks, n_entries = int(header[2]), int(header[3])
        vocab, counts = [], []
        for _ in range(n_tracks):
            i, t, c = fh.readline().rstrip("\n").split("\t")
            if int(i) != len(vocab):
                raise ValueError(f"{path}: vocab block out of order at index {i}")
            vocab.append(t)
            counts.append(float(c))
        rows = np.empty(n_entries, dtype=np.int64)
        cols = np.empty(n_entries, dtype=np.int64)
        vals = np.empty(n_entries)
        for k in range(n_entries):
            i, j, v = fh.readline().split("\t")
            rows[k], cols[k], vals[k] = int(i), int(j), float(v)
    n = len(vocab)
    matrix = sp.csr_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    matrix.sort_indices()
    return CoocMatrix(vocab, matrix, np.asarray(counts))
