"""Factorization machine over binary (track, context track, side feature) slots.

Feature layout for a catalog of ``C`` tracks and ``F`` side features::

    [0, C)            focal track one-hot
    [C, 2C)           context track one-hot
    [2C, 2C + F)      side features (e.g. creator)

With binary indicators the prediction reduces to the sum of the active
biases plus the dot products of every pair of active latent vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np


@dataclass
class FeatureSpace:
    catalog_size: int
    side_vocab: list[str] = field(default_factory=list)
    track_side_features: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.track_side_features:
            self.track_side_features = [[] for _ in range(self.catalog_size)]
        if len(self.track_side_features) != self.catalog_size:
            raise ValueError("track_side_features must have one entry per track")
        F = len(self.side_vocab)
        for feats in self.track_side_features:
            if len(set(feats)) != len(feats):
                raise ValueError("duplicate side features for a track")
            if any(f < 0 or f >= F for f in feats):
                raise ValueError("side feature index out of range")

    @classmethod
    def from_mapping(
        cls, vocab: Sequence[str], side: Mapping[str, Sequence[str]] | None = None
    ) -> FeatureSpace:
        """Build from a track vocabulary and a track_id -> feature ids mapping.

        Side features are indexed by first appearance in vocab order; tracks
        missing from ``side`` simply have none. Duplicates are dropped.
        """
        side = side or {}
        side_vocab: list[str] = []
        side_index: dict[str, int] = {}
        per_track = []
        for t in vocab:
            feats = []
            for f in side.get(t, ()):
                if f not in side_index:
                    side_index[f] = len(side_vocab)
                    side_vocab.append(f)
                if side_index[f] not in feats:
                    feats.append(side_index[f])
            per_track.append(feats)
        return cls(len(vocab), side_vocab, per_track)

    @property
    def n_side(self) -> int:
        return len(self.side_vocab)

    @property
    def n_features(self) -> int:
        return 2 * self.catalog_size + self.n_side

    def side_slots(self, track: int) -> list[int]:
        base = 2 * self.catalog_size
        return [base + f for f in self.track_side_features[track]]

    def side_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Side-feature slots of every track as (indptr, slots) arrays."""
        lengths = [len(f) for f in self.track_side_features]
        indptr = np.zeros(self.catalog_size + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        slots = np.array(
            [2 * self.catalog_size + f for feats in self.track_side_features for f in feats],
            dtype=np.int64,
        )
        return indptr, slots


@dataclass
class FMParams:
    w: np.ndarray
    V: np.ndarray

    @property
    def n_features(self) -> int:
        return self.V.shape[0]

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @classmethod
    def init(cls, n_features: int, k: int, seed: int = 0) -> FMParams:
        """Zero biases; latent entries uniform in [-0.5/k, 0.5/k]."""
        rng = np.random.default_rng(seed)
        bound = 0.5 / k
        return cls(np.zeros(n_features), rng.uniform(-bound, bound, size=(n_features, k)))

    def copy(self) -> FMParams:
        return FMParams(self.w.copy(), self.V.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.w).all() and np.isfinite(self.V).all())


class FMGradient(NamedTuple):
    """Gradient of the prediction w.r.t. the active slots' parameters.

    ``w[a]`` and ``V[a]`` belong to ``slots[a]``; every other slot has zero gradient.
    """

    slots: np.ndarray
    w: np.ndarray
    V: np.ndarray


def encode_instance(
    track: int, context: int, space: FeatureSpace, include_context_side: bool = False
) -> list[int]:
    """Active slots for a (track, context) pair.

    Side features of the focal track follow the two one-hot slots; with
    ``include_context_side`` the context's features are appended too. A
    feature shared by both tracks appears once, since indicators are binary.
    """
    C = space.catalog_size
    if not (0 <= track < C and 0 <= context < C):
        raise IndexError(f"track {track} or context {context} outside catalog of {C}")
    slots = [track, C + context] + space.side_slots(track)
    if include_context_side:
        slots += [s for s in space.side_slots(context) if s not in slots]
    return slots


def predict(slots: Sequence[int], params: FMParams) -> float:
    idx = np.asarray(slots, dtype=np.int64)
    v = params.V[idx]
    total = v.sum(axis=0)
    pairwise = 0.5 * (total @ total - np.einsum("ij,ij->", v, v))
    return float(params.w[idx].sum() + pairwise)


def gradient(slots: Sequence[int], params: FMParams) -> FMGradient:
    idx = np.asarray(slots, dtype=np.int64)
    v = params.V[idx]
    return FMGradient(idx, np.ones(len(idx)), v.sum(axis=0) - v)


# -- parameter snapshots ------------------------------------------------------


def save_params(
    params: FMParams, space: FeatureSpace, path: str | Path, binary: bool = True
) -> None:
    """Header ``#fm v1 n k C F <bin|txt>`` then, per slot, the bias and k components."""
    n, k = params.n_features, params.k
    fmt = "bin" if binary else "txt"
    table = np.column_stack([params.w, params.V])
    with open(path, "wb") as fh:
        fh.write(f"#fm v1 {n} {k} {space.catalog_size} {space.n_side} {fmt}\n".encode())
        if binary:
            fh.write(table.astype("<f8").tobytes())
        else:
            for row in table.tolist():
                fh.write(("\t".join(repr(x) for x in row) + "\n").encode())


def load_params(path: str | Path) -> tuple[FMParams, tuple[int, int]]:
    """Returns the parameters and the (C, F) layout recorded in the header."""
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if len(header) < 6 or header[0] != "#fm" or header[1] != "v1":
            raise ValueError(f"{path}: not an fm v1 snapshot")
        n, k, C, F = (int(x) for x in header[2:6])
        fmt = header[6] if len(header) > 6 else "txt"
        if fmt == "bin":
            table = np.frombuffer(fh.read(), dtype="<f8").reshape(n, k + 1).astype(np.float64)
        else:
            table = np.loadtxt(fh, dtype=np.float64, ndmin=2).reshape(n, k + 1)
    return FMParams(table[:, 0].copy(), table[:, 1:].copy()), (C, F)


def read_side_features(path: str | Path) -> dict[str, list[str]]:
    """Tab-separated ``track_id  feature_id [feature_id ...]`` lines."""
    side: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.rstrip("\n").split("\t")
            if not fields[0]:
                continue
            side.setdefault(fields[0], []).extend(f for f in fields[1:] if f)
    return side


def write_side_features(side: Mapping[str, Sequence[str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in sorted(side):
            fh.write("\t".join([t, *side[t]]) + "\n")
