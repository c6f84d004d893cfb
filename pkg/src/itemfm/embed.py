"""Final track vectors and exact cosine similarity queries."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .fm import FeatureSpace, FMParams

ComposeMode = Literal["track_plus_side", "track_only", "track_plus_context_plus_side"]


class ZeroVectorError(ValueError):
    pass


@dataclass
class EmbeddingSet:
    vocab: list[str]
    vectors: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.vocab):
            raise ValueError("need one vector per vocabulary entry")
        self.index = {t: i for i, t in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("duplicate track ids in vocabulary")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, track: str) -> bool:
        return track in self.index

    def vector(self, track: str) -> np.ndarray:
        return self.vectors[self.index[track]]

    def normalized(self) -> np.ndarray:
        """Unit vectors; raises ``ZeroVectorError`` naming the first zero-norm track."""
        norms = np.linalg.norm(self.vectors, axis=1)
        bad = np.flatnonzero(norms == 0)
        if len(bad):
            raise ZeroVectorError(f"zero-norm embedding for track {self.vocab[bad[0]]!r}")
        return self.vectors / norms[:, None]


def compose_final_vectors(
    params: FMParams,
    space: FeatureSpace,
    vocab: Sequence[str],
    mode: ComposeMode = "track_plus_side",
) -> EmbeddingSet:
    """Sum each track's latent vector with those of its side features.

    ``track_only`` keeps just the track slot; ``track_plus_context_plus_side``
    also adds the track's context-slot vector.
    """
    C = space.catalog_size
    if len(vocab) != C:
        raise ValueError("vocabulary size does not match the catalog")
    if params.n_features != space.n_features:
        raise ValueError("parameters do not match the feature space")
    if mode not in ("track_plus_side", "track_only", "track_plus_context_plus_side"):
        raise ValueError(f"unknown compose mode {mode!r}")
    out = params.V[:C].copy()
    if mode == "track_plus_context_plus_side":
        out += params.V[C : 2 * C]
    if mode != "track_only":
        for t in range(C):
            for s in space.side_slots(t):
                out[t] += params.V[s]
    return EmbeddingSet(list(vocab), out)


def top_n_similar(query: str, n: int, embeddings: EmbeddingSet) -> list[tuple[str, float]]:
    """Exact top-n by cosine, excluding the query; ties go to the lower index."""
    q = embeddings.index[query]
    qv = embeddings.vectors[q]
    qn = np.linalg.norm(qv)
    if qn == 0:
        raise ZeroVectorError(f"zero-norm embedding for track {query!r}")
    norms = np.linalg.norm(embeddings.vectors, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = embeddings.vectors @ qv / (norms * qn)
    cos = np.where(norms > 0, cos, -np.inf)
    idx = np.arange(len(cos))
    order = np.lexsort((idx, -cos))
    order = order[order != q][:n]
    return [(embeddings.vocab[i], float(cos[i])) for i in order if np.isfinite(cos[i])]


# -- snapshot format ----------------------------------------------------------


def save_embeddings(emb: EmbeddingSet, path: str | Path, binary: bool = True) -> None:
    """``#emb v1 <count> <dim> <bin|txt>`` header, then one record per track.

    Binary records are: uint32 little-endian id length, utf-8 id, then ``dim``
    little-endian float64 values. Text records are tab-separated lines.
    """
    with open(path, "wb") as fh:
        fh.write(f"#emb v1 {len(emb)} {emb.dim} {'bin' if binary else 'txt'}\n".encode())
        for t, vec in zip(emb.vocab, emb.vectors):
            if binary:
                raw = t.encode()
                fh.write(np.uint32(len(raw)).astype("<u4").tobytes())
                fh.write(raw)
                fh.write(vec.astype("<f8").tobytes())
            else:
                fh.write(("\t".join([t, *(repr(float(x)) for x in vec)]) + "\n").encode())


def load_embeddings(path: str | Path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if len(header) < 4 or header[0] != "#emb" or header[1] != "v1":
            raise ValueError(f"{path}: not an emb v1 snapshot")
        count, dim = int(header[2]), int(header[3])
        fmt = header[4] if len(header) > 4 else "txt"
        vocab, vectors = [], np.empty((count, dim))
        for r in range(count):
            if fmt == "bin":
                (length,) = np.frombuffer(fh.read(4), dtype="<u4")
                vocab.append(fh.read(int(length)).decode())
                vectors[r] = np.frombuffer(fh.read(8 * dim), dtype="<f8")
            else:
                fields = fh.readline().decode().rstrip("\n").split("\t")
                vocab.append(fields[0])
                vectors[r] = [float(x) for x in fields[1:]]
    return EmbeddingSet(vocab, vectors)
