"""Clustered synthetic listening logs for tests and demos.

Tracks are split into clusters. Inside a cluster the tracks sit on a ring
(think tempo or mood), and a user's consecutive picks stay close on that
ring, so listening drifts smoothly instead of jumping around. Each user
has a home cluster; with a small probability a pick leaks to a random
other cluster, and with ``cluster_switch`` a user moves home for good.
Popularity within a cluster is Zipf-like and independent of ring
position. A ``late_release`` fraction of tracks only becomes available
partway through the time span, which leaves them with few interactions
before any time split: a long tail that is not simply the unpopular end.

Every chosen track becomes raw events that the ingest rules accept (a
like, share, playlist addition or two full listens), and noise events are
added that the rules reject (single full listens, partial listens).
Creators own contiguous arcs of the ring, so a creator side feature is
aligned with both the cluster and the local neighbourhood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import EventKind, RawEvent


@dataclass(frozen=True)
class SyntheticConfig:
    clusters: int = 8
    tracks_per_cluster: int = 50
    users: int = 2000
    leak: float = 0.05
    min_interactions: int = 8
    max_interactions: int = 30
    popularity_exponent: float = 1.0
    step_width: float = 3.0
    cluster_switch: float = 0.0
    late_release: float = 0.2
    creators_per_cluster: int = 5
    noise_per_user: float = 3.0
    span_seconds: int = 90 * 86400
    start_timestamp: int = 1_500_000_000
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 1 or self.tracks_per_cluster < 2 or self.users < 1:
            raise ValueError("need at least one cluster of two tracks and one user")
        for name in ("leak", "cluster_switch", "late_release"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} is a probability")
        if not 1 <= self.min_interactions <= self.max_interactions <= self.tracks_per_cluster:
            raise ValueError("need 1 <= min_interactions <= max_interactions <= tracks_per_cluster")
        if not 1 <= self.creators_per_cluster <= self.tracks_per_cluster:
            raise ValueError("creators_per_cluster must lie in [1, tracks_per_cluster]")

    @classmethod
    def from_spec(cls, text: str) -> SyntheticConfig:
        """Parse ``"clusters=8 users=100 leak=0.05"`` style overrides."""
        defaults = cls()
        kwargs = {}
        for token in text.replace(",", " ").split():
            key, _, value = token.partition("=")
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown synthetic option {key!r}")
            ftype = type(getattr(defaults, key))
            kwargs[key] = int(float(value)) if ftype is int else ftype(value)
        return cls(**kwargs)


@dataclass
class SyntheticCorpus:
    events: list[RawEvent]
    creators: dict[str, list[str]]
    cluster_of: dict[str, int]
    position_of: dict[str, int]


def track_id(cluster: int, rank: int) -> str:
    """Id of the ``rank``-th most popular track of ``cluster``."""
    return f"c{cluster:02d}t{rank:03d}"


def generate(cfg: SyntheticConfig) -> SyntheticCorpus:
    rng = np.random.default_rng(cfg.seed)
    G, T = cfg.clusters, cfg.tracks_per_cluster
    popularity = 1.0 / np.arange(1, T + 1) ** cfg.popularity_exponent

    # rank_at[g][pos] is the popularity rank of the track at ring position pos
    rank_at = [rng.permutation(T) for _ in range(G)]
    pos_of_rank = [np.argsort(r) for r in rank_at]
    arc = -(-T // cfg.creators_per_cluster)
    cluster_of, position_of, creators = {}, {}, {}
    for g in range(G):
        for pos, rank in enumerate(rank_at[g].tolist()):
            t = track_id(g, rank)
            cluster_of[t] = g
            position_of[t] = pos
            creators[t] = [f"creator{g:02d}_{pos // arc}"]

    # seconds after the start before a track can be picked
    release = np.where(
        rng.random((G, T)) < cfg.late_release, rng.integers(0, cfg.span_seconds, size=(G, T)), 0
    )

    offsets = np.arange(T)
    ring = np.minimum(offsets, T - offsets)
    kernel = np.exp(-0.5 * (ring / cfg.step_width) ** 2) if cfg.step_width > 0 else np.ones(T)

    events: list[RawEvent] = []
    for u in range(cfg.users):
        user = f"u{u:05d}"
        home = int(rng.integers(G))
        pos = _start(rng, pos_of_rank[home], popularity)
        length = int(rng.integers(cfg.min_interactions, cfg.max_interactions + 1))
        times = np.sort(rng.integers(0, cfg.span_seconds, size=length)) + cfg.start_timestamp
        used = np.zeros((G, T), dtype=bool)
        for ts in times.tolist():
            out = release > ts - cfg.start_timestamp
            if G > 1 and rng.random() < cfg.cluster_switch:
                home = int((home + rng.integers(1, G)) % G)
                pos = _start(rng, pos_of_rank[home], popularity)
            if G > 1 and rng.random() < cfg.leak:
                g = int((home + rng.integers(1, G)) % G)
                weights = popularity[rank_at[g]] * ~(used[g] | out[g])
            else:
                g = home
                weights = popularity[rank_at[g]] * np.roll(kernel, pos) * ~(used[g] | out[g])
            if weights.sum() <= 0:
                continue
            choice = int(rng.choice(T, p=weights / weights.sum()))
            used[g, choice] = True
            if g == home:
                pos = choice
            events.extend(_positive_events(user, track_id(g, int(rank_at[g][choice])), int(ts), rng))
        for _ in range(int(rng.poisson(cfg.noise_per_user))):
            g, p = int(rng.integers(G)), int(rng.integers(T))
            if used[g, p]:
                continue
            ts = cfg.start_timestamp + int(rng.integers(cfg.span_seconds))
            duration = int(rng.integers(120, 420))
            listened = duration if rng.random() < 0.5 else int(rng.integers(0, duration // 2))
            events.append(
                RawEvent(user, track_id(g, int(rank_at[g][p])), EventKind.PLAY, ts, listened, duration)
            )
    return SyntheticCorpus(events, creators, cluster_of, position_of)


def _start(rng: np.random.Generator, pos_of_rank: np.ndarray, popularity: np.ndarray) -> int:
    return int(pos_of_rank[rng.choice(len(popularity), p=popularity / popularity.sum())])


def _positive_events(user: str, track: str, ts: int, rng: np.random.Generator) -> list[RawEvent]:
    duration = int(rng.integers(120, 420))
    r = rng.random()
    if r < 0.4:
        return [
            RawEvent(user, track, EventKind.PLAY, ts, duration, duration),
            RawEvent(user, track, EventKind.PLAY, ts + duration + 5, duration - 10, duration),
        ]
    kind = EventKind.LIKE if r < 0.7 else EventKind.SHARE if r < 0.85 else EventKind.PLAYLIST_ADD
    evs = [RawEvent(user, track, kind, ts)]
    if rng.random() < 0.5:
        evs.append(RawEvent(user, track, EventKind.PLAY, ts + 1, duration // 3, duration))
    return evs
