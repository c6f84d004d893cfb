"""Turn raw listening logs into positive user-track interactions.

All actions a user performed on one track are merged into a single
event. The merged event is positive when it contains a strong signal
(like, share, playlist addition, or another explicit positive) or at
least two full listens. Positive pairs are then filtered with count
floors on users and tracks and capped per track by seeded sampling.
"""
from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

_logger = logging.getLogger(__name__)


class EventKind(str, enum.Enum):
    PLAY = "play"
    LIKE = "like"
    SHARE = "share"
    PLAYLIST_ADD = "playlist_add"
    OTHER_POSITIVE = "other"


STRONG_POSITIVE = frozenset(
    {EventKind.LIKE, EventKind.SHARE, EventKind.PLAYLIST_ADD, EventKind.OTHER_POSITIVE}
)


class MalformedEventError(ValueError):
    """An event violates the duration or timestamp contract."""


@dataclass(frozen=True)
class RawEvent:
    user_id: str
    track_id: str
    kind: EventKind
    timestamp: int
    listened_duration: int = 0
    track_duration: int = 0

    def validate(self) -> None:
        if self.timestamp < 0:
            raise MalformedEventError(f"negative timestamp {self.timestamp}")
        if self.listened_duration < 0:
            raise MalformedEventError(f"negative listened duration {self.listened_duration}")
        if self.kind is EventKind.PLAY:
            if self.track_duration <= 0:
                raise MalformedEventError("play event without a positive track duration")
            if self.listened_duration > self.track_duration:
                raise MalformedEventError(
                    f"listened {self.listened_duration}s of a {self.track_duration}s track"
                )


@dataclass(frozen=True, order=True)
class PositiveInteraction:
    user_id: str
    track_id: str
    first_timestamp: int


@dataclass(frozen=True)
class IngestConfig:
    min_items_per_user: int = 5
    min_users_per_item: int = 5
    max_interactions_per_item: int = 10_000
    full_listen_fraction: float = 0.5
    full_listen_absolute: int = 1200
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("min_items_per_user", "min_users_per_item", "max_interactions_per_item"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.full_listen_fraction <= 1.0:
            raise ValueError("full_listen_fraction must lie in (0, 1]")
        if self.full_listen_absolute <= 0:
            raise ValueError("full_listen_absolute must be positive")


@dataclass
class IngestDiagnostics:
    """Tallies of what the pipeline dropped, and why."""

    events_read: int = 0
    malformed: int = 0
    ignored_kinds: Counter = field(default_factory=Counter)
    merged_pairs: int = 0
    positive_pairs: int = 0
    after_floors: int = 0
    after_sampling: int = 0


def is_full_listen(listened_duration: int, track_duration: int, cfg: IngestConfig) -> bool:
    """True when the listen covers the majority of the track or a long absolute span.

    The majority rule is strict: exactly half a track is not a full listen.
    """
    if track_duration <= 0 or listened_duration < 0 or listened_duration > track_duration:
        raise MalformedEventError(
            f"invalid listen: {listened_duration}s of a {track_duration}s track"
        )
    return (
        listened_duration > cfg.full_listen_fraction * track_duration
        or listened_duration >= cfg.full_listen_absolute
    )


def merge_user_track_events(
    events: Sequence[RawEvent], cfg: IngestConfig
) -> PositiveInteraction | None:
    """Merge every action of one user on one track into at most one positive interaction.

    The interaction start time is the earliest event that counts as positive
    evidence: any strong positive event, or any full listen.
    """
    if not events:
        return None
    user, track = events[0].user_id, events[0].track_id
    evidence = []
    full_listens = 0
    strong = False
    for ev in events:
        if ev.user_id != user or ev.track_id != track:
            raise ValueError("events for more than one (user, track) pair")
        if ev.kind in STRONG_POSITIVE:
            strong = True
            evidence.append(ev.timestamp)
        elif ev.kind is EventKind.PLAY and is_full_listen(
            ev.listened_duration, ev.track_duration, cfg
        ):
            full_listens += 1
            evidence.append(ev.timestamp)
    if strong or full_listens >= 2:
        return PositiveInteraction(user, track, min(evidence))
    return None


def apply_count_floors(
    interactions: Iterable[PositiveInteraction], cfg: IngestConfig
) -> list[PositiveInteraction]:
    """Drop sparse users and tracks until every survivor meets both floors.

    Removing a user can push a track under its floor and vice versa, so the
    filter is repeated until nothing changes. Interactions are assumed unique
    per (user, track).
    """
    current = list(interactions)
    while True:
        per_user = Counter(it.user_id for it in current)
        per_track = Counter(it.track_id for it in current)
        kept = [
            it
            for it in current
            if per_user[it.user_id] >= cfg.min_items_per_user
            and per_track[it.track_id] >= cfg.min_users_per_item
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def sample_per_item(
    interactions: Iterable[PositiveInteraction], cfg: IngestConfig
) -> list[PositiveInteraction]:
    """Keep a seeded uniform subset of ``max_interactions_per_item`` for over-cap tracks.

    Input order does not matter: interactions are canonically sorted before
    the generator is consumed, track by track in ascending track id.
    """
    by_track: dict[str, list[PositiveInteraction]] = defaultdict(list)
    for it in interactions:
        by_track[it.track_id].append(it)
    rng = np.random.default_rng(cfg.rng_seed)
    cap = cfg.max_interactions_per_item
    out = []
    for track in sorted(by_track):
        group = sorted(by_track[track])
        if len(group) > cap:
            keep = np.sort(rng.choice(len(group), size=cap, replace=False))
            group = [group[i] for i in keep]
        out.extend(group)
    return out


def group_events(events: Iterable[RawEvent]) -> dict[tuple[str, str], list[RawEvent]]:
    groups: dict[tuple[str, str], list[RawEvent]] = defaultdict(list)
    for ev in events:
        groups[ev.user_id, ev.track_id].append(ev)
    return groups


def ingest(
    events: Iterable[RawEvent],
    cfg: IngestConfig,
    diagnostics: IngestDiagnostics | None = None,
) -> list[PositiveInteraction]:
    """Full pipeline: merge, then count floors, then per-track sampling.

    Malformed events are skipped and tallied in ``diagnostics``. The result is
    sorted by (user_id, first_timestamp, track_id).
    """
    diag = diagnostics if diagnostics is not None else IngestDiagnostics()
    valid = []
    for ev in events:
        diag.events_read += 1
        try:
            ev.validate()
        except MalformedEventError:
            diag.malformed += 1
            continue
        valid.append(ev)

    groups = group_events(valid)
    diag.merged_pairs = len(groups)
    positives = []
    for key in sorted(groups):
        merged = merge_user_track_events(groups[key], cfg)
        if merged is not None:
            positives.append(merged)
    diag.positive_pairs = len(positives)

    floored = apply_count_floors(positives, cfg)
    diag.after_floors = len(floored)
    sampled = sample_per_item(floored, cfg)
    diag.after_sampling = len(sampled)
    _logger.info(
        "ingest: %d events, %d malformed, %d positive pairs, %d after floors, %d kept",
        diag.events_read,
        diag.malformed,
        diag.positive_pairs,
        diag.after_floors,
        diag.after_sampling,
    )
    return sort_interactions(sampled)


def sort_interactions(interactions: Iterable[PositiveInteraction]) -> list[PositiveInteraction]:
    return sorted(interactions, key=lambda it: (it.user_id, it.first_timestamp, it.track_id))


# -- file formats -------------------------------------------------------------


def parse_event_line(line: str) -> RawEvent:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 6:
        raise MalformedEventError(f"expected 6 tab-separated fields, got {len(fields)}")
    user, track, kind, ts, listened, duration = fields
    try:
        return RawEvent(user, track, EventKind(kind), int(ts), int(listened), int(duration))
    except ValueError as exc:
        raise MalformedEventError(str(exc)) from exc


def read_events(
    path: str | Path, diagnostics: IngestDiagnostics | None = None
) -> Iterator[RawEvent]:
    """Yield events from a TSV log.

    A first line whose timestamp column is not an integer is treated as a
    header. Lines that fail to parse, and event kinds outside the positive
    taxonomy (skips, comments, ...), are counted and skipped.
    """
    diag = diagnostics if diagnostics is not None else IngestDiagnostics()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if lineno == 0 and len(fields) == 6 and not fields[3].lstrip("-").isdigit():
                continue
            if len(fields) == 6 and fields[2] not in EventKind._value2member_map_:
                diag.events_read += 1
                diag.ignored_kinds[fields[2]] += 1
                continue
            try:
                yield parse_event_line(line)
            except MalformedEventError:
                diag.events_read += 1
                diag.malformed += 1


def write_events(events: Iterable[RawEvent], path: str | Path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("user_id\ttrack_id\tevent_kind\ttimestamp\tlistened_duration\ttrack_duration\n")
        for ev in events:
            fh.write(
                f"{ev.user_id}\t{ev.track_id}\t{ev.kind.value}\t{ev.timestamp}\t"
                f"{ev.listened_duration}\t{ev.track_duration}\n"
            )


def write_interactions(interactions: Iterable[PositiveInteraction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in sort_interactions(interactions):
            fh.write(f"{it.user_id}\t{it.track_id}\t{it.first_timestamp}\n")


def read_interactions(path: str | Path) -> list[PositiveInteraction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            user, track, ts = line.rstrip("\n").split("\t")
            out.append(PositiveInteraction(user, track, int(ts)))
    return out
