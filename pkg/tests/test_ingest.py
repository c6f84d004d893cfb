import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from itemfm.ingest import (
    EventKind,
    IngestConfig,
    IngestDiagnostics,
    MalformedEventError,
    PositiveInteraction,
    RawEvent,
    apply_count_floors,
    ingest,
    is_full_listen,
    merge_user_track_events,
    read_events,
    read_interactions,
    sample_per_item,
    write_events,
    write_interactions,
)

CFG = IngestConfig()


def play(listened, duration, ts=0, user="u", track="t"):
    return RawEvent(user, track, EventKind.PLAY, ts, listened, duration)


def like(ts=0, user="u", track="t"):
    return RawEvent(user, track, EventKind.LIKE, ts)


@pytest.mark.parametrize(
    "listened, duration, expected",
    [
        (180, 240, True),
        (60, 240, False),
        (1500, 7200, True),
        (120, 240, False),  # exactly half is not a majority
        (121, 240, True),
        (1200, 7200, True),
        (1199, 7200, False),
    ],
)
def test_full_listen(listened, duration, expected):
    assert is_full_listen(listened, duration, CFG) is expected


@pytest.mark.parametrize("listened, duration", [(10, 0), (-1, 100), (300, 200)])
def test_full_listen_rejects_bad_input(listened, duration):
    with pytest.raises(MalformedEventError):
        is_full_listen(listened, duration, CFG)


def test_merge_examples():
    assert merge_user_track_events([like(5)], CFG) == PositiveInteraction("u", "t", 5)
    assert merge_user_track_events([play(200, 240)], CFG) is None
    two = merge_user_track_events([play(200, 240, 9), play(200, 240, 4)], CFG)
    assert two == PositiveInteraction("u", "t", 4)
    assert merge_user_track_events([], CFG) is None


@pytest.mark.parametrize("kind", [EventKind.SHARE, EventKind.PLAYLIST_ADD, EventKind.OTHER_POSITIVE])
def test_every_strong_kind_is_positive(kind):
    assert merge_user_track_events([RawEvent("u", "t", kind, 3)], CFG) is not None


def test_start_time_ignores_partial_plays():
    events = [play(30, 240, ts=1), like(ts=10), play(200, 240, ts=20)]
    assert merge_user_track_events(events, CFG).first_timestamp == 10


def test_merge_rejects_mixed_pairs():
    with pytest.raises(ValueError):
        merge_user_track_events([like(user="a"), like(user="b")], CFG)


def block(users, tracks, ts=0):
    return [PositiveInteraction(u, t, ts) for u in users for t in tracks]


def test_floors_examples():
    users = [f"u{i}" for i in range(6)]
    tracks = [f"t{i}" for i in range(6)]
    dense = block(users, tracks)
    assert sorted(apply_count_floors(dense, CFG)) == sorted(dense)
    assert apply_count_floors([], CFG) == []
    sparse_user = block(["x"], tracks[:4])
    assert sorted(apply_count_floors(dense + sparse_user, CFG)) == sorted(dense)


def test_floors_cascade_to_fixed_point():
    users = [f"u{i}" for i in range(6)]
    tracks = [f"t{i}" for i in range(6)]
    dense = block(users, tracks)
    # z has 4 users, so c loses a track, so y loses a user
    chain = block(users[:4], ["y"]) + block(["c"], ["y", "z", "t0", "t1", "t2"]) + block(users[:3], ["z"])
    assert sorted(apply_count_floors(dense + chain, CFG)) == sorted(dense)


pairs_strategy = st.sets(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=70)


@given(pairs_strategy)
@settings(max_examples=60, deadline=None)
def test_floors_predicate_and_maximality(pairs):
    items = [PositiveInteraction(f"u{u}", f"t{t}", 0) for u, t in pairs]
    cfg = IngestConfig(min_items_per_user=3, min_users_per_item=3)
    kept = apply_count_floors(items, cfg)
    users = {}
    tracks = {}
    for it in kept:
        users[it.user_id] = users.get(it.user_id, 0) + 1
        tracks[it.track_id] = tracks.get(it.track_id, 0) + 1
    assert all(c >= 3 for c in users.values()) and all(c >= 3 for c in tracks.values())
    # the maximal valid subset is unique; removing in another order reaches it too
    current = set(items)
    changed = True
    while changed:
        changed = False
        for u in sorted({it.user_id for it in current}):
            mine = {it for it in current if it.user_id == u}
            if len(mine) < 3:
                current -= mine
                changed = True
        for t in sorted({it.track_id for it in current}):
            theirs = {it for it in current if it.track_id == t}
            if len(theirs) < 3:
                current -= theirs
                changed = True
    assert set(kept) == current


def test_sampling_caps_and_keeps():
    big = [PositiveInteraction(f"u{i:05d}", "hot", i) for i in range(12_000)]
    small = [PositiveInteraction(f"u{i:05d}", "cold", i) for i in range(500)]
    out = sample_per_item(big + small, CFG)
    hot = [it for it in out if it.track_id == "hot"]
    assert len(hot) == 10_000
    assert set(hot) <= set(big)
    assert sorted(it for it in out if it.track_id == "cold") == sorted(small)


def test_sampling_is_seeded_and_order_free():
    items = [PositiveInteraction(f"u{i}", f"t{i % 3}", i) for i in range(300)]
    cfg = IngestConfig(max_interactions_per_item=40, rng_seed=4)
    first = sample_per_item(items, cfg)
    shuffled = items[:]
    random.Random(0).shuffle(shuffled)
    assert sorted(sample_per_item(shuffled, cfg)) == sorted(first)
    other = sample_per_item(items, IngestConfig(max_interactions_per_item=40, rng_seed=5))
    assert sorted(other) != sorted(first)


def test_ingest_skips_malformed_and_counts():
    good = [like(ts=u * 10 + t, user=f"u{u}", track=f"t{t}") for u in range(5) for t in range(5)]
    bad = [play(300, 200, user="u0", track="t9"), RawEvent("u0", "t8", EventKind.LIKE, -1)]
    diag = IngestDiagnostics()
    out = ingest(good + bad, CFG, diag)
    assert len(out) == 25 and diag.malformed == 2 and diag.events_read == 27


def test_ingest_output_order():
    events = [like(ts=(7 * u + 3 * t) % 11, user=f"u{u}", track=f"t{t}") for u in range(5) for t in range(5)]
    out = ingest(events, CFG)
    keys = [(it.user_id, it.first_timestamp, it.track_id) for it in out]
    assert keys == sorted(keys)


def test_ingest_ignores_record_order():
    events = [like(ts=u + t, user=f"u{u}", track=f"t{t}") for u in range(7) for t in range(6)]
    cfg = IngestConfig(max_interactions_per_item=5, rng_seed=1)
    shuffled = events[:]
    random.Random(3).shuffle(shuffled)
    assert ingest(events, cfg) == ingest(shuffled, cfg)


def test_golden_file():
    diag = IngestDiagnostics()
    out = ingest(read_events(FIXTURES / "ingest_golden" / "events.tsv", diag), CFG, diag)
    expected = read_interactions(FIXTURES / "ingest_golden" / "expected.tsv")
    assert out == expected
    assert diag.malformed == 1
    assert diag.ignored_kinds == {"skip": 2}


def test_event_file_roundtrip(tmp_path):
    events = [play(100, 200, ts=5, user="a", track="x"), like(ts=6, user="a", track="y")]
    write_events(events, tmp_path / "e.tsv")
    assert list(read_events(tmp_path / "e.tsv")) == events
    write_events(events, tmp_path / "nohead.tsv", header=False)
    assert list(read_events(tmp_path / "nohead.tsv")) == events


def test_interaction_file_roundtrip(tmp_path):
    items = [PositiveInteraction("b", "x", 3), PositiveInteraction("a", "y", 9), PositiveInteraction("a", "x", 1)]
    write_interactions(items, tmp_path / "i.tsv")
    back = read_interactions(tmp_path / "i.tsv")
    assert back == sorted(items, key=lambda it: (it.user_id, it.first_timestamp, it.track_id))
