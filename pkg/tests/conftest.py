from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from itemfm.ingest import PositiveInteraction

FIXTURES = Path(__file__).parent / "fixtures"

# filled by tests/test_acceptance.py, printed at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_sequences(rng: np.random.Generator, n_users: int, max_len: int, n_tracks: int):
    """Sorted interactions of ``n_users`` users over ``n_tracks`` tracks, distinct tracks per user."""
    out = []
    for u in range(n_users):
        length = int(rng.integers(1, max_len + 1))
        tracks = rng.choice(n_tracks, size=min(length, n_tracks), replace=False)
        times = np.sort(rng.integers(0, 50, size=len(tracks)))
        pairs = sorted(zip(times.tolist(), [f"t{t:02d}" for t in tracks]))
        out.extend(PositiveInteraction(f"u{u:03d}", t, ts) for ts, t in pairs)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
