"""Shared fixtures and channel builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from damlink.channel import TapChannel, cluster_taps


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def crandn(rng, *shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_paths(rng, num_paths: int, num_antennas: int, max_delay: int | None = None):
    """Random independent path vectors and distinct integer delays."""
    vectors = crandn(rng, num_paths, num_antennas)
    max_delay = 3 * num_paths if max_delay is None else max_delay
    delays = rng.choice(max_delay + 1, size=num_paths, replace=False)
    return vectors, delays


def clustered_taps(rng, num_antennas: int, layout, num_taps: int) -> TapChannel:
    """Tap channel whose nonzero taps form the runs ``(start, width)`` in ``layout``.

    Every tap inside a run is an independent Gaussian vector, the middle one
    at twice the amplitude of the rest; taps outside the runs are exactly zero.
    """
    taps = np.zeros((num_taps, num_antennas), dtype=complex)
    for start, width in layout:
        for j in range(width):
            taps[start + j] = crandn(rng, num_antennas) * (1.0 if j == width // 2 else 0.5)
    return TapChannel(taps, 1.0, float(num_taps - 1))


def clustered_channel(rng, num_antennas: int, layout, num_taps: int):
    taps = clustered_taps(rng, num_antennas, layout, num_taps)
    return taps, cluster_taps(taps, 1e-3)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(number: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance verdict, then fail the test if it did not hold."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
