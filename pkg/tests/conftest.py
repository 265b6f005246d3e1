from __future__ import annotations

import pytest

from blemuseum.core import BeaconMap, BeaconPlacement, PathLossModel

LAB = PathLossModel(2.208, -68.99, 1.0, 2.0)
CORRIDOR = PathLossModel(2.341, -62.94, 1.0, 3.0)


@pytest.fixture
def lab_model() -> PathLossModel:
    return LAB


def make_map(points, model=LAB, interval=100) -> BeaconMap:
    return BeaconMap(tuple(BeaconPlacement(b, x, y, adv_interval=interval) for b, (x, y) in points.items()), model)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
