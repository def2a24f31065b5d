from __future__ import annotations

import numpy as np
import pytest

from online_gne.game import BoxSet
from online_gne.scenario import game_from_expressions, load_scenario

# Filled by tests/test_acceptance.py: criterion number -> (passed, detail).
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def paper5():
    return load_scenario("paper5")


@pytest.fixture(scope="session")
def paper5_game(paper5):
    return paper5.game()


def quadratic_duopoly(half_width: float = 10.0):
    """J1 = (x1-1)^2 + x1 x2, J2 = (x2-2)^2 + x1 x2; equilibrium (0, 2)."""
    box = BoxSet(np.array([-half_width]), np.array([half_width]))
    return game_from_expressions(
        ["(x1_1 - 1)^2 + x1_1*x2_1", "(x2_1 - 2)^2 + x1_1*x2_1"],
        None,
        [box, box],
        action_dim=1,
        name="duopoly",
    )


@pytest.fixture
def duopoly():
    return quadratic_duopoly()
