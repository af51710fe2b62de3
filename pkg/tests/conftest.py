import numpy as np
import pytest

import helpers

from potalign import synth


@pytest.fixture(scope="session")
def walker():
    """A 40-frame walking shot with generator ground truth."""
    return synth.generate(synth.WalkerConfig(script=(("walk", 40),), seed=1))


@pytest.fixture(scope="session")
def multi_walker():
    return synth.generate(synth.WalkerConfig(
        script=(("walk", 30), ("pause", 5), ("head_turn", 16), ("pause", 4), ("sit", 14)), seed=2))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(helpers.ACCEPTANCE):
            terminalreporter.write_line(line)
