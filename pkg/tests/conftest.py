from __future__ import annotations

import pytest

from helpers import assert_conserved
from quake_evac.engine import Simulation


@pytest.fixture
def conservation_hook():
    """Hook factory asserting the population partition after every frame."""

    def make(population: int):
        def hook(phase: str, sim: Simulation) -> None:
            if phase == "frame":
                assert_conserved(sim.frames[-1], population)

        return hook

    return make
