"""Shared fixtures. The full toy-training run takes several minutes, so it is
session-scoped and computed once for every test that inspects its trace."""

import time
from types import SimpleNamespace

import pytest

from maxvit.train import TOY_STEPS, train_toy


@pytest.fixture(scope="session")
def toy_run():
    """Deterministic 300-step toy training run, with its wall-clock seconds."""
    t0 = time.monotonic()
    result = train_toy(seed=0, steps=TOY_STEPS)
    return SimpleNamespace(result=result, seconds=time.monotonic() - t0)
