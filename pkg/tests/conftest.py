import os

import numpy as np
import pytest

import backend.config as config
from backend.algebra import build_operators
from backend.model import PlantParams

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
IDEAL_PRESET = os.path.join(ROOT, config.IDEAL_PRESET_FILE)
MISMATCHED_PRESET = os.path.join(ROOT, config.MISMATCHED_PRESET_FILE)


@pytest.fixture
def ops():
    return build_operators()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture
def nominal_plant():
    return PlantParams()


@pytest.fixture
def notes_file(tmp_path, monkeypatch):
    path = str(tmp_path / "run_notes.txt")
    monkeypatch.setattr(config, "NOTES_FILE", path)
    return path


def diagonal_populations(rho, ops):
    """Unclipped tr(Pi_k rho) for increments that need not be states."""
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    return np.stack([(diag * member).sum(axis=-1) for member in ops.subspace_membership], axis=-1)
