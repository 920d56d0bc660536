import numpy as np
import pytest

from pilotfatigue.core import Montage
from pilotfatigue.synth import SessionSpec, SubjectProfile, generate_session


@pytest.fixture(scope="session")
def montage():
    return Montage.default()


@pytest.fixture(scope="session")
def short_session():
    """Three minutes at 200 Hz: one minute per class."""
    return generate_session(SubjectProfile(), SessionSpec(duration_min=3, sample_rate=200.0, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
