import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pmgp.kernels import Hyperparams, build_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def toy_problem(rng):
    """Small seeded problem with the generating-regime hyper-parameters."""
    X = rng.uniform(size=(10, 2))
    hyper = Hyperparams.from_values(2.08, [0.35])
    km = build_kernel(X, hyper, "isotropic")
    y = np.where(rng.uniform(size=10) < 0.5, 1.0, -1.0)
    return X, y, hyper, km
