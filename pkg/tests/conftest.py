import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pesokit.tolerances import reset_tolerances  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_tolerances():
    yield
    reset_tolerances()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
