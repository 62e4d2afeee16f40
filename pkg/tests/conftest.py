from __future__ import annotations

import numpy as np
import pytest

from subtrack.params import Hyperparams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def params():
    return Hyperparams()
