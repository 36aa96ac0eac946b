import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_victim():
    """The bundled victim trained on the synthetic desk corpus (about a minute)."""
    from robust_aae.desk import DeskConfig, train_victim

    return train_victim(DeskConfig())
