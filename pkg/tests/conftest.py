import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to Python's module search path
sys.path.append(str(Path(__file__).parent.parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
