import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def fd_max_rel_error(loss_fn, params, rng, samples=6, step=1e-5):
    """Shared finite-difference gradient check (delegates to the harness)."""
    from stegalift.gradcheck import max_rel_error

    return max_rel_error(loss_fn, params, rng, samples=samples, step=step)
