import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def matched_error(est, truth):
    """Largest center error after optimal one-to-one matching."""
    est, truth = np.asarray(est), np.asarray(truth)
    cost = np.linalg.norm(est[:, None, :] - truth[None, :, :], axis=2)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())
