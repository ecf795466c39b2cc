import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("curvflow", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("curvflow")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_orthogonal(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def interior_point(chart, rng, margin=0.15):
    """A parameter point kept away from the coordinate singularities at the box edges."""
    lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]
    return lo + (margin + (1 - 2 * margin) * rng.random(chart.n)) * (hi - lo)
