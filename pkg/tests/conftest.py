import numpy as np
import pytest

import softimpute
from errors import NumericalError
from linalg_core import RatingMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_low_rank(rng):
    def make(m, n, rank):
        return rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))

    return make


@pytest.fixture
def make_observed(rng):
    def make(dense, fraction, scale=None):
        mask = rng.random(dense.shape) < fraction
        return RatingMatrix.from_dense(dense, mask, scale=scale)

    return make


@pytest.fixture
def rank3_matrix(make_low_rank, make_observed):
    """20 x 15 rank-3 ground truth with about half its entries observed."""
    dense = make_low_rank(20, 15, 3)
    return dense, make_observed(dense, 0.5)


@pytest.fixture
def small_ratings(make_low_rank, make_observed):
    """40 x 25 ratings on the 1..5 scale, 60% observed."""
    dense = np.clip(np.rint(3 + make_low_rank(40, 25, 2) / 2), 1, 5)
    return dense, make_observed(dense, 0.6, scale=(1.0, 5.0))


@pytest.fixture
def failing_soft_impute(monkeypatch):
    """Make softimpute.soft_impute raise NumericalError on the given 1-based call numbers."""

    def install(calls):
        original = softimpute.soft_impute
        count = [0]

        def flaky(*args, **kwargs):
            count[0] += 1
            if count[0] in calls:
                raise NumericalError("LAPACK SVD did not converge")
            return original(*args, **kwargs)

        monkeypatch.setattr(softimpute, "soft_impute", flaky)

    return install
