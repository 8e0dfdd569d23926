import numpy as np
import pytest

from quadric_slam.quadric import QuadricState, QuadricType, random_rotation, scale_mask


def random_state(qtype, rng, spread=2.0, axes=(0.2, 2.0)):
    """Random landmark with well-separated active semi-axes."""
    a = np.sort(rng.uniform(*axes, size=3))
    # keep active axes distinct so every rotation axis is identifiable
    a = a * np.array([1.0, 1.3, 1.7])
    return QuadricState.from_semi_axes(qtype, random_rotation(rng), rng.normal(scale=spread, size=3), a)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ALL_TYPES = list(QuadricType)
SCALED_TYPES = [t for t in QuadricType if scale_mask(t).any()]
