import numpy as np
import pytest

from gridscout.imgio import GrayImage, ProbabilityMap


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def as_image(data, id="test") -> GrayImage:
    return GrayImage.from_array(np.asarray(data, dtype=np.float64), id=id)


def as_pmap(data) -> ProbabilityMap:
    return ProbabilityMap.from_array(np.asarray(data, dtype=np.float64))
