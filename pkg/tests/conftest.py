import numpy as np
import pytest

from kato import symbols as S


@pytest.fixture
def flat2():
    return S.flat(2)


@pytest.fixture
def unit_disk():
    return S.disk(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
