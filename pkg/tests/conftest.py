import numpy as np
import pytest

from boxdec.vocab import Vocabulary


@pytest.fixture(scope="session")
def vocab() -> Vocabulary:
    return Vocabulary()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
