import numpy as np
import pytest

from glassrec.dataset import AlloyRecord
from glassrec.network import MaterialNetwork


def rec(text, label="pos"):
    return AlloyRecord.parse(text, label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def four_node_net():
    # path 0-1-2 plus edge 1-3: degrees [1, 3, 1, 1]
    return MaterialNetwork.from_entities(("A", "B", "C", "D"), 2, [(0, 1), (1, 2), (1, 3)])


@pytest.fixture
def five_node_net():
    return MaterialNetwork.from_entities(
        tuple("ABCDE"), 2, [(0, 1), (1, 2), (2, 3), (0, 3), (3, 4)])
