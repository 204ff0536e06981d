import numpy as np
import pytest

from indifftree import (ClaimSpec, minimal_entropy_measure, random_claim,
                        random_tree)

# The canonical small instance used across the suite: a depth-3 ternary
# one-asset tree and a unit-strike call on it.
SEED = 11


@pytest.fixture(scope="session")
def tree11():
    return random_tree(3, 3, 1, seed=SEED)


@pytest.fixture(scope="session")
def call11(tree11):
    term = tree11.terminal_nodes
    payoff = np.clip(tree11.prices[term, 0] - 1.0, 0.0, None)
    return ClaimSpec(values=payoff)


@pytest.fixture(scope="session")
def entropy11(tree11):
    return minimal_entropy_measure(tree11)


def corpus_instance(i: int):
    """Instance ``i`` of the frozen evaluation corpus.

    Depth 2-5, branching 2-4, one or two assets, bounded random claim.
    The recipe (and the three seed streams) must not change: measured
    tolerances in the acceptance suite were calibrated against it.
    """
    rng = np.random.default_rng(1000 + i)
    depth = int(rng.integers(2, 6))
    assets = int(rng.integers(1, 3))
    tree = random_tree(depth, (2, 4), assets, seed=2000 + i)
    claim = random_claim(tree, seed=3000 + i, bound=2.0)
    return tree, claim


@pytest.fixture(scope="session")
def corpus():
    return corpus_instance
