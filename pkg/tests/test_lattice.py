import numpy as np
import pytest

from indifftree import (ClaimSpec, TreeStructureError, binomial_tree,
                        build_tree, gains, horizon_rule, is_stopping_rule,
                        random_claim, random_stopping_rule, random_strategy,
                        random_tree, tree_from_nodes, trinomial_tree,
                        validate_no_arbitrage)
from indifftree.lattice import basis_risk_lattice


def path_gains_oracle(tree, theta):
    """Walk every terminal path explicitly and accumulate theta . dS."""
    out = np.zeros(tree.n_nodes)
    for leaf in tree.terminal_nodes:
        g, i = 0.0, int(leaf)
        hops = []
        while tree.parent[i] >= 0:
            hops.append(i)
            i = int(tree.parent[i])
        for i in reversed(hops):
            par = int(tree.parent[i])
            g += float(theta[par] @ (tree.prices[i] - tree.prices[par]))
            out[i] = g
    return out


def test_binomial_shape():
    tree = binomial_tree(4, 1.0, 1.2, 0.85, 0.5)
    assert tree.n_nodes == 2 ** 5 - 1
    assert tree.horizon == 4
    assert tree.terminal_nodes.size == 16
    assert np.all(tree.times[tree.terminal_nodes] == 4)
    # root increment is zero by convention
    assert np.all(tree.dprice[0] == 0.0)


def test_trinomial_recombines_prices_not_nodes():
    tree = trinomial_tree(3, 1.0, 1.25, 1.0, 0.8, (0.3, 0.4, 0.3))
    assert tree.terminal_nodes.size == 27
    # price set at the horizon collapses to the 7 distinct levels
    term_prices = np.unique(np.round(tree.prices[tree.terminal_nodes, 0], 12))
    assert term_prices.size == 7


def test_child_bookkeeping_consistent():
    tree = random_tree(4, (2, 4), 2, seed=3)
    for i in range(tree.n_nodes):
        kids = tree.children_of(i)
        if tree.times[i] == tree.horizon:
            assert kids.size == 0
        else:
            assert np.all(tree.parent[kids] == i)
            assert np.all(tree.times[kids] == tree.times[i] + 1)
            np.testing.assert_allclose(tree.edge_prob[kids].sum(), 1.0,
                                       atol=1e-12)


def test_edge_probabilities_positive():
    tree = random_tree(5, 3, 1, seed=8)
    assert tree.edge_prob.min() > 0.0


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_gains_match_pathwise_walk(seed):
    tree = random_tree(4, (2, 3), 2, seed=seed)
    theta = random_strategy(tree, seed=seed, scale=1.5)
    got = gains(tree, theta)
    want = path_gains_oracle(tree, theta)
    assert got[0] == 0.0
    np.testing.assert_allclose(got[tree.terminal_nodes],
                               want[tree.terminal_nodes], atol=1e-12)


def test_no_arbitrage_on_generated_trees():
    for seed in range(6):
        tree = random_tree(3, (2, 4), 2, seed=seed)
        report = validate_no_arbitrage(tree)
        assert report.ok
        # each witness is a positive martingale kernel for its node
        for i in np.flatnonzero(tree.times < tree.horizon):
            w = report.witness[i]
            kids = tree.children_of(i)
            assert w.min() > 0.0
            np.testing.assert_allclose(w.sum(), 1.0, atol=1e-9)
            drift = w @ (tree.prices[kids] - tree.prices[i])
            scale = np.abs(tree.dprice[kids]).max() + 1e-300
            assert np.abs(drift).max() / scale < 1e-8


def test_arbitrage_is_flagged():
    nodes = [
        {"parent": None, "prices": [1.0]},
        {"parent": 0, "prices": [1.05], "p": 0.5},
        {"parent": 0, "prices": [1.30], "p": 0.5},
    ]
    tree = tree_from_nodes(nodes)
    report = validate_no_arbitrage(tree)
    assert not report.ok
    assert not report.node_ok[0]
    with pytest.raises(Exception):
        report.require()


def test_tree_from_nodes_rejects_bad_order():
    with pytest.raises(TreeStructureError):
        tree_from_nodes([
            {"parent": None, "prices": [1.0]},
            {"parent": 2, "prices": [1.1], "p": 0.5},
            {"parent": 0, "prices": [0.9], "p": 0.5},
        ])


def test_build_tree_kinds():
    t1 = build_tree({"kind": "lattice", "model": "binomial", "steps": 3})
    assert t1.horizon == 3
    t2 = build_tree({"kind": "random", "depth": 2, "branching": [2, 3],
                     "assets": 2, "seed": 5})
    assert t2.n_assets == 2
    with pytest.raises(TreeStructureError):
        build_tree({"kind": "nope"})
    with pytest.raises(TreeStructureError):
        build_tree({"kind": "lattice", "model": "quadrinomial", "steps": 2})


def test_random_claim_is_bounded_and_seeded():
    tree = random_tree(4, 3, 1, seed=2)
    c1 = random_claim(tree, seed=9, bound=1.5)
    c2 = random_claim(tree, seed=9, bound=1.5)
    assert c1.sup_norm <= 1.5 + 1e-12
    np.testing.assert_array_equal(c1.values, c2.values)
    assert c1.values.shape == (tree.terminal_nodes.size,)


def test_claim_from_function(tree11):
    claim = ClaimSpec.from_function(tree11, lambda p: abs(p[0] - 1.0))
    term = tree11.terminal_nodes
    np.testing.assert_allclose(claim.values,
                               np.abs(tree11.prices[term, 0] - 1.0))


def test_horizon_rule_is_a_stopping_rule(tree11):
    rule = horizon_rule(tree11)
    assert is_stopping_rule(tree11, rule)


def test_random_stopping_rule_is_antichain(tree11):
    for seed in range(5):
        rule = random_stopping_rule(tree11, seed=seed)
        assert is_stopping_rule(tree11, rule)


def test_non_antichain_rejected(tree11):
    # a node plus one of its children cannot both belong to a cut
    i = int(tree11.children_of(0)[0])
    bad = np.array([i, int(tree11.children_of(i)[0]),
                    *horizon_rule(tree11)[2:]])
    assert not is_stopping_rule(tree11, bad)


def test_basis_risk_lattice_geometry():
    lat = basis_risk_lattice(16, rho=0.6)
    assert lat.steps == 16
    assert lat.joint_prob.shape == (4,)
    np.testing.assert_allclose(lat.joint_prob.sum(), 1.0, atol=1e-12)
    assert lat.joint_prob.min() > 0.0
    with pytest.raises(TreeStructureError):
        basis_risk_lattice(8, rho=1.0)
