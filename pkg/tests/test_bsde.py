"""Backward decompositions: regression oracle, exact identities, the
explicit quadratic scheme, and the dense basis-risk lattice."""

import numpy as np
import pytest

from indifftree import (ClaimSpec, bmo_norms, bsde_scheme, comparison_check,
                        conditional_expectation, exact_decomposition, gains,
                        indifference_surface, minimal_entropy_measure,
                        orthogonal_exponential, random_claim, random_strategy,
                        random_tree)
from indifftree.bsde import (gkw_step, lattice_exact_value, lattice_kernel,
                             lattice_scheme_value, lattice_self_convergence)
from indifftree.lattice import basis_risk_lattice
from conftest import corpus_instance


def test_gkw_step_matches_normal_equations():
    """d = 1 regression coefficient is cov(v, ds)/var(ds) under q."""
    rng = np.random.default_rng(61)
    for _ in range(6):
        k = int(rng.integers(2, 6))
        q = rng.dirichlet(np.ones(k))
        ds = rng.normal(size=(k, 1))
        ds -= q @ ds  # center so q is a martingale kernel for ds
        v = rng.normal(size=k)
        mean, psi, dl = gkw_step(q, ds, v)
        var = q @ (ds[:, 0] ** 2)
        cov = q @ ((v - q @ v) * ds[:, 0])
        assert abs(mean - q @ v) < 1e-14
        assert abs(psi[0] - cov / var) < 1e-12
        assert abs(q @ dl) < 1e-13
        assert abs(q @ (dl * ds[:, 0])) < 1e-13
        np.testing.assert_allclose(v, mean + psi[0] * ds[:, 0] + dl,
                                   atol=1e-13)


def _edge_residual(tree, sol):
    worst = 0.0
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        par = tree.parent[nodes]
        recon = (sol.values[par] - sol.compensator_step[par]
                 + np.einsum("nd,nd->n", tree.dprice[nodes], sol.psi[par])
                 + sol.d_orth[nodes])
        worst = max(worst, float(np.abs(sol.values[nodes] - recon).max()))
    return worst


@pytest.mark.parametrize("alpha", [0.25, 1.0, 4.0])
def test_exact_decomposition_edge_identity(tree11, call11, entropy11, alpha):
    res = indifference_surface(tree11, call11, alpha, entropy11.measure)
    sol = exact_decomposition(tree11, res, entropy11.measure)
    assert _edge_residual(tree11, sol) < 1e-13
    # orthogonality of the residual increments against the increments
    q = entropy11.measure.edge_prob
    for i in np.flatnonzero(tree11.times < tree11.horizon):
        kids = tree11.children_of(i)
        cross = q[kids] @ (sol.d_orth[kids, None] * tree11.dprice[kids])
        assert np.abs(cross).max() < 1e-13
        assert abs(q[kids] @ sol.d_orth[kids]) < 1e-13


def test_compensator_telescopes_to_initial_gap(tree11, call11, entropy11):
    res = indifference_surface(tree11, call11, 1.0, entropy11.measure)
    sol = exact_decomposition(tree11, res, entropy11.measure)
    eb = conditional_expectation(tree11, entropy11.measure, call11.values)
    term = tree11.terminal_nodes
    prob = np.ones(tree11.n_nodes)
    for t in range(1, tree11.horizon + 1):
        nodes = tree11.slice_nodes(t)
        prob[nodes] = prob[tree11.parent[nodes]] * entropy11.measure.edge_prob[nodes]
    ea_t = prob[term] @ sol.compensator[term]
    assert abs(res.surface.values[0] - eb[0] - ea_t) < 1e-12
    # frozen: seed-11 random claim at alpha = 1
    claim = random_claim(tree11, seed=11)
    res2 = indifference_surface(tree11, claim, 1.0, entropy11.measure)
    sol2 = exact_decomposition(tree11, res2, entropy11.measure)
    eb2 = conditional_expectation(tree11, entropy11.measure, claim.values)
    gap = res2.surface.values[0] - eb2[0]
    assert abs(gap - 0.01869637333587637) < 1e-12
    assert abs(prob[term] @ sol2.compensator[term] - gap) < 1e-12


def test_compensator_steps_nonnegative():
    for i in [1, 4, 9]:
        tree, claim = corpus_instance(i)
        measure = minimal_entropy_measure(tree).measure
        res = indifference_surface(tree, claim, 1.0, measure)
        sol = exact_decomposition(tree, res, measure)
        # exact zeros at attainable nodes show up as O(eps) negatives
        assert sol.compensator_step.min() >= -1e-11


def test_scheme_equals_exact_on_attainable():
    tree = random_tree(3, (2, 3), 1, seed=40)
    theta = random_strategy(tree, seed=41, scale=0.6)
    g = gains(tree, theta)
    claim = ClaimSpec(values=0.1 + g[tree.terminal_nodes])
    measure = minimal_entropy_measure(tree).measure
    res = indifference_surface(tree, claim, 2.0, measure)
    sol = exact_decomposition(tree, res, measure)
    sch = bsde_scheme(tree, claim, 2.0, measure)
    np.testing.assert_allclose(sch.values, sol.values, atol=1e-10)
    np.testing.assert_allclose(sch.compensator_step, 0.0, atol=1e-10)


def test_scheme_route_tracks_exact_at_small_alpha(tree11, call11, entropy11):
    res = indifference_surface(tree11, call11, 0.01, entropy11.measure)
    sch = bsde_scheme(tree11, call11, 0.01, entropy11.measure)
    # agreement is second order in alpha; at a = 0.01 it is tight
    assert np.abs(res.surface.values - sch.values).max() < 1e-5


def test_bmo_truncation_monotone(tree11, call11, entropy11):
    res = indifference_surface(tree11, call11, 2.0, entropy11.measure)
    sol = exact_decomposition(tree11, res, entropy11.measure)
    prev_psi, prev_l = 0.0, 0.0
    for cut in range(1, tree11.horizon + 1):
        bm = bmo_norms(tree11, sol, entropy11.measure, up_to=cut)
        assert bm.bmo_psi >= prev_psi - 1e-14
        assert bm.bmo_orth >= prev_l - 1e-14
        prev_psi, prev_l = bm.bmo_psi, bm.bmo_orth
    full = bmo_norms(tree11, sol, entropy11.measure)
    assert abs(full.bmo_psi - prev_psi) < 1e-14
    assert abs(full.bmo_orth - prev_l) < 1e-14


def test_comparison_of_ordered_claims(tree11, call11):
    hi = ClaimSpec(values=call11.values + 0.05)
    rep = comparison_check(tree11, hi, call11, 1.0)
    assert rep.exact_margin >= -1e-12
    assert rep.ok()


def test_orthogonal_exponential_is_diagnostic(tree11, call11, entropy11):
    res = indifference_surface(tree11, call11, 1.0, entropy11.measure)
    sol = exact_decomposition(tree11, res, entropy11.measure)
    surf = orthogonal_exponential(tree11, sol)
    assert surf[0] == 1.0
    assert np.isfinite(surf).all()


# ---------------------------------------------------------------------------
# basis-risk lattice


def _tanh_payoff(v):
    return np.tanh(2.0 * (1.0 - v))


def test_lattice_kernel_is_martingale():
    lat = basis_risk_lattice(32)
    q = lattice_kernel(lat)
    assert q.shape == (4,)
    assert q.min() > 0.0
    np.testing.assert_allclose(q.sum(), 1.0, atol=1e-12)
    assert abs(q @ lat.step_moves) < 1e-12


def test_lattice_frozen_values():
    lat = basis_risk_lattice(32)
    sch = lattice_scheme_value(lat, _tanh_payoff, 1.0)
    exa = lattice_exact_value(lat, _tanh_payoff, 1.0)
    assert abs(sch - 0.05323968865373975) < 1e-12
    assert abs(exa - 0.05320666292281917) < 1e-12


def test_lattice_self_convergence_decreasing():
    out = lattice_self_convergence([32, 64, 128, 256], _tanh_payoff, 1.0)
    diffs = out["diffs"]
    assert len(diffs) == 3
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_lattice_scheme_close_to_exact():
    lat = basis_risk_lattice(64)
    sch = lattice_scheme_value(lat, _tanh_payoff, 1.0)
    exa = lattice_exact_value(lat, _tanh_payoff, 1.0)
    assert abs(sch - exa) < 5e-5
