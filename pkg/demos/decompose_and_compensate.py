"""Split the value process into hedge, orthogonal noise, and drift.

Every indifference value surface decomposes along each edge into a
predictable hedge term psi . dS, a martingale increment orthogonal to
the traded assets, and a nonnegative predictable compensator step.  The
drift accumulated over the whole horizon explains exactly how far the
initial value sits above the plain conditional expectation of the
claim — at every risk aversion, not just asymptotically.
"""

import numpy as np

from indifftree import (bmo_norms, claim_from_expression,
                        compensator_identity_residual,
                        conditional_expectation, exact_decomposition,
                        indifference_surface, minimal_entropy_measure,
                        node_probabilities, random_tree)

tree = random_tree(depth=3, branching=3, assets=1, seed=11)
claim = claim_from_expression(tree, "call(S1, 1.0)")
ent = minimal_entropy_measure(tree)

print(f"{'alpha':>8}  {'value':>10}  {'E[B]':>10}  {'E[A_T]':>10}  "
      f"{'identity':>10}  {'bmo hedge':>10}  {'bmo orth':>10}")
prob = node_probabilities(tree, ent.measure)
term = tree.terminal_nodes
eb = conditional_expectation(tree, ent.measure, claim.values)[0]

for alpha in (0.0625, 0.25, 1.0, 4.0):
    res = indifference_surface(tree, claim, alpha, ent.measure)
    sol = exact_decomposition(tree, res, ent.measure)
    ea = prob[term] @ sol.compensator[term]
    resid = compensator_identity_residual(tree, claim, alpha, ent.measure)
    bm = bmo_norms(tree, sol, ent.measure)
    print(f"{alpha:8.4f}  {res.surface.values[0]:10.6f}  {eb:10.6f}  "
          f"{ea:10.6f}  {resid:10.3e}  {bm.bmo_psi:10.6f}  "
          f"{bm.bmo_orth:10.6f}")

print("\nvalue - E[B] = E[A_T] holds to machine precision on every row;")
print("the drift (and with it the price of incompleteness) vanishes at")
print("rate alpha while the hedge converges to the projection hedge.")
