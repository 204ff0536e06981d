"""Price a call under exponential utility and check it two ways.

Builds a small random market, prices a unit-strike call across a range
of risk aversions, and verifies node-by-node that the strategy-space
(primal) and measure-space (dual) routes agree to machine precision.
"""

import numpy as np

from indifftree import (claim_from_expression, dual_surface,
                        indifference_surface, random_tree,
                        validate_no_arbitrage)

tree = random_tree(depth=3, branching=3, assets=1, seed=11)
validate_no_arbitrage(tree).require()
claim = claim_from_expression(tree, "call(S1, 1.0)")

print(f"tree: {tree.n_nodes} nodes, horizon {tree.horizon}, "
      f"{tree.terminal_nodes.size} terminal states")
print(f"claim: unit-strike call, sup norm {claim.sup_norm:.6f}\n")

print(f"{'alpha':>8}  {'value':>12}  {'root holdings':>14}  {'|primal-dual|':>14}")
for alpha in (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0):
    res = indifference_surface(tree, claim, alpha)
    dual = dual_surface(tree, claim, alpha)
    gap = np.abs(res.surface.values - dual.surface.values).max()
    print(f"{alpha:8.3f}  {res.surface.values[0]:12.8f}  "
          f"{res.strategy[0, 0]:14.8f}  {gap:14.3e}")

print("\nthe value grows with risk aversion (seller charges more as the")
print("unhedgeable part of the claim hurts more), and the two routes")
print("agree node-wise at every level.")
