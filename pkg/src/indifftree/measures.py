"""Entropy-optimal martingale measures on event trees.

The central object is the backward recursion that, at every node,
replaces the reference kernel by its entropic tilt subject to the
one-step martingale constraint, with the children's optimal
cost-to-go entering as tilt costs.  With zero terminal cost this yields
the minimal relative entropy martingale measure; with terminal cost
``-alpha * B`` it yields the claim-tilted measure used by the dual
valuation route.

The optimal terminal density has the exponential-of-gains form
``log Z_T = J_root - cost(omega) + sum_t lam_t . dS_t`` along every
path (a telescoping identity verified by :func:`verify_entropy_structure`),
so the recursion's multipliers double as a self-financing strategy.
"""

from dataclasses import dataclass

import numpy as np

from ._onestep import BatchResult, entropic_projection_batch
from .errors import NonMartingaleKernel, TreeStructureError
from .lattice import ClaimSpec, EventTree
from .tolerances import DEFAULT, NEWTON_MAX_ITER, Tolerances

__all__ = [
    "MeasureProcess",
    "DensitySurface",
    "EntropyResult",
    "OneStepProjection",
    "entropic_projection",
    "minimal_entropy_measure",
    "claim_tilted_measure",
    "density_process",
    "relative_entropy",
    "verify_entropy_structure",
    "node_probabilities",
    "conditional_expectation",
    "expected_remaining",
]


@dataclass
class MeasureProcess:
    """One-step kernels of a measure, stored per edge.

    ``edge_prob[i]`` is the conditional probability of the edge into node
    ``i`` (1 at the root).  Kernels are strictly positive and sum to one
    over each node's children; ``martingale`` records whether the tilted
    increment means vanish (checked at construction).
    """

    edge_prob: np.ndarray
    martingale: bool

    @classmethod
    def from_edges(cls, tree: EventTree, edge_prob: np.ndarray, *,
                   require_martingale: bool = True,
                   tol: Tolerances = DEFAULT) -> "MeasureProcess":
        q = np.asarray(edge_prob, dtype=np.float64).copy()
        q[0] = 1.0
        if q.shape != (tree.n_nodes,):
            raise TreeStructureError("edge probability array has wrong length")
        if np.any(q[1:] <= 0.0):
            raise TreeStructureError("measure kernels must be strictly positive")
        mass = np.zeros(tree.n_nodes)
        np.add.at(mass, tree.parent[1:], q[1:])
        interior = tree.times < tree.horizon
        if np.any(np.abs(mass[interior] - 1.0) > tol.kernel_sum):
            raise TreeStructureError("measure kernels must sum to one")
        mart = True
        drift = np.zeros((tree.n_nodes, tree.n_assets))
        np.add.at(drift, tree.parent[1:], q[1:, None] * tree.dprice[1:])
        scale = max(1.0, float(np.abs(tree.dprice).max()))
        if np.any(np.abs(drift[interior]) > tol.constraint * scale):
            mart = False
        if require_martingale and not mart:
            raise NonMartingaleKernel("kernels do not make the price a martingale")
        q.setflags(write=False)
        return cls(q, mart)

    @classmethod
    def reference(cls, tree: EventTree) -> "MeasureProcess":
        """The tree's own kernels (usually not a martingale measure)."""
        return cls(tree.edge_prob, False)

    def kernel(self, tree: EventTree, i: int) -> np.ndarray:
        return self.edge_prob[tree.children_of(i)]


@dataclass
class DensitySurface:
    """Running density of a measure against a reference, node by node."""

    z: np.ndarray          # (n,) density at each node, z[root] = 1
    log_z: np.ndarray      # (n,) its logarithm
    edge_ratio: np.ndarray  # (n,) one-step ratio q/r along the incoming edge


@dataclass
class EntropyResult:
    """Output of the entropic backward recursion.

    value_surface[i] is the optimal remaining cost
    ``min E_Q[ log(Z_{t,T}) + cost(omega) | node i ]``; multipliers holds
    the per-node tilt vectors (a predictable strategy surface);
    scale_constant is ``exp(value_surface[root])``, the constant in the
    exponential-of-gains form of the terminal density.
    """

    measure: MeasureProcess
    value_surface: np.ndarray
    multipliers: np.ndarray
    scale_constant: float
    terminal_cost: np.ndarray
    iterations: int
    max_residual: float
    degenerate_nodes: int

    @property
    def strategy(self) -> np.ndarray:
        """The multipliers read as a self-financing holdings surface."""
        return self.multipliers


@dataclass
class OneStepProjection:
    q: np.ndarray
    multiplier: np.ndarray
    value: float
    iterations: int
    residual: float
    degenerate: bool


def entropic_projection(p, ds, cost=None, *, tol: Tolerances = DEFAULT,
                        lam0=None) -> OneStepProjection:
    """Single-node entropic tilt onto the martingale constraint.

    Minimizes ``sum_i q_i (log(q_i / p_i) + cost_i)`` over strictly
    positive kernels with ``sum_i q_i ds_i = 0``.  The optimum is
    ``q_i ∝ p_i exp(-cost_i + lam . ds_i)`` with value
    ``-log sum_i p_i exp(-cost_i + lam . ds_i)``.

    Parameters
    ----------
    p : (k,) strictly positive reference kernel.
    ds : (k, d) price increments.
    cost : (k,) continuation costs (defaults to zero).
    lam0 : optional warm start for the multiplier.

    Raises ``NoArbitrageViolated`` when no strictly positive martingale
    kernel exists; rank-deficient increments are not an error — the
    reported multiplier is then the minimal-norm root.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0):
        raise TreeStructureError("reference kernel must be strictly positive")
    ds = np.atleast_2d(np.asarray(ds, dtype=np.float64))
    if ds.ndim != 2:
        raise TreeStructureError("ds must have shape (k, d)")
    k = p.shape[0]
    cost = np.zeros(k) if cost is None else np.asarray(cost, dtype=np.float64)
    res = entropic_projection_batch(
        np.log(p)[None, :], ds[None, :, :], cost[None, :],
        newton_tol=tol.newton, max_iter=NEWTON_MAX_ITER,
        lam0=None if lam0 is None else np.atleast_2d(lam0))
    return OneStepProjection(res.q[0], res.multiplier[0], float(res.value[0]),
                             int(res.iterations[0]), float(res.residual[0]),
                             bool(res.degenerate[0]))


def _entropic_sweep(tree: EventTree, terminal_cost: np.ndarray,
                    tol: Tolerances) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Backward entropic recursion; returns (J, lam, q_edge, diagnostics)."""
    n = tree.n_nodes
    value = np.zeros(n)
    value[tree.terminal_nodes] = terminal_cost
    lam = np.zeros((n, tree.n_assets))
    q_edge = np.zeros(n)
    q_edge[0] = 1.0
    total_iter = 0
    max_resid = 0.0
    degenerate = 0
    groups = tree.groups()
    logp = np.log(tree.edge_prob)
    for t in range(tree.horizon - 1, -1, -1):
        for _k, (nodes, ch) in groups[t].items():
            res: BatchResult = entropic_projection_batch(
                logp[ch], tree.dprice[ch], value[ch],
                newton_tol=tol.newton, max_iter=NEWTON_MAX_ITER)
            value[nodes] = res.value
            lam[nodes] = res.multiplier
            q_edge[ch] = res.q
            total_iter += int(res.iterations.sum())
            max_resid = max(max_resid, float(res.residual.max()))
            degenerate += int(res.degenerate.sum())
    diag = {"iterations": total_iter, "max_residual": max_resid,
            "degenerate_nodes": degenerate}
    return value, lam, q_edge, diag


def minimal_entropy_measure(tree: EventTree, terminal_cost=None, *,
                            tol: Tolerances = DEFAULT) -> EntropyResult:
    """Entropy-optimal martingale measure of an event tree.

    With ``terminal_cost=None`` this is the measure minimizing relative
    entropy to the tree's reference kernels among all martingale
    measures.  A terminal cost array (aligned with the terminal slice)
    tilts the optimization toward claim-adjusted measures: the recursion
    minimizes ``E_Q[log(dQ/dP) + cost(omega)]``.

    Returns an :class:`EntropyResult`; its ``value_surface`` is the
    optimal conditional cost-to-go and satisfies the exponential-of-gains
    structure of the terminal density exactly (see
    :func:`verify_entropy_structure`).
    """
    term = tree.terminal_nodes
    if terminal_cost is None:
        cost = np.zeros(term.size)
    else:
        cost = np.asarray(terminal_cost, dtype=np.float64)
        if cost.shape != (term.size,):
            raise TreeStructureError("terminal cost must align with the terminal slice")
    value, lam, q_edge, diag = _entropic_sweep(tree, cost, tol)
    measure = MeasureProcess.from_edges(tree, q_edge, tol=tol)
    return EntropyResult(measure, value, lam, float(np.exp(value[0])), cost,
                         diag["iterations"], diag["max_residual"],
                         diag["degenerate_nodes"])


def claim_tilted_measure(tree: EventTree, claim: ClaimSpec, alpha: float, *,
                         tol: Tolerances = DEFAULT) -> EntropyResult:
    """Entropy-optimal measure tilted by ``-alpha * claim`` at the horizon."""
    return minimal_entropy_measure(tree, -float(alpha) * claim.values, tol=tol)


# ---------------------------------------------------------------------------
# densities, entropies, expectations


def density_process(tree: EventTree, measure: MeasureProcess,
                    reference: MeasureProcess | None = None) -> DensitySurface:
    """Running density of ``measure`` against ``reference`` (default: the
    tree's kernels), computed in log domain."""
    ref = tree.edge_prob if reference is None else reference.edge_prob
    ratio = np.ones(tree.n_nodes)
    ratio[1:] = measure.edge_prob[1:] / ref[1:]
    log_z = np.zeros(tree.n_nodes)
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        log_z[nodes] = log_z[tree.parent[nodes]] + np.log(ratio[nodes])
    return DensitySurface(np.exp(log_z), log_z, ratio)


def node_probabilities(tree: EventTree, measure: MeasureProcess) -> np.ndarray:
    """Unconditional probability of each node under the measure."""
    prob = np.ones(tree.n_nodes)
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        prob[nodes] = prob[tree.parent[nodes]] * measure.edge_prob[nodes]
    return prob


def relative_entropy(tree: EventTree, measure: MeasureProcess,
                     reference: MeasureProcess | None = None) -> float:
    """H(Q | R) summed over terminal atoms."""
    dens = density_process(tree, measure, reference)
    prob = node_probabilities(tree, measure)
    term = tree.terminal_nodes
    return float(np.dot(prob[term], dens.log_z[term]))


def conditional_expectation(tree: EventTree, measure: MeasureProcess,
                            terminal_values: np.ndarray) -> np.ndarray:
    """Surface of conditional expectations of a terminal payoff."""
    x = np.zeros(tree.n_nodes)
    x[tree.terminal_nodes] = np.asarray(terminal_values, dtype=np.float64)
    q = measure.edge_prob
    for t in range(tree.horizon - 1, -1, -1):
        for _k, (nodes, ch) in tree.groups()[t].items():
            x[nodes] = np.einsum("mk,mk->m", q[ch], x[ch])
    return x


def expected_remaining(tree: EventTree, measure: MeasureProcess,
                       step_values: np.ndarray) -> np.ndarray:
    """Surface R with R[i] = E[ sum of step_values over nodes visited from
    i (inclusive) to the horizon (exclusive) | node i ].

    ``step_values`` is read at non-terminal nodes only.
    """
    r = np.zeros(tree.n_nodes)
    q = measure.edge_prob
    step = np.asarray(step_values, dtype=np.float64)
    for t in range(tree.horizon - 1, -1, -1):
        for _k, (nodes, ch) in tree.groups()[t].items():
            r[nodes] = step[nodes] + np.einsum("mk,mk->m", q[ch], r[ch])
    return r


def verify_entropy_structure(tree: EventTree, result: EntropyResult) -> float:
    """Max deviation of the terminal log-density from its structural form.

    Checks, along every terminal path,
    ``log Z_T = J_root - cost(omega) + sum_t lam_t . dS_t``;
    with zero terminal cost this is the exponential-of-gains form of the
    optimal density with constant ``scale_constant``.
    """
    dens = density_process(tree, result.measure)
    g = np.zeros(tree.n_nodes)
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        par = tree.parent[nodes]
        g[nodes] = g[par] + np.einsum("ij,ij->i", result.multipliers[par],
                                      tree.dprice[nodes])
    term = tree.terminal_nodes
    predicted = result.value_surface[0] - result.terminal_cost + g[term]
    return float(np.max(np.abs(dens.log_z[term] - predicted)))
