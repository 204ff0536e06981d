"""Finite event trees for incomplete-market valuation.

An :class:`EventTree` is a finite, rooted tree whose nodes carry a price
vector for ``d`` traded assets and whose edges carry strictly positive
one-step probabilities.  Nodes are indexed breadth first (root = 0,
children stored contiguously, slices of equal time are contiguous index
ranges), which makes every backward recursion in the package a sequence
of vectorized slice operations and keeps rebuilds bitwise identical.

The module also provides generators (explicit node lists, multiplicative
lattices, seeded random trees that are arbitrage-free by construction),
one-step arbitrage validation, self-financing gains, stopping rules, and
a compact recombining representation of a two-factor basis-risk model
used for step-refinement studies.
"""

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import NoArbitrageViolated, StoppingRuleError, TreeStructureError
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "EventTree",
    "ClaimSpec",
    "BasisRiskLattice",
    "NoArbitrageReport",
    "tree_from_nodes",
    "build_tree",
    "one_period_tree",
    "binomial_tree",
    "trinomial_tree",
    "random_tree",
    "random_claim",
    "basis_risk_lattice",
    "validate_no_arbitrage",
    "gains",
    "zero_strategy",
    "random_strategy",
    "is_stopping_rule",
    "validate_stopping_rule",
    "random_stopping_rule",
    "stopping_precedes",
    "horizon_rule",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class EventTree:
    """Immutable event tree with breadth-first node indexing.

    Parameters
    ----------
    times : (n,) int array, node time indices, root at 0.
    parent : (n,) int array, parent index, -1 for the root.
    prices : (n, d) float array, asset prices at each node.
    edge_prob : (n,) float array, one-step conditional probability of the
        edge from ``parent[i]`` to ``i`` (1.0 at the root).  The
        probabilities over each node's children must sum to one.

    Attributes
    ----------
    horizon : terminal time N; every leaf sits exactly at N.
    n_assets : number of traded assets d.
    dprice : (n, d) price increment along the incoming edge (0 at root).
    child_start, child_count : contiguous children bookkeeping.
    """

    def __init__(self, times, parent, prices, edge_prob, *, tol: Tolerances = DEFAULT):
        times = np.asarray(times, dtype=np.int64)
        parent = np.asarray(parent, dtype=np.int64)
        prices = np.asarray(prices, dtype=np.float64)
        edge_prob = np.asarray(edge_prob, dtype=np.float64)
        if prices.ndim != 2:
            raise TreeStructureError("prices must be a 2-d array (nodes x assets)")
        n = times.shape[0]
        if not (parent.shape == (n,) and prices.shape[0] == n and edge_prob.shape == (n,)):
            raise TreeStructureError("node array lengths disagree")
        if n == 0 or times[0] != 0 or parent[0] != -1:
            raise TreeStructureError("node 0 must be the root at time 0")
        if np.any(np.diff(times) < 0):
            raise TreeStructureError("nodes must be listed breadth first")
        if not np.all(np.isfinite(prices)):
            raise TreeStructureError("prices must be finite")

        # contiguous children: parents of the breadth-first listing are
        # non-decreasing and every non-root child points one slice up
        if n > 1:
            if np.any(np.diff(parent[1:]) < 0):
                raise TreeStructureError("children of each node must be contiguous")
            if np.any(times[1:] != times[parent[1:]] + 1):
                raise TreeStructureError("each edge must advance time by one step")

        child_count = np.zeros(n, dtype=np.int64)
        np.add.at(child_count, parent[1:], 1)
        child_start = np.zeros(n, dtype=np.int64)
        if n > 1:
            first = np.full(n, -1, dtype=np.int64)
            idx = np.arange(1, n)
            # first occurrence of each parent in the sorted parent list
            seen = np.ones(n - 1, dtype=bool)
            seen[1:] = parent[2:] != parent[1:-1]
            first[parent[idx[seen]]] = idx[seen]
            child_start = np.where(child_count > 0, first, 0)

        horizon = int(times.max())
        interior = times < horizon
        if np.any(child_count[interior] < 2):
            raise TreeStructureError("non-terminal nodes need at least two children")
        if np.any(child_count[~interior] != 0):
            raise TreeStructureError("terminal nodes cannot have children")
        if np.any(edge_prob[1:] < tol.prob_floor):
            raise TreeStructureError(
                f"one-step probabilities must be >= {tol.prob_floor}")
        # kernel mass per parent
        mass = np.zeros(n)
        np.add.at(mass, parent[1:], edge_prob[1:])
        if np.any(np.abs(mass[interior] - 1.0) > tol.kernel_sum):
            raise TreeStructureError("children probabilities must sum to one")

        dprice = np.zeros_like(prices)
        if n > 1:
            dprice[1:] = prices[1:] - prices[parent[1:]]

        self.times = _freeze(times)
        self.parent = _freeze(parent)
        self.prices = _freeze(prices)
        self.edge_prob = _freeze(edge_prob)
        self.child_start = _freeze(child_start)
        self.child_count = _freeze(child_count)
        self.dprice = _freeze(dprice)
        self.horizon = horizon
        self.n_nodes = n
        self.n_assets = prices.shape[1]
        # contiguous [start, stop) of each time slice
        bounds = np.searchsorted(times, np.arange(horizon + 2))
        self._slice_bounds = _freeze(bounds)
        self._groups: list | None = None

    # -- structure access -------------------------------------------------

    def slice_nodes(self, t: int) -> np.ndarray:
        """Node indices of time slice ``t`` (a contiguous range)."""
        return np.arange(self._slice_bounds[t], self._slice_bounds[t + 1])

    @property
    def terminal_nodes(self) -> np.ndarray:
        return self.slice_nodes(self.horizon)

    def children_of(self, i: int) -> np.ndarray:
        s = self.child_start[i]
        return np.arange(s, s + self.child_count[i])

    def kernel(self, i: int) -> np.ndarray:
        """Reference one-step probabilities over children of node ``i``."""
        return self.edge_prob[self.children_of(i)]

    def increments(self, i: int) -> np.ndarray:
        """Price increments to the children of node ``i``, shape (k, d)."""
        return self.dprice[self.children_of(i)]

    def groups(self):
        """Slice-and-branching groups for vectorized backward sweeps.

        Returns a list over t = 0..horizon-1 of dicts mapping branching
        count k to ``(nodes (m,), children (m, k))`` index arrays.
        """
        if self._groups is None:
            out = []
            for t in range(self.horizon):
                nodes = self.slice_nodes(t)
                byk: dict[int, tuple[np.ndarray, np.ndarray]] = {}
                counts = self.child_count[nodes]
                for k in np.unique(counts):
                    sel = nodes[counts == k]
                    ch = sel[:, None] * 0 + self.child_start[sel][:, None] + np.arange(k)[None, :]
                    byk[int(k)] = (sel, ch)
                out.append(byk)
            self._groups = out
        return self._groups

    def reference_kernels(self) -> list[np.ndarray]:
        """Per-node kernels of the reference measure (empty at leaves)."""
        return [self.edge_prob[self.children_of(i)] for i in range(self.n_nodes)]

    def __repr__(self):  # pragma: no cover
        return (f"EventTree(nodes={self.n_nodes}, horizon={self.horizon}, "
                f"assets={self.n_assets})")


@dataclass(frozen=True)
class ClaimSpec:
    """Terminal payoff, aligned with ``tree.terminal_nodes``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise TreeStructureError("claim values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def from_function(cls, tree: EventTree, fn: Callable[[np.ndarray], float]) -> "ClaimSpec":
        """Payoff from a function of the terminal price vector."""
        term = tree.terminal_nodes
        return cls(np.array([fn(tree.prices[i]) for i in term]))

    def full_surface(self, tree: EventTree) -> np.ndarray:
        """Values written into an (n,) array at terminal slots, zero elsewhere."""
        out = np.zeros(tree.n_nodes)
        out[tree.terminal_nodes] = self.values
        return out


# ---------------------------------------------------------------------------
# constructors


def tree_from_nodes(nodes: Sequence[dict], *, tol: Tolerances = DEFAULT) -> EventTree:
    """Build a tree from explicit node dicts.

    Each entry: ``{"parent": int | None, "prices": [...], "p": float | None}``
    listed in breadth-first order; ``p`` is the one-step probability of
    reaching the node from its parent (omitted/None for the root).
    """
    n = len(nodes)
    parent = np.full(n, -1, dtype=np.int64)
    times = np.zeros(n, dtype=np.int64)
    prob = np.ones(n)
    prices = []
    for i, spec in enumerate(nodes):
        par = spec.get("parent")
        if par is None:
            if i != 0:
                raise TreeStructureError("only node 0 may be the root")
        else:
            par = int(par)
            if par >= i:
                raise TreeStructureError("parents must precede children")
            parent[i] = par
            times[i] = times[par] + 1
            if spec.get("p") is None:
                raise TreeStructureError(f"node {i}: missing probability")
            prob[i] = float(spec["p"])
        prices.append(np.asarray(spec["prices"], dtype=np.float64))
    price_arr = np.vstack([p.reshape(1, -1) for p in prices])
    return EventTree(times, parent, price_arr, prob, tol=tol)


def one_period_tree(s0, child_prices, probs, *, tol: Tolerances = DEFAULT) -> EventTree:
    """Single-step tree: one root, ``k`` terminal children."""
    s0 = np.atleast_1d(np.asarray(s0, dtype=np.float64))
    child_prices = np.atleast_2d(np.asarray(child_prices, dtype=np.float64))
    probs = np.asarray(probs, dtype=np.float64)
    k = child_prices.shape[0]
    nodes = [{"parent": None, "prices": s0}]
    for j in range(k):
        nodes.append({"parent": 0, "prices": child_prices[j], "p": probs[j]})
    return tree_from_nodes(nodes, tol=tol)


def _multiplicative_tree(steps, s0, factors, probs, tol) -> EventTree:
    """Non-recombining expansion of a one-asset multiplicative lattice."""
    times = [0]
    parent = [-1]
    prices = [float(s0)]
    prob = [1.0]
    prev = [0]
    for t in range(steps):
        nxt = []
        for node in prev:
            for f, p in zip(factors, probs):
                times.append(t + 1)
                parent.append(node)
                prices.append(prices[node] * f)
                prob.append(p)
                nxt.append(len(times) - 1)
        prev = nxt
    arr = np.asarray(prices)[:, None]
    return EventTree(np.asarray(times), np.asarray(parent), arr, np.asarray(prob), tol=tol)


def binomial_tree(steps, s0=1.0, up=1.2, down=0.85, p_up=0.5, *,
                  tol: Tolerances = DEFAULT) -> EventTree:
    """Explicit (non-recombining storage) binomial tree; complete market
    whenever ``down < 1 < up``."""
    return _multiplicative_tree(steps, s0, (up, down), (p_up, 1.0 - p_up), tol)


def trinomial_tree(steps, s0=1.0, up=1.25, mid=1.0, down=0.8,
                   probs=(1 / 3, 1 / 3, 1 / 3), *, tol: Tolerances = DEFAULT) -> EventTree:
    """Explicit trinomial tree (one traded asset, genuinely incomplete)."""
    return _multiplicative_tree(steps, s0, (up, mid, down), probs, tol)


def random_tree(depth, branching=3, assets=1, seed=0, *, vol=0.25,
                tol: Tolerances = DEFAULT) -> EventTree:
    """Seeded random event tree, arbitrage-free by construction.

    Child price increments at every node are mean-centered draws, so zero
    is a strictly positive convex combination of them (uniform weights);
    one-step probabilities are bounded well away from zero.

    Parameters
    ----------
    depth : number of time steps (horizon N).
    branching : fixed child count, or (lo, hi) for per-node uniform draws.
    assets : number of traded assets d.
    seed : RNG seed; equal seeds give bitwise-identical trees.
    vol : scale of relative price moves.
    """
    rng = np.random.default_rng(seed)
    times = [0]
    parent = [-1]
    prices = [np.ones(assets)]
    prob = [1.0]
    prev = [0]
    for t in range(depth):
        nxt = []
        for node in prev:
            if np.isscalar(branching):
                k = int(branching)
            else:
                k = int(rng.integers(branching[0], branching[1] + 1))
            scale = vol * rng.uniform(0.4, 1.0)
            moves = rng.normal(0.0, scale, size=(k, assets))
            moves -= moves.mean(axis=0)  # centering => no one-step arbitrage
            w = rng.uniform(0.0, 1.0, size=k) + 0.25
            w /= w.sum()
            for j in range(k):
                times.append(t + 1)
                parent.append(node)
                prices.append(prices[node] + moves[j])
                prob.append(w[j])
                nxt.append(len(times) - 1)
        prev = nxt
    arr = np.vstack([p.reshape(1, -1) for p in prices])
    return EventTree(np.asarray(times), np.asarray(parent), arr,
                     np.asarray(prob), tol=tol)


def random_claim(tree: EventTree, seed=0, *, bound=2.0) -> ClaimSpec:
    """Seeded bounded claim mixing tradable shape and node noise.

    Combines an affine part, a ragged call-type part, and per-terminal
    noise (the noise keeps generic claims non-attainable), then rescales
    into ``[-bound, bound]``.
    """
    rng = np.random.default_rng(seed + 7_654_321)
    term = tree.terminal_nodes
    s = tree.prices[term]
    w = rng.normal(size=tree.n_assets)
    strike = rng.uniform(0.7, 1.3)
    affine = s @ w
    kinked = np.maximum(s[:, 0] - strike, 0.0)
    noise = rng.normal(scale=0.5, size=term.size)
    raw = rng.uniform(0.2, 1.0) * affine + rng.uniform(0.0, 1.5) * kinked + noise
    top = np.max(np.abs(raw))
    if top > 0:
        raw *= rng.uniform(0.4, 1.0) * bound / top
    return ClaimSpec(raw)


def build_tree(spec: dict, *, tol: Tolerances = DEFAULT) -> EventTree:
    """Build a tree from a config mapping (see the CLI module for the schema).

    ``kind`` selects the constructor: ``explicit`` (node list), ``lattice``
    (binomial/trinomial multiplicative), or ``random`` (seeded generator).
    """
    kind = spec.get("kind")
    if kind == "explicit":
        return tree_from_nodes(spec["nodes"], tol=tol)
    if kind == "lattice":
        model = spec.get("model", "binomial")
        steps = int(spec["steps"])
        if model == "binomial":
            return binomial_tree(steps, spec.get("s0", 1.0), spec.get("up", 1.2),
                                 spec.get("down", 0.85), spec.get("p_up", 0.5), tol=tol)
        if model == "trinomial":
            return trinomial_tree(steps, spec.get("s0", 1.0), spec.get("up", 1.25),
                                  spec.get("mid", 1.0), spec.get("down", 0.8),
                                  tuple(spec.get("probs", (1 / 3, 1 / 3, 1 / 3))), tol=tol)
        raise TreeStructureError(f"unknown lattice model {model!r}")
    if kind == "random":
        branching = spec.get("branching", 3)
        if isinstance(branching, (list, tuple)):
            branching = tuple(branching)
        return random_tree(int(spec["depth"]), branching, int(spec.get("assets", 1)),
                           int(spec.get("seed", 0)), vol=float(spec.get("vol", 0.25)),
                           tol=tol)
    raise TreeStructureError(f"unknown tree kind {kind!r}")


# ---------------------------------------------------------------------------
# arbitrage validation


@dataclass
class NoArbitrageReport:
    """Outcome of the one-step arbitrage scan.

    ``ok`` is True iff every non-terminal node admits a strictly positive
    martingale kernel; ``witness[i]`` stores one such kernel.
    """

    ok: bool
    node_ok: np.ndarray
    witness: list

    def require(self):
        if not self.ok:
            bad = int(np.flatnonzero(~self.node_ok)[0])
            raise NoArbitrageViolated(f"one-step arbitrage at node {bad}")
        return self


def _relint_witness(ds: np.ndarray, tol: float) -> np.ndarray | None:
    """Strictly positive kernel q with q @ ds = 0, or None.

    Solves  max eps  s.t.  q >= eps, sum q = 1, ds' q = 0  (an LP whose
    optimum is positive exactly when 0 lies in the relative interior of
    the convex hull of the rows of ``ds``).
    """
    k, d = ds.shape
    # variables (q_1..q_k, eps)
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, k + 1))
    a_eq[:d, :k] = ds.T
    a_eq[d, :k] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])  # eps - q_i <= 0
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * k + [(None, None)], method="highs")
    if not res.success or res.x[-1] <= tol:
        return None
    q = np.clip(res.x[:k], 0.0, None)
    return q / q.sum()


def validate_no_arbitrage(tree: EventTree, *, tol: Tolerances = DEFAULT) -> NoArbitrageReport:
    """Scan all non-terminal nodes for one-step arbitrage.

    A node is sound iff zero lies in the relative interior of the convex
    hull of its child price increments, i.e. iff it carries a strictly
    positive martingale kernel.  The witness kernels are returned for
    reuse in tests.
    """
    n = tree.n_nodes
    node_ok = np.ones(n, dtype=bool)
    witness: list = [None] * n
    for t in range(tree.horizon):
        for i in tree.slice_nodes(t):
            ds = tree.increments(i)
            scale = max(1.0, float(np.abs(ds).max()))
            w = _relint_witness(ds / scale, 1e-11)
            if w is None:
                node_ok[i] = False
            else:
                witness[i] = w
    return NoArbitrageReport(bool(node_ok.all()), node_ok, witness)


# ---------------------------------------------------------------------------
# strategies and gains


def zero_strategy(tree: EventTree) -> np.ndarray:
    return np.zeros((tree.n_nodes, tree.n_assets))


def random_strategy(tree: EventTree, seed=0, scale=1.0) -> np.ndarray:
    """Seeded random holdings surface (rows at terminal nodes unused)."""
    rng = np.random.default_rng(seed + 999)
    theta = rng.normal(scale=scale, size=(tree.n_nodes, tree.n_assets))
    theta[tree.terminal_nodes] = 0.0
    return theta


def gains(tree: EventTree, theta: np.ndarray) -> np.ndarray:
    """Cumulative self-financing gains of holdings ``theta``.

    ``theta[i]`` is held over the step leaving node ``i``; the returned
    surface G satisfies G[root] = 0 and
    G[child] = G[parent] + theta[parent] . (S[child] - S[parent]).
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros(tree.n_nodes)
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        par = tree.parent[nodes]
        g[nodes] = g[par] + np.einsum("ij,ij->i", theta[par], tree.dprice[nodes])
    return g


# ---------------------------------------------------------------------------
# stopping rules (antichain cuts)


def is_stopping_rule(tree: EventTree, members: np.ndarray) -> bool:
    mask = np.zeros(tree.n_nodes, dtype=bool)
    mask[np.asarray(members, dtype=np.int64)] = True
    count = np.zeros(tree.n_nodes, dtype=np.int64)
    count[0] = mask[0]
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        count[nodes] = count[tree.parent[nodes]] + mask[nodes]
    if np.any(count > 1):
        return False
    return bool(np.all(count[tree.terminal_nodes] == 1))


def validate_stopping_rule(tree: EventTree, members) -> np.ndarray:
    members = np.unique(np.asarray(members, dtype=np.int64))
    if members.size and (members.min() < 0 or members.max() >= tree.n_nodes):
        raise StoppingRuleError("stopping rule contains invalid node ids")
    if not is_stopping_rule(tree, members):
        raise StoppingRuleError("node set is not an exact cut of the tree")
    return members


def horizon_rule(tree: EventTree) -> np.ndarray:
    """The deterministic rule 'stop at the horizon'."""
    return tree.terminal_nodes.copy()


def random_stopping_rule(tree: EventTree, seed=0, stop_prob=0.3) -> np.ndarray:
    """Seeded random cut: walking down from the root, each not-yet-stopped
    node stops with probability ``stop_prob`` (terminals always stop)."""
    rng = np.random.default_rng(seed + 31_337)
    stopped_above = np.zeros(tree.n_nodes, dtype=bool)
    members = []
    for t in range(tree.horizon + 1):
        for i in tree.slice_nodes(t):
            if t > 0 and stopped_above[tree.parent[i]]:
                stopped_above[i] = True
                continue
            if t == tree.horizon or (t > 0 and rng.uniform() < stop_prob):
                members.append(i)
                stopped_above[i] = True
    return np.asarray(members, dtype=np.int64)


def stopping_precedes(tree: EventTree, earlier, later) -> bool:
    """True iff cut ``earlier`` happens no later than ``later`` on every path."""
    earlier = validate_stopping_rule(tree, earlier)
    later = validate_stopping_rule(tree, later)
    in_later = np.zeros(tree.n_nodes, dtype=bool)
    in_later[later] = True
    strictly_above = np.zeros(tree.n_nodes, dtype=bool)  # a strict ancestor is in `later`
    for t in range(1, tree.horizon + 1):
        nodes = tree.slice_nodes(t)
        par = tree.parent[nodes]
        strictly_above[nodes] = strictly_above[par] | in_later[par]
    return not bool(np.any(strictly_above[earlier]))


# ---------------------------------------------------------------------------
# recombining basis-risk lattice


@dataclass(frozen=True)
class BasisRiskLattice:
    """Joint binomial lattice for a traded asset S and a correlated
    non-traded factor V (payoffs depend on V only).

    State at time t is the pair (i, j) of up-move counts of S and V; the
    per-step joint kernel over (S-move, V-move) in the order
    (uu, ud, du, dd) is the same at every node, so slices are dense
    (t+1) x (t+1) grids and backward sweeps are pure array code.
    """

    steps: int
    s0: float
    v0: float
    s_factors: tuple  # (up, down)
    v_factors: tuple
    joint_prob: np.ndarray  # (4,) over (uu, ud, du, dd)

    def s_values(self, t: int) -> np.ndarray:
        up, down = self.s_factors
        i = np.arange(t + 1)
        return self.s0 * up ** i * down ** (t - i)

    def v_values(self, t: int) -> np.ndarray:
        up, down = self.v_factors
        j = np.arange(t + 1)
        return self.v0 * up ** j * down ** (t - j)

    @property
    def step_moves(self) -> np.ndarray:
        """Relative S-increment factor minus one for the four joint moves."""
        up, down = self.s_factors
        return np.array([up - 1.0, up - 1.0, down - 1.0, down - 1.0])


def basis_risk_lattice(steps, *, sigma_s=0.2, sigma_v=0.3, rho=0.6,
                       maturity=1.0, s0=1.0, v0=1.0) -> BasisRiskLattice:
    """Symmetric two-factor lattice with per-step correlation ``rho``."""
    if not -1.0 < rho < 1.0:
        raise TreeStructureError("correlation must lie in (-1, 1)")
    h = maturity / steps
    su, sd = float(np.exp(sigma_s * np.sqrt(h))), float(np.exp(-sigma_s * np.sqrt(h)))
    vu, vd = float(np.exp(sigma_v * np.sqrt(h))), float(np.exp(-sigma_v * np.sqrt(h)))
    p = np.array([(1 + rho) / 4, (1 - rho) / 4, (1 - rho) / 4, (1 + rho) / 4])
    return BasisRiskLattice(int(steps), float(s0), float(v0), (su, sd), (vu, vd), _freeze(p))
