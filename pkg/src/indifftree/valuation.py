"""Dynamic exponential-utility indifference values on event trees.

Two independent routes compute the same surface:

* primal — a backward sweep where each node solves the one-step
  exponential hedging problem under the entropy-optimal martingale
  measure:  C_t = (1/a) log min_theta E[ exp(a (C_{t+1} - theta . dS)) ].

* dual — the difference of two entropic recursions under the reference
  measure, one with terminal cost ``-a B`` and one with zero cost,
  divided by a.

Exact one-step convex duality makes the two surfaces agree to solver
tolerance; the acceptance suite gates on that agreement.  The module
also houses the structural property checks of the value map (bounds,
monotonicity, convexity, translation, volume/risk-aversion scaling),
arbitrage-bound and attainability checks, stopping-rule consistency of
the dynamic values, and the one-step martingale optimality certificate.
"""

from dataclasses import dataclass, field

import numpy as np

from ._onestep import exp_min_batch
from .errors import NonMartingaleKernel, TreeStructureError
from .lattice import ClaimSpec, EventTree, gains, random_strategy, validate_stopping_rule
from .measures import (EntropyResult, MeasureProcess, minimal_entropy_measure,
                       node_probabilities)
from .tolerances import DEFAULT, NEWTON_MAX_ITER, Tolerances

__all__ = [
    "ValuationSurface",
    "ValuationResult",
    "DualResult",
    "PropertyReport",
    "BoundsReport",
    "CertificateReport",
    "one_step_primal",
    "indifference_surface",
    "dual_surface",
    "property_checks",
    "arbitrage_bounds_check",
    "time_consistency_check",
    "optimality_certificate",
]


@dataclass
class ValuationSurface:
    """Indifference value at every node for one claim and one risk aversion."""

    values: np.ndarray
    alpha: float
    route: str  # "primal" | "dual"
    valid: np.ndarray | None = None  # node mask when swept to a stopping rule


@dataclass
class ValuationResult:
    surface: ValuationSurface
    strategy: np.ndarray      # (n, d) per-node optimal holdings
    iterations: int
    max_residual: float


@dataclass
class DualResult:
    surface: ValuationSurface
    zero_leg: EntropyResult
    claim_leg: EntropyResult


def one_step_primal(q, ds, cont, alpha, *, theta0=None,
                    tol: Tolerances = DEFAULT):
    """Single-node exponential hedging step.

    Returns ``(value, theta)`` with
    ``value = (1/alpha) log min_theta sum_i q_i exp(alpha (cont_i - theta . ds_i))``.

    ``q`` must be a martingale kernel for the increments (otherwise the
    objective has no minimizer and ``NonMartingaleKernel`` is raised).
    Rank-deficient increments give the minimal-norm minimizer.
    """
    q = np.asarray(q, dtype=np.float64)
    ds = np.atleast_2d(np.asarray(ds, dtype=np.float64))
    cont = np.asarray(cont, dtype=np.float64)
    if np.any(q <= 0.0):
        raise TreeStructureError("kernel must be strictly positive")
    drift = q @ ds
    if np.abs(drift).max() > 1e-8 * max(1.0, np.abs(ds).max()):
        raise NonMartingaleKernel(
            f"one-step kernel drift {np.abs(drift).max():.3e}; the hedging "
            "objective is unbounded below")
    res = exp_min_batch(np.log(q)[None, :], ds[None, :, :], cont[None, :],
                        float(alpha), newton_tol=tol.newton,
                        max_iter=NEWTON_MAX_ITER,
                        theta0=None if theta0 is None else np.atleast_2d(theta0))
    return float(res.value[0]), res.multiplier[0]


def _primal_sweep(tree: EventTree, q_edge: np.ndarray, claim_values: np.ndarray,
                  alpha: float, *, theta0=None, stop_members=None,
                  stop_values=None, tol: Tolerances = DEFAULT):
    """Backward exponential-hedging sweep under kernels ``q_edge``.

    When a stopping rule is supplied the sweep treats its members as
    terminal with the given values; nodes strictly after the rule are
    flagged invalid in the returned mask.
    """
    n = tree.n_nodes
    values = np.zeros(n)
    values[tree.terminal_nodes] = claim_values
    theta = np.zeros((n, tree.n_assets))
    override = None
    if stop_members is not None:
        override = np.asarray(stop_members, dtype=np.int64)
        values[override] = np.asarray(stop_values, dtype=np.float64)
    logq = np.log(q_edge, out=np.full(n, -np.inf), where=q_edge > 0)
    total_iter = 0
    max_resid = 0.0
    groups = tree.groups()
    for t in range(tree.horizon - 1, -1, -1):
        for _k, (nodes, ch) in groups[t].items():
            res = exp_min_batch(
                logq[ch], tree.dprice[ch], values[ch], alpha,
                newton_tol=tol.newton, max_iter=NEWTON_MAX_ITER,
                theta0=None if theta0 is None else theta0[nodes])
            values[nodes] = res.value
            theta[nodes] = res.multiplier
            total_iter += int(res.iterations.sum())
            max_resid = max(max_resid, float(res.residual.max()))
        if override is not None:
            in_slice = override[(override >= tree.slice_nodes(t)[0])
                                & (override <= tree.slice_nodes(t)[-1])]
            values[in_slice] = np.asarray(stop_values)[np.isin(override, in_slice)]
    valid = None
    if override is not None:
        after = np.zeros(n, dtype=bool)
        stop_mask = np.zeros(n, dtype=bool)
        stop_mask[override] = True
        for t in range(1, tree.horizon + 1):
            nodes = tree.slice_nodes(t)
            par = tree.parent[nodes]
            after[nodes] = after[par] | stop_mask[par]
        values[after] = np.nan
        theta[after] = np.nan
        valid = ~after
    return values, theta, total_iter, max_resid, valid


def indifference_surface(tree: EventTree, claim: ClaimSpec, alpha: float,
                         measure: MeasureProcess | None = None, *,
                         theta0=None, tol: Tolerances = DEFAULT) -> ValuationResult:
    """Primal indifference value surface under the entropy-optimal measure.

    Parameters
    ----------
    tree : event tree.
    claim : terminal payoff.
    alpha : risk aversion, > 0.
    measure : entropy-optimal martingale kernels; computed on the fly
        when omitted.
    theta0 : optional (n, d) warm start for the per-node hedges (used by
        risk-aversion sweeps).

    Returns the value surface, the per-node optimal holdings, and Newton
    diagnostics.
    """
    alpha = float(alpha)
    if alpha <= 0:
        raise ValueError("risk aversion must be positive")
    if measure is None:
        measure = minimal_entropy_measure(tree, tol=tol).measure
    if not measure.martingale:
        raise NonMartingaleKernel("the valuation measure must be a martingale measure")
    values, theta, iters, resid, _ = _primal_sweep(
        tree, measure.edge_prob, claim.values, alpha, theta0=theta0, tol=tol)
    return ValuationResult(ValuationSurface(values, alpha, "primal"),
                           theta, iters, resid)


def dual_surface(tree: EventTree, claim: ClaimSpec, alpha: float, *,
                 tol: Tolerances = DEFAULT) -> DualResult:
    """Dual indifference value surface from two entropic recursions.

    The claim leg runs with terminal cost ``-alpha * B`` (its optimal
    kernels form the claim-tilted measure), the zero leg with zero cost
    (minimal entropy measure); the surface is their scaled difference.
    """
    alpha = float(alpha)
    if alpha <= 0:
        raise ValueError("risk aversion must be positive")
    zero_leg = minimal_entropy_measure(tree, tol=tol)
    claim_leg = minimal_entropy_measure(tree, -alpha * claim.values, tol=tol)
    values = (zero_leg.value_surface - claim_leg.value_surface) / alpha
    return DualResult(ValuationSurface(values, alpha, "dual"), zero_leg, claim_leg)


# ---------------------------------------------------------------------------
# structural property checks


@dataclass
class PropertyReport:
    """Worst margins of the structural value-map properties.

    Every entry is a margin: inequality checks report the smallest slack,
    equality checks report minus the largest deviation.  A margin above
    ``-tol`` passes.
    """

    margins: dict = field(default_factory=dict)
    alpha: float = 1.0

    def worst(self) -> float:
        return min(self.margins.values()) if self.margins else 0.0

    def all_ok(self, tol: float = DEFAULT.equality) -> bool:
        return self.worst() >= -tol


def _surface(tree, values, alpha, measure, theta0=None, tol=DEFAULT):
    return _primal_sweep(tree, measure.edge_prob, values, alpha,
                         theta0=theta0, tol=tol)[0]


def _time_measurable(tree: EventTree, t: int, rng, low=0.0, high=1.0):
    """A random variable known at time t, extended to the terminal slice."""
    x = np.zeros(tree.n_nodes)
    nodes = tree.slice_nodes(t)
    x[nodes] = rng.uniform(low, high, size=nodes.size)
    for s in range(t + 1, tree.horizon + 1):
        sl = tree.slice_nodes(s)
        x[sl] = x[tree.parent[sl]]
    return x


def property_checks(tree: EventTree, claim: ClaimSpec, alpha: float,
                    measure: MeasureProcess | None = None, *, seed: int = 0,
                    n_convexity: int = 3, tol: Tolerances = DEFAULT) -> PropertyReport:
    """Verify the structural properties of the indifference value map.

    Margins returned (all should be >= -tol.equality):

    - ``bounds``: |C_t(B)| <= |B|_inf at every node.
    - ``monotone_claim``: B <= B' node-wise implies C(B) <= C(B').
    - ``convexity``: for random (B', t, lambda_t) with lambda_t known at
      time t, C(mix) <= lambda C(B) + (1-lambda) C(B') from time t on.
    - ``translation``: adding a time-t payment x_t shifts C by x_t from
      time t on (capital independence is the t=0 case).
    - ``volume_scaling``: C(beta B; alpha) = beta C(B; beta alpha).
    - ``monotone_alpha``: C is nondecreasing in risk aversion.
    - ``gamma_transfer``: C(g B; a) <= g C(B; a) for g in (0,1],
      reversed for g >= 1 (equality at g = 1).
    """
    rng = np.random.default_rng(seed + 2_024)
    if measure is None:
        measure = minimal_entropy_measure(tree, tol=tol).measure
    term = tree.terminal_nodes
    b = claim.values
    rep = PropertyReport(alpha=float(alpha))
    c_base = _surface(tree, b, alpha, measure, tol=tol)

    # bounds
    rep.margins["bounds"] = float(np.min(claim.sup_norm - np.abs(c_base)))

    # monotonicity in the claim
    bump = rng.uniform(0.0, 0.8, size=term.size)
    c_up = _surface(tree, b + bump, alpha, measure, tol=tol)
    rep.margins["monotone_claim"] = float(np.min(c_up - c_base))

    # node-wise convexity with time-measurable weights
    worst = np.inf
    for _ in range(n_convexity):
        other = rng.uniform(-1.0, 1.0, size=term.size) * max(1.0, claim.sup_norm)
        t_mix = int(rng.integers(0, tree.horizon))
        lam_surface = _time_measurable(tree, t_mix, rng)
        lam_term = lam_surface[term]
        c_other = _surface(tree, other, alpha, measure, tol=tol)
        c_mix = _surface(tree, lam_term * b + (1 - lam_term) * other, alpha,
                         measure, tol=tol)
        from_t = tree.times >= t_mix
        gap = (lam_surface * c_base + (1 - lam_surface) * c_other - c_mix)[from_t]
        worst = min(worst, float(np.min(gap)))
    rep.margins["convexity"] = worst

    # translation by a time-t payment
    t_pay = int(rng.integers(0, tree.horizon + 1))
    x = _time_measurable(tree, t_pay, rng, -1.0, 1.0)
    c_shift = _surface(tree, b + x[term], alpha, measure, tol=tol)
    from_t = tree.times >= t_pay
    rep.margins["translation"] = -float(
        np.max(np.abs((c_shift - c_base - x)[from_t])))

    # volume scaling against risk aversion
    beta = float(rng.uniform(0.3, 2.5))
    lhs = _surface(tree, beta * b, alpha, measure, tol=tol)
    rhs = beta * _surface(tree, b, beta * alpha, measure, tol=tol)
    rep.margins["volume_scaling"] = -float(np.max(np.abs(lhs - rhs)))

    # monotone in risk aversion
    alpha_hi = alpha * float(rng.uniform(1.5, 4.0))
    c_hi = _surface(tree, b, alpha_hi, measure, tol=tol)
    rep.margins["monotone_alpha"] = float(np.min(c_hi - c_base))

    # transfer of a fraction of the claim
    g_lo = float(rng.uniform(0.2, 0.9))
    g_hi = float(rng.uniform(1.1, 3.0))
    c_glo = _surface(tree, g_lo * b, alpha, measure, tol=tol)
    c_ghi = _surface(tree, g_hi * b, alpha, measure, tol=tol)
    rep.margins["gamma_transfer"] = float(min(
        np.min(g_lo * c_base - c_glo), np.min(c_ghi - g_hi * c_base)))
    return rep


@dataclass
class BoundsReport:
    """Arbitrage bounds and attainability margins."""

    lower_margin: float
    upper_margin: float
    annihilation_residual: float
    attainable_residual: float

    def all_ok(self, tol: float = DEFAULT.equality) -> bool:
        return (min(self.lower_margin, self.upper_margin,
                    -self.annihilation_residual, -self.attainable_residual) >= -tol)


def arbitrage_bounds_check(tree: EventTree, claim: ClaimSpec, alpha: float,
                           measure: MeasureProcess | None = None, *,
                           seed: int = 0, n_strategies: int = 3,
                           tol: Tolerances = DEFAULT) -> BoundsReport:
    """Check the arbitrage-price sandwich and attainability annihilation.

    The indifference surface must lie between the sub- and
    super-replication surfaces; adding any self-financing gains
    ``G_T(theta)`` to the claim must shift the surface by the running
    gains exactly, and gains alone must price to the running gains.
    """
    from .superrep import superrep_surface  # local import avoids a cycle

    if measure is None:
        measure = minimal_entropy_measure(tree, tol=tol).measure
    c = _surface(tree, claim.values, alpha, measure, tol=tol)
    upper = superrep_surface(tree, claim, tol=tol).values
    lower = -superrep_surface(tree, ClaimSpec(-claim.values), tol=tol).values
    lower_margin = float(np.min(c - lower))
    upper_margin = float(np.min(upper - c))

    rng = np.random.default_rng(seed + 4_242)
    worst_ann = 0.0
    worst_att = 0.0
    for j in range(n_strategies):
        theta = random_strategy(tree, int(rng.integers(0, 2 ** 31)), scale=0.7)
        g = gains(tree, theta)
        c_gain = _surface(tree, g[tree.terminal_nodes], alpha, measure, tol=tol)
        worst_att = max(worst_att, float(np.max(np.abs(c_gain - g))))
        c_shift = _surface(tree, claim.values + g[tree.terminal_nodes], alpha,
                           measure, tol=tol)
        worst_ann = max(worst_ann, float(np.max(np.abs(c_shift - c - g))))
    return BoundsReport(lower_margin, upper_margin, worst_ann, worst_att)


def time_consistency_check(tree: EventTree, claim: ClaimSpec, alpha: float,
                           earlier, later,
                           measure: MeasureProcess | None = None, *,
                           tol: Tolerances = DEFAULT) -> float:
    """Residual of the dynamic-programming consistency of the value map.

    Valuing at cut ``later`` first and feeding those values back as a
    payoff stopped at ``later`` must reproduce the original surface at
    and above cut ``earlier``; returns the max deviation over the nodes
    at or before ``later``.
    """
    later = validate_stopping_rule(tree, later)
    earlier = validate_stopping_rule(tree, earlier)
    if measure is None:
        measure = minimal_entropy_measure(tree, tol=tol).measure
    full = _surface(tree, claim.values, alpha, measure, tol=tol)
    inner = full[later]
    stopped, _, _, _, valid = _primal_sweep(
        tree, measure.edge_prob, claim.values, alpha,
        stop_members=later, stop_values=inner, tol=tol)
    return float(np.max(np.abs((stopped - full)[valid])))


@dataclass
class CertificateReport:
    """Martingale-optimality certificate margins (value units).

    submartingale_margin: min over random strategies and nodes of the
    one-step certificate slack (must be >= -tol).
    optimal_residual: max |slack| at the optimal strategy (= 0 ideally).
    curvature_ratio: slack growth factor under doubling of a hedge
    perturbation (= 4 for a second-order optimum).
    """

    submartingale_margin: float
    optimal_residual: float
    curvature_ratio: float


def _certificate_slack(tree: EventTree, measure: MeasureProcess,
                       values: np.ndarray, theta: np.ndarray, alpha: float):
    """Per-node slack (1/a)(log E[exp(a(C_child - theta dS))] - a C_node)."""
    n = tree.n_nodes
    slack = np.zeros(n)
    logq = np.log(measure.edge_prob)
    for t in range(tree.horizon - 1, -1, -1):
        for _k, (nodes, ch) in tree.groups()[t].items():
            expo = (logq[ch] + alpha * (values[ch]
                    - np.einsum("mkd,md->mk", tree.dprice[ch], theta[nodes])))
            mx = expo.max(axis=1)
            lse = np.log(np.exp(expo - mx[:, None]).sum(axis=1)) + mx
            slack[nodes] = lse / alpha - values[nodes]
    return slack


def optimality_certificate(tree: EventTree, claim: ClaimSpec, alpha: float,
                           result: ValuationResult,
                           measure: MeasureProcess | None = None, *,
                           seed: int = 0, n_strategies: int = 10,
                           perturbation: float = 1e-2,
                           tol: Tolerances = DEFAULT) -> CertificateReport:
    """One-step certificate that the computed surface is the optimum.

    For every strategy theta the process exp(a (C_t - G_t(theta))) is a
    submartingale under the valuation measure, with equality exactly at
    the optimal hedge; node-wise this reads
    ``(1/a) log E[exp(a (C_{t+1} - theta . dS)) | node] >= C_t``.
    Slacks are reported in value units.  A small hedge perturbation must
    grow the slack quadratically; the report carries the measured growth
    factor under doubling.
    """
    if measure is None:
        measure = minimal_entropy_measure(tree, tol=tol).measure
    values = result.surface.values
    alpha = float(alpha)
    rng = np.random.default_rng(seed + 11_000)
    interior = tree.times < tree.horizon

    worst = np.inf
    for _ in range(n_strategies):
        theta = random_strategy(tree, int(rng.integers(0, 2 ** 31)), scale=0.8)
        slack = _certificate_slack(tree, measure, values, theta, alpha)
        worst = min(worst, float(np.min(slack[interior])))

    opt_slack = _certificate_slack(tree, measure, values, result.strategy, alpha)
    optimal_residual = float(np.max(np.abs(opt_slack[interior])))

    bump = np.zeros_like(result.strategy)
    bump[:, 0] = perturbation
    s1 = _certificate_slack(tree, measure, values, result.strategy + bump, alpha)
    s2 = _certificate_slack(tree, measure, values, result.strategy + 2 * bump, alpha)
    tot1 = float(np.max(s1[interior]))
    tot2 = float(np.max(s2[interior]))
    ratio = tot2 / tot1 if tot1 > 0 else np.nan
    return CertificateReport(worst, optimal_residual, ratio)
