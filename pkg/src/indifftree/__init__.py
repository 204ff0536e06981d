"""Exact exponential-utility indifference valuation on finite event trees.

The package prices bounded claims in incomplete discrete markets by
entropic dynamic programming, verifies the dual entropy route against the
primal one node-by-node, decomposes value processes into hedge, orthogonal
and compensator parts, superhedges via martingale-kernel vertex
enumeration, and measures the small- and large-risk-aversion limits.
"""

from .asymptotics import (SlopeFit, SweepReport, bracket_weights,
                          claim_projection, compensator_identity_residual,
                          continuity_in_B, fit_loglog_slope,
                          large_alpha_sweep, lipschitz_in_alpha,
                          small_alpha_sweep, strategy_convergence_small_alpha,
                          weighted_norm_identity)
from .bsde import (BmoReport, BsdeSolution, ComparisonReport, bmo_norms,
                   bsde_scheme, comparison_check, exact_decomposition,
                   gkw_step, lattice_exact_value, lattice_scheme_value,
                   lattice_self_convergence, orthogonal_exponential)
from .claims import claim_from_expression, parse_payoff
from .errors import (ConfigError, NewtonConvergenceError,
                     NoArbitrageViolated, NonMartingaleKernel,
                     StoppingRuleError, TreeStructureError)
from .lattice import (BasisRiskLattice, ClaimSpec, EventTree,
                      NoArbitrageReport, basis_risk_lattice, binomial_tree,
                      build_tree, gains, horizon_rule, is_stopping_rule,
                      random_claim, random_stopping_rule, random_strategy,
                      random_tree, tree_from_nodes, trinomial_tree,
                      validate_no_arbitrage)
from .measures import (EntropyResult, MeasureProcess, claim_tilted_measure,
                       conditional_expectation, density_process,
                       expected_remaining, minimal_entropy_measure,
                       node_probabilities, relative_entropy,
                       verify_entropy_structure)
from .superrep import (SuperrepSurface, martingale_vertices,
                       optional_decomposition, subrep_surface,
                       superrep_surface)
from .tolerances import DEFAULT, Tolerances
from .valuation import (BoundsReport, CertificateReport, DualResult,
                        PropertyReport, ValuationResult, ValuationSurface,
                        arbitrage_bounds_check, dual_surface,
                        indifference_surface, one_step_primal,
                        optimality_certificate, property_checks,
                        time_consistency_check)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
