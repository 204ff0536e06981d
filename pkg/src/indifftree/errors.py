"""Exception types shared across the package."""


class TreeStructureError(ValueError):
    """Malformed event tree: bad indexing, kernel sums, or branching."""


class NoArbitrageViolated(RuntimeError):
    """A node admits one-step arbitrage: zero is outside the relative
    interior of the convex hull of its price increments."""


class NonMartingaleKernel(ValueError):
    """An operation requiring a martingale kernel received one whose
    tilted mean of the increments is not zero."""


class NewtonConvergenceError(RuntimeError):
    """Damped Newton failed to reach tolerance within the iteration cap."""


class StoppingRuleError(ValueError):
    """A node set does not form a valid stopping rule (antichain cut)."""


class ConfigError(ValueError):
    """Invalid run configuration (unknown fields, bad values)."""
