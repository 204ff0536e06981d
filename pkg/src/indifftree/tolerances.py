"""Central numerical tolerances.

Every check in the package pulls its default from here so the CLI can
override them in one place.
"""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    """Default tolerances used across the engine.

    constraint : martingale / feasibility residuals (absolute)
    equality   : agreement between two exact routes to the same number
    newton     : one-step Newton solves (constraint or gradient norm)
    rate       : relative tolerance on fitted convergence rates
    prob_floor : smallest admissible one-step probability
    kernel_sum : deviation of a kernel's total mass from one
    """

    constraint: float = 1e-10
    equality: float = 1e-9
    newton: float = 1e-12
    rate: float = 0.10
    prob_floor: float = 1e-10
    kernel_sum: float = 1e-12

    def with_overrides(self, **kwargs) -> "Tolerances":
        return replace(self, **kwargs)


DEFAULT = Tolerances()

NEWTON_MAX_ITER = 100
