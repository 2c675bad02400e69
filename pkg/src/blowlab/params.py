"""Global parameter set for the blowup laboratory.

All experiments are controlled by a single immutable ``SimParams`` bundle:
the equation parameter ``alpha`` (coefficient of the quadratic gradient
term), the space dimension, the prescribed blowup time ``T``, the initial
similarity time ``s0``, and the constants that shape the trapping set
(``K0``, ``A``, ``eps0``, ``alpha0``, ``delta0``, ``eta0``, ``C0``,
``C0prime``) together with the far-field curvature ``a_far``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class ParamError(ValueError):
    """Raised when a parameter violates its admissible range."""


@dataclass(frozen=True)
class SimParams:
    alpha: float = 1.0      # gradient-term coefficient, must be > -1
    dim: int = 1            # space dimension N (N > 1 only in radial mode)
    T: float = 1.0          # blowup time
    s0: float = 10.0        # initial similarity time, s0 = -ln(T - t0)
    K0: float = 5.0         # blowup-region width constant
    A: float = 20.0         # mode-box amplitude
    eps0: float = 0.5       # inner radius of the frozen region is eps0/4
    alpha0: float = 0.25    # window half-width factor in the intermediate region
    delta0: float = 0.0     # window value tolerance; 0 means "auto" (see delta0_value)
    eta0: float = 0.2       # frozen-region drift tolerance
    C0: float = 50.0        # window gradient constant
    C0prime: float = 2.0    # window Hessian constant
    a_far: float = 1.0      # far field is -ln(1 + a_far |x|^2)

    def __post_init__(self) -> None:
        if not self.alpha > -1.0:
            raise ParamError(f"alpha must be > -1 (profile boundedness), got {self.alpha}")
        if self.dim < 1 or int(self.dim) != self.dim:
            raise ParamError(f"dim must be a positive integer, got {self.dim}")
        if not self.T > 0.0:
            raise ParamError(f"T must be > 0, got {self.T}")
        if not self.s0 >= 1.0:
            raise ParamError(f"s0 must be >= 1, got {self.s0}")
        if not self.K0 >= 1.0:
            raise ParamError(f"K0 must be >= 1, got {self.K0}")
        if not self.A >= 1.0:
            raise ParamError(f"A must be >= 1, got {self.A}")
        for name in ("eps0", "alpha0", "C0", "C0prime", "a_far"):
            if not getattr(self, name) > 0.0:
                raise ParamError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.delta0 < 0.0:
            raise ParamError(f"delta0 must be >= 0 (0 selects the default), got {self.delta0}")
        if self.eta0 < 0.0:
            raise ParamError(f"eta0 must be >= 0, got {self.eta0}")

    # Derived quantities -------------------------------------------------

    @property
    def t0(self) -> float:
        """Initial physical time, T - e^{-s0}."""
        return self.T - math.exp(-self.s0)

    @property
    def theta0(self) -> float:
        """Initial time-to-blowup, e^{-s0}."""
        return math.exp(-self.s0)

    @property
    def c_profile(self) -> float:
        """Curvature constant 1/(4 + 4 alpha) of the blowup profile."""
        return 1.0 / (4.0 + 4.0 * self.alpha)

    @property
    def delta0_value(self) -> float:
        """Window tolerance actually used: delta0, or 0.2|u_hat(1)| when delta0 == 0."""
        if self.delta0 > 0.0:
            return self.delta0
        u_hat_1 = -math.log(self.K0 ** 2 / 16.0 * self.c_profile)
        return 0.2 * abs(u_hat_1)

    def with_(self, **kwargs) -> "SimParams":
        return replace(self, **kwargs)
