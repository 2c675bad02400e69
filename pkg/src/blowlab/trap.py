"""Membership tests for the shrinking trapping set.

Three families of constraints confine the constructed solution:

* D1 (blowup region, similarity variables): the mode amplitudes of
  Q = e^W - psi_alpha sit in shrinking boxes, |Q0|, |Q1| <= A/s^2,
  |Q2| <= A^2 ln s / s^2, weighted cubic bounds on the remainder and the
  gradient remainder, and |Q_e| <= A^2/sqrt(s) outside.
* D2 (intermediate region): around every anchor |x| between the blowup
  scale and eps0, the rescaled window tracks the flat-blowup comparator
  u_hat(tau) in value, gradient and Hessian.
* D3 (frozen region, |x| >= eps0/4): drift of U and grad U from their
  initial values stays below eta0.

Every check returns signed margins (positive = satisfied); `in_set` is the
conjunction, and `first_violation` the first failed constraint in the fixed
order below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .hermite import ModeDecomposition
from .params import SimParams
from .profiles import hat_u, t_of_x

__all__ = [
    "CONSTRAINT_ORDER",
    "TrapReport",
    "check_D1",
    "check_D2",
    "check_D3",
    "in_hat_VA",
    "check_all",
]

CONSTRAINT_ORDER: Tuple[str, ...] = (
    "Q0", "Q1", "Q2", "Qminus", "gradQperp", "Qe",
    "D2_value", "D2_grad", "D2_hess", "D3_value", "D3_grad",
)


@dataclass
class TrapReport:
    margins: Dict[str, float] = field(default_factory=dict)

    @property
    def in_set(self) -> bool:
        return all(m >= 0.0 for m in self.margins.values())

    @property
    def first_violation(self) -> Optional[str]:
        for name in CONSTRAINT_ORDER:
            if self.margins.get(name, 0.0) < 0.0:
                return name
        return None

    def merged(self, other: "TrapReport") -> "TrapReport":
        out = dict(self.margins)
        out.update(other.margins)
        return TrapReport(margins=out)


def check_D1(md: ModeDecomposition, s: float, p: SimParams) -> TrapReport:
    """Signed margins of the six similarity-variable mode constraints.

    Weighted sup norms |.|/(1+|y|^3) are taken over grid nodes with
    |y| <= 2 K0 sqrt(s); requires s >= e so that ln s >= 1.
    """
    if not s >= math.e:
        raise ValueError(f"check_D1 requires s >= e, got {s}")
    A = p.A
    box01 = A / s ** 2
    box2 = A * A * math.log(s) / s ** 2
    box_e = A * A / math.sqrt(s)

    r = md.grid.r
    inside = r <= 2.0 * p.K0 * math.sqrt(s)
    outside = r >= p.K0 * math.sqrt(s)
    weight = 1.0 + r ** 3

    margins = {
        "Q0": box01 - abs(md.q0),
        "Q1": box01 - float(np.max(np.abs(md.q1))) if md.q1.size else box01,
        "Q2": box2 - float(np.max(np.abs(md.q2))),
        "Qminus": box01 - float(np.max(np.abs(md.q_minus[inside]) / weight[inside])),
        "Qe": box_e - (float(np.max(np.abs(md.q_e[outside]))) if np.any(outside) else 0.0),
    }
    if md.grad_q_perp is not None:
        margins["gradQperp"] = box01 - float(
            np.max(np.abs(md.grad_q_perp[inside]) / weight[inside]))
    return TrapReport(margins=margins)


def in_hat_VA(q0: float, q1: np.ndarray, s: float, A: float) -> Tuple[bool, Dict[str, float]]:
    """Componentwise box test (Q0, Q1) in [-A/s^2, A/s^2]^{N+1} with margins."""
    if not s > 0.0:
        raise ValueError("s must be positive")
    box = A / s ** 2
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    margins = {"Q0": box - abs(q0), "Q1": box - float(np.max(np.abs(q1)))}
    return all(m >= 0.0 for m in margins.values()), margins


def _halton(n: int, base: int = 2) -> np.ndarray:
    """Deterministic low-discrepancy sequence in (0, 1)."""
    out = np.zeros(n)
    for i in range(n):
        f, r, x = 1.0, 0.0, i + 1
        while x > 0:
            f /= base
            r += f * (x % base)
            x //= base
        out[i] = r
    return out


def check_D2(traj, t: float, p: SimParams,
             n_x: int = 24, n_xi: int = 16) -> TrapReport:
    """Worst signed margins of the intermediate-region window bounds at time t.

    Anchors x are placed log-uniformly (deterministic Halton offsets) in
    [(K0/4) sqrt((T-t)|ln(T-t)|), eps0]; at each anchor the window is read
    at its own time tau(x, t) = (t - t(x))/theta(x) and offsets
    |xi| <= alpha0 sqrt(|ln theta(x)|).
    """
    theta_t = p.T - t
    if theta_t <= 0.0:
        raise ValueError("t must be < T")
    x_lo = (p.K0 / 4.0) * math.sqrt(theta_t * abs(math.log(theta_t)))
    x_hi = p.eps0
    if x_lo >= x_hi:
        raise ValueError("blowup scale already exceeds eps0; nothing to sample")
    u = _halton(n_x, 2)
    xs = x_lo * (x_hi / x_lo) ** ((np.arange(n_x) + u) / n_x)

    delta0 = p.delta0_value
    worst_val = math.inf
    worst_grad = math.inf
    worst_hess = math.inf
    for x0 in xs:
        _, theta = t_of_x(x0, p)
        tau = (t - (p.T - theta)) / theta
        xi_max = p.alpha0 * math.sqrt(abs(math.log(theta)))
        xi = np.linspace(-xi_max, xi_max, n_xi)
        vals, grads, hesses = traj.window_values(x0, xi, tau)
        dev = float(np.max(np.abs(vals - hat_u(tau, p))))
        worst_val = min(worst_val, delta0 - dev)
        gbound = p.C0 / math.sqrt(abs(math.log(theta)))
        worst_grad = min(worst_grad, gbound - float(np.max(np.abs(grads))))
        worst_hess = min(worst_hess, p.C0prime - float(np.max(np.abs(hesses))))
    return TrapReport(margins={
        "D2_value": worst_val, "D2_grad": worst_grad, "D2_hess": worst_hess,
    })


def check_D3(U_t: np.ndarray, U_t0: np.ndarray, x_nodes: np.ndarray,
             p: SimParams) -> TrapReport:
    """Frozen-region drift margins: sup over |x| >= eps0/4 of value/gradient drift."""
    x = np.asarray(x_nodes, dtype=float)
    far = np.abs(x) >= p.eps0 / 4.0
    if not np.any(far):
        raise ValueError("grid does not reach the frozen region")
    diff = np.asarray(U_t, dtype=float) - np.asarray(U_t0, dtype=float)
    grad_diff = np.gradient(diff, x, edge_order=2)
    return TrapReport(margins={
        "D3_value": p.eta0 - float(np.max(np.abs(diff[far]))),
        "D3_grad": p.eta0 - float(np.max(np.abs(grad_diff[far]))),
    })


def check_all(p: SimParams,
              md: Optional[ModeDecomposition] = None,
              s: Optional[float] = None,
              traj=None,
              t: Optional[float] = None,
              U_t: Optional[np.ndarray] = None,
              U_t0: Optional[np.ndarray] = None,
              x_nodes: Optional[np.ndarray] = None) -> TrapReport:
    """Conjunction of whichever region checks the supplied state supports."""
    report = TrapReport()
    if md is not None and s is not None:
        report = report.merged(check_D1(md, s, p))
    if traj is not None and t is not None:
        report = report.merged(check_D2(traj, t, p))
    if U_t is not None and U_t0 is not None and x_nodes is not None:
        report = report.merged(check_D3(U_t, U_t0, x_nodes, p))
    if not report.margins:
        raise ValueError("check_all needs at least one region's state")
    return report
