"""Finite-dimensional mode dynamics and profile-correction ODEs.

Projecting the similarity-variable equation on the lowest Hermite modes
(radially symmetric ansatz W = W0(s) + W2(s)(|y|^2 - 2N)) gives, after
dropping the cubic remainder,

    W0' = W0 + W0^2/2 + N (4 + 8 alpha) W2^2
    W2' =      W0 W2  +    (4 + 4 alpha) W2^2.

The linear W0 term makes generic forward trajectories diverge in finite s:
the system has an expanding direction with unit rate, and any mismatch with
the unique bounded branch is amplified like e^s.  ``integrate_modes``
therefore offers two modes: a plain forward Runge-Kutta integration (which
flags divergence), and a projected mode that relaxes W0 onto its bounded
branch by forward/backward sweeps, realising the decay asymptotics
W2 ~ -1/((4+4 alpha) s), W0 = O(1/s^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .params import SimParams
from .profiles import phi_alpha

__all__ = [
    "ModeTrajectory",
    "rhs_w0w2",
    "integrate_modes",
    "solve_w1_radial",
    "w1_residual",
    "check_mode_odes",
]

_W0_GUARD = 10.0


@dataclass
class ModeTrajectory:
    s_values: np.ndarray
    w0_values: np.ndarray
    w2_values: np.ndarray
    diverged: bool = False

    def __post_init__(self) -> None:
        if not (len(self.s_values) == len(self.w0_values) == len(self.w2_values)):
            raise ValueError("trajectory arrays must have equal length")
        if not np.all(np.diff(self.s_values) > 0):
            raise ValueError("s_values must be strictly increasing")


def rhs_w0w2(w0: float, w2: float, p: SimParams) -> Tuple[float, float]:
    """Right-hand sides of the (W0, W2) system with the cubic remainder dropped."""
    N = p.dim
    f0 = w0 + 0.5 * w0 * w0 + N * (4.0 + 8.0 * p.alpha) * w2 * w2
    f2 = w0 * w2 + (4.0 + 4.0 * p.alpha) * w2 * w2
    return f0, f2


def _sample_grid(s0: float, s_end: float, n: int = 400) -> np.ndarray:
    # geometric spacing resolves both the transient near s0 and the long tail
    return np.geomspace(s0, s_end, n)


def integrate_modes(
    w0_init: float,
    w2_init: float,
    s0: float,
    s_end: float,
    p: SimParams,
    rtol: float = 1e-10,
    project_unstable: bool = False,
    n_out: int = 400,
) -> ModeTrajectory:
    """Integrate the (W0, W2) system from s0 to s_end with RK45.

    Plain mode follows the initial condition literally; if W0 blows up the
    trajectory is truncated and flagged.  With ``project_unstable`` the
    expanding component of W0 is removed: W2 is swept forward and W0 is
    recomputed as the bounded solution of W0' = W0 + F(s) by a backward
    sweep (stable in that direction), iterating until the pair converges.
    The supplied w0_init then only seeds the iteration.
    """
    if not s0 >= 1.0:
        raise ValueError(f"s0 must be >= 1, got {s0}")
    if not s_end > s0:
        raise ValueError("s_end must exceed s0")
    s_out = _sample_grid(s0, s_end, n_out)

    if not project_unstable:
        def rhs(s, u):
            return rhs_w0w2(u[0], u[1], p)

        def guard(s, u):
            return abs(u[0]) - _W0_GUARD

        guard.terminal = True
        guard.direction = 1.0
        sol = solve_ivp(
            rhs, (s0, s_end), [w0_init, w2_init],
            method="RK45", rtol=rtol, atol=1e-14, dense_output=True, events=guard,
        )
        diverged = bool(sol.t_events[0].size) or not sol.success
        s_max = sol.t[-1]
        s_used = s_out[s_out <= s_max]
        if s_used.size < 2:
            s_used = np.array([s0, s_max])
        u = sol.sol(s_used)
        return ModeTrajectory(s_used, u[0], u[1], diverged=diverged)

    # Bounded-branch computation: W2 forward with frozen W0, then W0 backward.
    N = p.dim
    c_grad = N * (4.0 + 8.0 * p.alpha)
    w2_vals = None
    w0_vals = np.zeros_like(s_out)  # first sweep: no W0 feedback
    for _ in range(3):
        def rhs_w2(s, u):
            return [np.interp(s, s_out, w0_vals) * u[0] + (4.0 + 4.0 * p.alpha) * u[0] * u[0]]

        sol2 = solve_ivp(rhs_w2, (s0, s_end), [w2_init], method="RK45",
                         rtol=rtol, atol=1e-16, dense_output=True)
        if not sol2.success:
            raise RuntimeError("W2 sweep failed")
        w2_vals = sol2.sol(s_out)[0]

        def forcing(s):
            w2 = sol2.sol(s)[0]
            w0 = np.interp(s, s_out, w0_vals)
            return 0.5 * w0 * w0 + c_grad * w2 * w2

        def rhs_w0(s, u):
            return [u[0] + forcing(s)]

        # backward sweep: the expanding direction is contracting toward -inf s
        tail = -forcing(s_end)
        sol0 = solve_ivp(rhs_w0, (s_end, s0), [tail], method="RK45",
                         rtol=rtol, atol=1e-16, dense_output=True)
        if not sol0.success:
            raise RuntimeError("W0 sweep failed")
        w0_vals = sol0.sol(s_out)[0]
    return ModeTrajectory(s_out, w0_vals, w2_vals, diverged=False)


# ---------------------------------------------------------------------------
# First-order profile correction


def _w1_inhomogeneous(z: float, p: SimParams) -> float:
    """g(z) = (z/2) w0' + Lap w0 + alpha |w0'|^2 for w0 = phi_alpha."""
    N = p.dim
    c0 = p.c_profile
    den = 1.0 + c0 * z * z
    w0p = -2.0 * c0 * z / den
    w0pp = -2.0 * c0 * (1.0 - c0 * z * z) / (den * den)
    lap = w0pp + ((N - 1) * (-2.0 * c0) / den if z == 0.0 else (N - 1) * w0p / z)
    return 0.5 * z * w0p + lap + p.alpha * w0p * w0p


@dataclass
class W1Solution:
    z: np.ndarray
    w1: np.ndarray
    params: SimParams
    _eval: object

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= self._eps, 2.0 * self.params.dim * self.params.c_profile,
                       self._eval_clipped(z))
        return out if out.ndim else float(out)

    @property
    def _eps(self) -> float:
        return 1e-4

    def _eval_clipped(self, z):
        zc = np.maximum(z, self._eps)
        return self._eval(zc)

    def residual(self, z) -> np.ndarray:
        """Pointwise residual of the correction equation, 5-point derivative.

        The stencil half-width shrinks near z = 0 where the equation is
        evaluated by its regular limit (residual 0 by the choice of w1(0)).
        """
        z = np.atleast_1d(np.asarray(z, dtype=float))
        p = self.params
        c0 = p.c_profile
        out = np.empty_like(z)
        for i, zi in enumerate(z):
            if zi <= 2.0 * self._eps:
                out[i] = 0.0
                continue
            h = min(0.01, zi / 4.0)
            f = self._eval_clipped
            w1p = (-f(zi + 2 * h) + 8.0 * f(zi + h) - 8.0 * f(zi - h) + f(zi - 2 * h)) / (12.0 * h)
            out[i] = 0.5 * zi * w1p - f(zi) / (1.0 + c0 * zi * zi) - _w1_inhomogeneous(zi, p)
        return out


def solve_w1_radial(z_max: float, p: SimParams, n_out: int = 800) -> W1Solution:
    """Integrate the first-order correction w1 outward from z = 0.

    Regularity forces w1(0) = 2 N c0 = N/(2+2 alpha).  The outward equation
    is (z/2) w1' = e^{w0} w1 + g(z); its homogeneous regular solution
    z^2/(1 + c0 z^2) leaves a free quadratic coefficient, normalised here by
    w1''(0) = 0.  Returns a dense solution sampled on [0, z_max].
    """
    if not z_max > 0.0:
        raise ValueError("z_max must be positive")
    N = p.dim
    c0 = p.c_profile
    w1_0 = 2.0 * N * c0

    def rhs(z, u):
        den = 1.0 + c0 * z * z
        return [2.0 / z * (u[0] / den + _w1_inhomogeneous(z, p))]

    eps = 1e-4
    sol = solve_ivp(rhs, (eps, z_max), [w1_0], method="DOP853",
                    rtol=1e-13, atol=1e-15, dense_output=True)
    if not sol.success:
        raise RuntimeError("w1 integration failed")

    def evaluate(z):
        return sol.sol(np.clip(z, eps, z_max))[0]

    z_out = np.linspace(0.0, z_max, n_out)
    w1 = np.where(z_out <= eps, w1_0, evaluate(z_out))
    return W1Solution(z=z_out, w1=w1, params=p, _eval=evaluate)


# ---------------------------------------------------------------------------
# Mode-ODE residual checks on measured decompositions


def check_mode_odes(
    s_values: np.ndarray,
    q0_values: np.ndarray,
    q1_values: np.ndarray,
    q2_values: np.ndarray,
    p: SimParams,
) -> dict:
    """Sup-normalised residuals of the expanding/neutral mode ODEs.

    Derivatives are centred differences on the snapshot grid; returns the
    suprema of s^2 |Q0' - Q0|, s^2 |Q1' - Q1/2| and s^3 |Q2' + 2 Q2/s| / A
    plus the per-snapshot series for trend fits.
    """
    s = np.asarray(s_values, dtype=float)
    if s.size < 3:
        raise ValueError("need at least 3 snapshots for centred differences")
    q0 = np.asarray(q0_values, dtype=float)
    q1 = np.asarray(q1_values, dtype=float).reshape(s.size, -1)
    q2 = np.asarray(q2_values, dtype=float).reshape(s.size, -1)

    def ddt(f):
        return np.gradient(f, s, axis=0, edge_order=2)

    sc = s[1:-1]  # one-sided edge derivatives are less accurate; use interior
    r0 = np.abs(ddt(q0) - q0)[1:-1] * sc ** 2
    r1 = np.max(np.abs(ddt(q1) - 0.5 * q1), axis=1)[1:-1] * sc ** 2
    r2 = np.max(np.abs(ddt(q2) + (2.0 / s)[:, None] * q2), axis=1)[1:-1] * sc ** 3 / p.A
    return {
        "s": sc,
        "res_q0": r0,
        "res_q1": r1,
        "res_q2": r2,
        "sup_q0": float(np.max(r0)),
        "sup_q1": float(np.max(r1)),
        "sup_q2": float(np.max(r2)),
    }
