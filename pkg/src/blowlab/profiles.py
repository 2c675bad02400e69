"""Closed-form profiles and coordinate transforms.

Physical variables: U(x, t) solves  dU/dt = Lap U + alpha |grad U|^2 + e^U
and blows up at time T at the origin.  Similarity variables are

    y = (x - a) / sqrt(T - t),   s = -ln(T - t),   W(y, s) = U(x, t) - s.

The intermediate profile in the variable z = y / sqrt(s) is

    phi_alpha(z) = -ln(1 + |z|^2 / (4 + 4 alpha)),

and the regularised comparison profile used for the linearisation is

    psi_alpha(y, s) = exp(N / ((2 + 2 alpha) s)) * exp(phi_alpha(|y|/sqrt(s))).

All functions are pure and vectorised over node arrays; ``y``/``z``/``x``
arguments denote Euclidean norms (signed 1-D coordinates are accepted, the
absolute value is taken internally).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .params import SimParams

__all__ = [
    "DomainError",
    "PhysicalField",
    "SimilarityField",
    "WindowField",
    "phi_alpha",
    "phi_alpha_prime",
    "psi_alpha",
    "psi_alpha_dr",
    "to_similarity",
    "from_similarity",
    "q_from_w",
    "hat_u",
    "t_of_x",
    "final_profile",
]


class DomainError(ValueError):
    """Argument outside the mathematical domain of a profile function."""


# ---------------------------------------------------------------------------
# Field containers


def _check_nodes(nodes: np.ndarray, name: str) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError(f"{name} must be a 1-D array with at least two nodes")
    if not np.all(np.diff(nodes) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    return nodes


@dataclass
class PhysicalField:
    """U sampled on a spatial grid at one physical time t < T."""

    x_nodes: np.ndarray
    u_values: np.ndarray
    t: float

    def __post_init__(self) -> None:
        self.x_nodes = _check_nodes(self.x_nodes, "x_nodes")
        self.u_values = np.asarray(self.u_values, dtype=float)
        if self.u_values.shape != self.x_nodes.shape:
            raise ValueError("u_values must match x_nodes in shape")
        if not np.all(np.isfinite(self.u_values)):
            raise ValueError("u_values must be finite")


@dataclass
class SimilarityField:
    """W sampled on a similarity grid at one similarity time s."""

    y_nodes: np.ndarray
    w_values: np.ndarray
    s: float

    def __post_init__(self) -> None:
        self.y_nodes = _check_nodes(self.y_nodes, "y_nodes")
        self.w_values = np.asarray(self.w_values, dtype=float)
        if self.w_values.shape != self.y_nodes.shape:
            raise ValueError("w_values must match y_nodes in shape")


@dataclass
class WindowField:
    """Rescaled solution around an off-origin anchor point x0 at window time tau."""

    x0: np.ndarray
    xi_nodes: np.ndarray
    values: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if float(np.linalg.norm(self.x0)) == 0.0:
            raise ValueError("window anchor x0 must be nonzero")
        if self.tau >= 1.0:
            raise ValueError("window time tau must be < 1")


# ---------------------------------------------------------------------------
# Profile functions


def phi_alpha(z_norm, alpha: float):
    """Intermediate blowup profile -ln(1 + |z|^2/(4+4 alpha)); requires alpha > -1."""
    if not alpha > -1.0:
        raise DomainError(f"alpha must be > -1, got {alpha}")
    z = np.abs(np.asarray(z_norm, dtype=float))
    out = -np.log1p(z * z / (4.0 + 4.0 * alpha))
    return out if out.ndim else float(out)


def phi_alpha_prime(z_norm, alpha: float):
    """Radial derivative of phi_alpha: -2 c0 z / (1 + c0 z^2), c0 = 1/(4+4 alpha)."""
    if not alpha > -1.0:
        raise DomainError(f"alpha must be > -1, got {alpha}")
    c0 = 1.0 / (4.0 + 4.0 * alpha)
    z = np.abs(np.asarray(z_norm, dtype=float))
    out = -2.0 * c0 * z / (1.0 + c0 * z * z)
    return out if out.ndim else float(out)


def psi_alpha(y_norm, s: float, p: SimParams):
    """Comparison profile e^{N/((2+2a)s)} e^{phi_alpha(|y|/sqrt s)}; requires s > 0."""
    if not s > 0.0:
        raise DomainError(f"similarity time s must be > 0, got {s}")
    y = np.abs(np.asarray(y_norm, dtype=float))
    m = p.dim / ((2.0 + 2.0 * p.alpha) * s)
    den = 1.0 + p.c_profile * y * y / s
    out = math.exp(m) / den
    return out if np.ndim(out) else float(out)


def psi_alpha_dr(y_norm, s: float, p: SimParams):
    """Radial derivative of psi_alpha with respect to |y|."""
    if not s > 0.0:
        raise DomainError(f"similarity time s must be > 0, got {s}")
    y = np.abs(np.asarray(y_norm, dtype=float))
    c0 = p.c_profile
    m = p.dim / ((2.0 + 2.0 * p.alpha) * s)
    den = 1.0 + c0 * y * y / s
    out = -math.exp(m) * 2.0 * c0 * y / (s * den * den)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Coordinate transforms (node-wise, no interpolation)


def to_similarity(phys: PhysicalField, p: SimParams, a: float = 0.0) -> SimilarityField:
    """Map (x, t, U) to (y, s, W) around the point a; requires t < T."""
    if not phys.t < p.T:
        raise DomainError(f"physical time {phys.t} must be < T = {p.T}")
    theta = p.T - phys.t
    s = -math.log(theta)
    y = (phys.x_nodes - a) / math.sqrt(theta)
    w = phys.u_values + math.log(theta)
    return SimilarityField(y_nodes=y, w_values=w, s=s)


def from_similarity(sim: SimilarityField, p: SimParams, a: float = 0.0) -> PhysicalField:
    """Exact inverse of to_similarity on grid nodes."""
    theta = math.exp(-sim.s)
    x = a + sim.y_nodes * math.sqrt(theta)
    u = sim.w_values - math.log(theta)
    return PhysicalField(x_nodes=x, u_values=u, t=p.T - theta)


def q_from_w(sim: SimilarityField, p: SimParams) -> np.ndarray:
    """Node-wise Q = e^W - psi_alpha(y, s)."""
    return np.exp(sim.w_values) - psi_alpha(sim.y_nodes, sim.s, p)


# ---------------------------------------------------------------------------
# Window comparator and the blowup-time map x -> t(x)


def hat_u(tau, p: SimParams):
    """Window comparator -ln((1 - tau) + (K0^2/16)/(4+4 alpha)), increasing in tau."""
    tau = np.asarray(tau, dtype=float)
    cst = p.K0 ** 2 / 16.0 * p.c_profile
    out = -np.log((1.0 - tau) + cst)
    return out if out.ndim else float(out)


_THETA_MIN = 1e-300
_THETA_MAX = math.exp(-1.0)


def t_of_x(x_norm: float, p: SimParams) -> Tuple[float, float]:
    """Solve |x| = (K0/4) sqrt(theta |ln theta|) for theta in (0, 1/e).

    theta |ln theta| is strictly increasing on that branch, so bisection with
    bracket (1e-300, e^-1) is safe.  Returns (t(x), theta(x)) with
    t(x) = T - theta(x), solved to relative tolerance 1e-12.
    """
    x = float(abs(x_norm))
    if x <= 0.0:
        raise DomainError("t_of_x requires x != 0")
    target = (4.0 * x / p.K0) ** 2
    if target >= _THETA_MAX * 1.0:  # theta|ln theta| at theta=1/e equals 1/e
        raise DomainError(
            f"|x| = {x} too large: required theta would reach the non-invertible "
            f"branch (theta >= 1/e)"
        )

    def g(theta: float) -> float:
        return theta * (-math.log(theta))

    lo, hi = _THETA_MIN, _THETA_MAX
    # bisection to relative tolerance 1e-12
    for _ in range(2000):
        mid = math.sqrt(lo * hi) if hi / lo > 10.0 else 0.5 * (lo + hi)
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    theta = 0.5 * (lo + hi)
    return p.T - theta, theta


def final_profile(x_norm, alpha: float):
    """Final blowup profile ln((8+8 alpha)|ln|x|| / |x|^2) for 0 < |x| < 1."""
    if not alpha > -1.0:
        raise DomainError(f"alpha must be > -1, got {alpha}")
    x = np.abs(np.asarray(x_norm, dtype=float))
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("final_profile requires 0 < |x| < 1")
    out = np.log((8.0 + 8.0 * alpha) * np.abs(np.log(x)) / (x * x))
    return out if out.ndim else float(out)
