"""Weighted-L2 spectral machinery for the Hermite operator Lap - y/2.grad + 1.

The operator is self-adjoint in L2 with Gaussian weight
rho(y) = (4 pi)^{-N/2} exp(-|y|^2/4); its eigenfunctions in 1-D are the
dilated Hermite polynomials h_n with <h_n, h_m>_rho = 2^n n! delta_{nm},
eigenvalue 1 - n/2.  This module provides the polynomials, the weight,
quadrature-backed inner products, the smooth cutoff localising the blowup
region, and the full mode decomposition of a grid function.

Dimensions N > 1 are supported for radially symmetric data only: integrals
over R^N reduce to 1-D radial integrals with the surface-measure factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .params import SimParams

__all__ = [
    "hermite_poly",
    "rho_weight",
    "QuadGrid",
    "make_quad_grid",
    "InnerProduct",
    "inner_rho",
    "gauss_hermite_crosscheck",
    "chi_cutoff",
    "smooth_bump",
    "ModeDecomposition",
    "decompose",
    "grad_perp",
]


def hermite_poly(n: int, y):
    """Dilated Hermite polynomial h_n (h_0 = 1, h_1 = y, h_2 = y^2 - 2).

    Uses the stable recurrence h_{n+1} = y h_n - 2 n h_{n-1}, equivalent to
    the explicit alternating-sum formula over monomials y^{n-2i}.
    """
    if n < 0 or int(n) != n:
        raise ValueError(f"polynomial degree must be a nonnegative integer, got {n}")
    y = np.asarray(y, dtype=float)
    h_prev = np.ones_like(y)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = y.copy()
    for k in range(1, n):
        h, h_prev = y * h - 2.0 * k * h_prev, h
    return h if h.ndim else float(h)


def hermite_norm_sq(n: int) -> float:
    """Squared weighted norm <h_n, h_n>_rho = 2^n n! in one dimension."""
    return float(2.0 ** n * math.factorial(n))


def rho_weight(y_norm, dim: int = 1):
    """Gaussian weight (4 pi)^{-N/2} exp(-|y|^2/4); integrates to 1 over R^N."""
    y = np.abs(np.asarray(y_norm, dtype=float))
    out = (4.0 * math.pi) ** (-dim / 2.0) * np.exp(-y * y / 4.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Quadrature grids


@dataclass
class QuadGrid:
    """Nodes plus trapezoid weights for integrals against rho over R^N.

    For dim == 1 the nodes span the full line; for dim >= 2 they are radii
    on [0, y_max] and the weights include the sphere-surface factor, so that
    radially symmetric integrands integrate correctly over R^N.
    """

    y: np.ndarray            # node coordinates (signed in 1-D, radii otherwise)
    dim: int
    radial: bool
    rho_w: np.ndarray = field(repr=False)   # weights for sum(f * rho_w) ~ int f rho dy

    @property
    def r(self) -> np.ndarray:
        """Euclidean norms of the nodes."""
        return np.abs(self.y)

    def integrate_rho(self, f: np.ndarray) -> float:
        return float(np.dot(np.asarray(f, dtype=float), self.rho_w))


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def make_quad_grid(y_max: float, dy: float, dim: int = 1) -> QuadGrid:
    """Uniform grid with rho-quadrature weights (full line in 1-D, radial else)."""
    if dim == 1:
        n = int(round(y_max / dy))
        y = np.arange(-n, n + 1) * dy
        w = _trapezoid_weights(y) * rho_weight(y, 1)
        return QuadGrid(y=y, dim=1, radial=False, rho_w=w)
    n = int(round(y_max / dy))
    r = np.arange(0, n + 1) * dy
    surf = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    w = _trapezoid_weights(r) * rho_weight(r, dim) * surf * r ** (dim - 1)
    return QuadGrid(y=r, dim=dim, radial=True, rho_w=w)


@dataclass
class InnerProduct:
    value: float
    tol_estimate: float
    coarse_grid: bool


def inner_rho(f: np.ndarray, g: np.ndarray, grid: QuadGrid) -> InnerProduct:
    """Composite-trapezoid approximation of the weighted inner product <f, g>_rho.

    The tolerance estimate combines the un-integrated Gaussian tail beyond the
    last node with a coarse/fine Richardson difference; ``coarse_grid`` flags
    grids whose estimate exceeds 1e-10 relative to the result scale.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    prod = f * g
    value = grid.integrate_rho(prod)
    # tail estimate: endpoint integrand (incl. weight density) times unit decay length
    dy0 = max(abs(grid.y[1] - grid.y[0]), 1e-300)
    dy1 = max(abs(grid.y[-1] - grid.y[-2]), 1e-300)
    tail = abs(prod[0] * grid.rho_w[0]) / dy0 + abs(prod[-1] * grid.rho_w[-1]) / dy1
    # Richardson: compare with every-other-node trapezoid of the same integrand
    sub = slice(None, None, 2)
    dens = grid.rho_w / np.maximum(_trapezoid_weights(grid.y), 1e-300)
    coarse = float(np.dot(prod[sub] * dens[sub], _trapezoid_weights(grid.y[sub])))
    richardson = abs(coarse - value) / 3.0
    tol = tail + richardson
    scale = max(abs(value), 1.0)
    return InnerProduct(value=value, tol_estimate=tol, coarse_grid=tol > 1e-10 * scale)


def gauss_hermite_crosscheck(grid: QuadGrid, n_nodes: int = 200, degree: int = 4) -> float:
    """Max deviation of trapezoid h_n-orthogonality from a Gauss-Hermite rule.

    With y = 2u the weight rho dy becomes pi^{-1/2} e^{-u^2} du, so a standard
    Gauss-Hermite rule applies.  Only meaningful for 1-D grids.
    """
    if grid.dim != 1:
        raise ValueError("Gauss-Hermite cross-check applies to 1-D grids")
    u, w = np.polynomial.hermite.hermgauss(n_nodes)
    worst = 0.0
    for n in range(degree + 1):
        for m in range(n, degree + 1):
            exact = float(np.dot(w, hermite_poly(n, 2 * u) * hermite_poly(m, 2 * u))) / math.sqrt(math.pi)
            approx = grid.integrate_rho(hermite_poly(n, grid.y) * hermite_poly(m, grid.y))
            worst = max(worst, abs(exact - approx))
    return worst


# ---------------------------------------------------------------------------
# Smooth cutoff


def smooth_bump(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    a = np.exp(-1.0 / ti)
    b = np.exp(-1.0 / (1.0 - ti))
    out[inside] = a / (a + b)
    out[t >= 1.0] = 1.0
    return out if out.ndim else float(out)


def chi0(r):
    """Radial plateau cutoff: 1 on [0, 1], 0 on [2, inf), smooth in between."""
    return smooth_bump(2.0 - np.asarray(r, dtype=float))


def chi_cutoff(y_norm, s: float, K0: float):
    """Blowup-region cutoff chi0(|y| / (K0 sqrt(s))); requires s > 0."""
    if not s > 0.0:
        raise ValueError(f"s must be > 0, got {s}")
    r = np.abs(np.asarray(y_norm, dtype=float)) / (K0 * math.sqrt(s))
    out = chi0(r)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Mode decomposition


@dataclass
class ModeDecomposition:
    """Coordinates of Q relative to the Hermite basis on the blowup region.

    q0, q1, q2 are the expanding/neutral mode amplitudes of Q_b = chi Q;
    q_minus and q_perp are the grid remainders of Q_b after removing modes
    up to degree 2 (resp. degree 1); q_e = (1 - chi) Q is the outer part;
    grad_q_perp is the degree->=2 part of chi * grad Q.  The node-wise
    identity  q0 + q1.y + y^T q2 y - 2 tr q2 + q_minus + q_e == Q  is exact.
    """

    s: float
    grid: QuadGrid
    q0: float
    q1: np.ndarray
    q2: np.ndarray
    q_minus: np.ndarray
    q_perp: np.ndarray
    q_e: np.ndarray
    grad_q_perp: Optional[np.ndarray] = None

    def poly_part(self) -> np.ndarray:
        y = self.grid.y
        if self.grid.radial:
            q2_rad = float(self.q2[0, 0])
            return self.q0 + q2_rad * (y * y - 2.0 * self.grid.dim)
        return self.q0 + float(self.q1[0]) * y + float(self.q2[0, 0]) * (y * y - 2.0)

    def reconstruct(self) -> np.ndarray:
        return self.poly_part() + self.q_minus + self.q_e


def _central_gradient(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.gradient(f, y, edge_order=2)


def decompose(
    Q: np.ndarray,
    s: float,
    p: SimParams,
    grid: QuadGrid,
    grad_Q: Optional[np.ndarray] = None,
) -> ModeDecomposition:
    """Split Q into expanding, neutral, decaying and outer components.

    The grid must cover |y| <= 2 K0 sqrt(s) so that the cutoff support is
    resolved.  ``grad_Q`` may be supplied by the solver; otherwise a centred
    difference of Q is used for the gradient projection.
    """
    Q = np.asarray(Q, dtype=float)
    if grid.r[-1] < 2.0 * p.K0 * math.sqrt(s):
        raise ValueError(
            f"grid reaches |y| = {grid.r[-1]:.3g} < 2 K0 sqrt(s) = "
            f"{2.0 * p.K0 * math.sqrt(s):.3g}: cutoff support not covered"
        )
    chi = chi_cutoff(grid.y, s, p.K0)
    Qb = chi * Q
    Qe = Q - Qb

    N = grid.dim
    q0 = grid.integrate_rho(Qb)
    if grid.radial:
        q1 = np.zeros(N)
        q2_rad = grid.integrate_rho(Qb * (grid.y ** 2 / 8.0 - N / 4.0)) / N
        q2 = q2_rad * np.eye(N)
        poly2 = q2_rad * (grid.y ** 2 - 2.0 * N)
        poly1 = np.zeros_like(grid.y)
    else:
        q1_val = grid.integrate_rho(Qb * grid.y) / hermite_norm_sq(1)
        q1 = np.array([q1_val])
        q2_val = grid.integrate_rho(Qb * (grid.y ** 2 / 8.0 - 0.25))
        q2 = np.array([[q2_val]])
        poly1 = q1_val * grid.y
        poly2 = q2_val * (grid.y ** 2 - 2.0)

    q_minus = Qb - (q0 + poly1 + poly2)
    q_perp = Qb - (q0 + poly1)

    if grad_Q is None:
        grad_Q = _central_gradient(Q, grid.y)
    gperp = grad_perp(grad_Q, s, p, grid)

    return ModeDecomposition(
        s=s, grid=grid, q0=q0, q1=q1, q2=q2,
        q_minus=q_minus, q_perp=q_perp, q_e=Qe, grad_q_perp=gperp,
    )


def grad_perp(grad_Q: np.ndarray, s: float, p: SimParams, grid: QuadGrid) -> np.ndarray:
    """Degree->=2 part of chi * grad Q: remove its P0 and P1 projections."""
    g = np.asarray(grad_Q, dtype=float)
    chi = chi_cutoff(grid.y, s, p.K0)
    gb = chi * g
    if grid.radial:
        # components of a radial gradient field are g(r) y_i / r: their P0
        # vanishes by oddness and P1 removes the part proportional to y
        c1 = grid.integrate_rho(gb * grid.y) / (2.0 * grid.dim)
        return gb - c1 * grid.y
    g0 = grid.integrate_rho(gb)
    g1 = grid.integrate_rho(gb * grid.y) / hermite_norm_sq(1)
    return gb - g0 - g1 * grid.y
