"""Two-parameter initial data family for the shooting construction.

The data interpolates, via the smooth cutoff chi1 at scale
|ln(T-t0)| sqrt(T-t0), between a prescribed outer shape (the expected final
profile joined to the far field -ln(1 + a |x|^2)) and a core that equals
psi_alpha plus a two-parameter bump along the first two Hermite directions:

    U(x, t0) = Uhat*(x) (1 - chi1)
             + { s0 + ln[ (A/s0^2)(d0 + d1 . y) chi(16 y, s0) + psi_alpha(y, s0) ] } chi1,

with y = x e^{s0/2}.  In the Q variable the same data reads

    Qbar(y) = (A/s0^2)(d0 + d1 . y) chi(16 y, s0) e^{chi1},

whose extra factor e^{chi1} (constant e on the bump support) does not follow
transparently from transforming the physical formula; both versions are
provided and their gap is measurable via q_from_w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hermite import chi0, chi_cutoff
from .params import SimParams
from .profiles import PhysicalField, psi_alpha

__all__ = [
    "InitialDataSpec",
    "ConstructionError",
    "u_hat_star",
    "chi_1",
    "build_initial_U",
    "build_initial_Q",
    "build_initial_W",
]


class ConstructionError(ValueError):
    """Initial-data formula became invalid (nonpositive logarithm argument)."""


@dataclass
class InitialDataSpec:
    d0: float
    d1: np.ndarray
    params: SimParams
    t0: Optional[float] = None
    blend_lo: float = 0.2
    blend_hi: float = 1.0

    def __post_init__(self) -> None:
        self.d1 = np.atleast_1d(np.asarray(self.d1, dtype=float))
        if self.d1.size != self.params.dim:
            raise ValueError(f"d1 must have length {self.params.dim}")
        if self.t0 is None:
            self.t0 = self.params.t0
        if not (0.0 < self.blend_lo < self.blend_hi <= 1.0):
            raise ValueError("blend interval must satisfy 0 < lo < hi <= 1")
        box = max(abs(self.d0), float(np.max(np.abs(self.d1))))
        if box > 2.0 + 1e-12:
            raise ValueError(f"(d0, d1) must lie in [-2, 2]^(N+1), got extent {box}")

    @property
    def s0(self) -> float:
        return -math.log(self.params.T - self.t0)


def _smoothstep5(t):
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 clamped to [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def u_hat_star(x_norm, spec: InitialDataSpec):
    """Outer data shape: final-profile form near 0, far field beyond 1.

    The two closed forms are joined on [blend_lo, blend_hi] with a quintic
    smoothstep; value and first derivative are continuous at the junctions.
    """
    p = spec.params
    x = np.abs(np.asarray(x_norm, dtype=float))
    if np.any(x <= 0.0):
        raise ConstructionError("u_hat_star has a logarithmic singularity at x = 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    w = _smoothstep5((x - spec.blend_lo) / (spec.blend_hi - spec.blend_lo))
    inner = np.zeros_like(x)
    need = w < 1.0  # there x < blend_hi <= 1, so |ln x| > 0
    inner[need] = np.log((8.0 + 8.0 * p.alpha) * np.abs(np.log(x[need])) / (x[need] ** 2))
    outer = -np.log1p(p.a_far * x * x)
    out = (1.0 - w) * inner + w * outer
    return float(out[0]) if scalar else out


def chi_1(x_norm, t0: float, p: SimParams):
    """Core cutoff chi0(|x| / (|ln(T-t0)| sqrt(T-t0))); requires t0 < T."""
    if not t0 < p.T:
        raise ValueError("t0 must be < T")
    theta0 = p.T - t0
    scale = abs(math.log(theta0)) * math.sqrt(theta0)
    out = chi0(np.abs(np.asarray(x_norm, dtype=float)) / scale)
    return out if np.ndim(out) else float(out)


def _bump_term(y: np.ndarray, spec: InitialDataSpec) -> np.ndarray:
    p = spec.params
    s0 = spec.s0
    d1_dot_y = spec.d1[0] * y if p.dim == 1 else np.zeros_like(y)
    # radial mode (dim > 1) shoots over d0 only; odd modes vanish by symmetry
    return p.A / s0 ** 2 * (spec.d0 + d1_dot_y) * chi_cutoff(16.0 * y, s0, p.K0)


def build_initial_U(spec: InitialDataSpec, x_nodes: np.ndarray) -> PhysicalField:
    """Evaluate the physical initial data formula node-wise at t = t0."""
    p = spec.params
    x = np.asarray(x_nodes, dtype=float)
    s0 = spec.s0
    y = x * math.exp(s0 / 2.0)
    chi1 = chi_1(x, spec.t0, p)
    core_arg = _bump_term(y, spec) + psi_alpha(y, s0, p)
    on_support = chi1 > 0.0
    if np.any(core_arg[on_support] <= 0.0):
        bad = np.where(on_support & (core_arg <= 0.0))[0]
        raise ConstructionError(
            f"nonpositive logarithm argument at x = {x[bad[0]]:.6g} "
            f"(node {bad[0]}): extreme (d0, d1)"
        )
    core = np.where(on_support, s0 + np.log(np.where(on_support, core_arg, 1.0)), 0.0)
    outer = np.zeros_like(x)
    off_plateau = chi1 < 1.0
    x_safe = np.where(x == 0.0, 1.0, np.abs(x))
    outer_vals = u_hat_star(x_safe, spec)
    outer[off_plateau] = outer_vals[off_plateau]
    u = outer * (1.0 - chi1) + core * chi1
    return PhysicalField(x_nodes=x, u_values=u, t=spec.t0)


def build_initial_Q(spec: InitialDataSpec, y_nodes: np.ndarray) -> np.ndarray:
    """Literal Q-variable data (A/s0^2)(d0 + d1.y) chi(16y, s0) e^{chi1}."""
    p = spec.params
    y = np.asarray(y_nodes, dtype=float)
    s0 = spec.s0
    x = y * math.exp(-s0 / 2.0)
    return _bump_term(y, spec) * np.exp(chi_1(x, spec.t0, p))


def build_initial_W(spec: InitialDataSpec, y_nodes: np.ndarray) -> np.ndarray:
    """Similarity-variable initial data W = ln(psi_alpha + Qbar) at s0.

    This is the perturbed-profile form used by the similarity engine; it
    agrees with transforming build_initial_U wherever chi1 == 1.
    """
    y = np.asarray(y_nodes, dtype=float)
    s0 = spec.s0
    arg = psi_alpha(y, s0, spec.params) + build_initial_Q(spec, y)
    if np.any(arg <= 0.0):
        bad = int(np.argmin(arg))
        raise ConstructionError(
            f"nonpositive e^W at y = {y[bad]:.6g}: extreme (d0, d1)"
        )
    return np.log(arg)
