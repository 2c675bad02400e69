"""PDE engine in similarity variables.

Evolves either W (advective form, dW/ds + y/2.grad W = Lap W + alpha
|grad W|^2 + e^W - 1) or the linearised difference Q = e^W - psi_alpha
(dQ/ds = (L + V) Q + Q^2 + G(Q) + R) on a truncated symmetric grid.

Discretisation: second-order centred Laplacian taken implicitly
(Crank-Nicolson), second-order upwind-biased drift taken implicitly
(backward Euler, unconditionally stable so the outward characteristics
impose no step restriction), reaction and gradient nonlinearities explicit
with the step capped at cfl_safety / max e^W.  The outer boundary is
outflow: one-sided stencils, equivalent to quadratic extrapolation ghosts,
so no Dirichlet data is imposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.linalg import solve_banded

from .hermite import ModeDecomposition, QuadGrid, decompose, make_quad_grid
from .params import SimParams
from .profiles import phi_alpha, phi_alpha_prime, psi_alpha, psi_alpha_dr, SimilarityField

__all__ = [
    "SolverConfig",
    "SolverBlowup",
    "SolverFailure",
    "apply_L",
    "potential_V",
    "nonlinear_G",
    "residual_R",
    "SimSnapshot",
    "SimTrajectory",
    "SimilaritySolver",
    "evolve",
    "profile_error",
]


class SolverBlowup(RuntimeError):
    """Solution exceeded the blowup guard; carries the similarity time."""

    def __init__(self, s: float, message: str = "blowup guard exceeded"):
        super().__init__(f"{message} at s = {s:.6f}")
        self.s = s


class SolverFailure(RuntimeError):
    """Numerical failure (NaN / positivity loss); carries the similarity time."""

    def __init__(self, s: float, message: str):
        super().__init__(f"{message} at s = {s:.6f}")
        self.s = s


@dataclass(frozen=True)
class SolverConfig:
    y_max: float = 0.0            # 0 means auto: 1.1 * 2 K0 sqrt(s_end)
    dy: float = 0.05
    ds: float = 0.01
    cfl_safety: float = 0.25
    scheme: str = "semi_implicit_CN"     # or "explicit_RK2"
    formulation: str = "W_equation"      # or "Q_equation"
    blowup_guard: float = 50.0

    def __post_init__(self) -> None:
        if self.dy > 0.05 or self.dy <= 0.0:
            raise ValueError(f"dy must lie in (0, 0.05], got {self.dy}")
        if self.ds <= 0.0 or not (0.0 < self.cfl_safety <= 1.0):
            raise ValueError("ds must be > 0 and cfl_safety in (0, 1]")
        if self.scheme not in ("semi_implicit_CN", "explicit_RK2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.formulation not in ("W_equation", "Q_equation"):
            raise ValueError(f"unknown formulation {self.formulation!r}")

    def resolved_y_max(self, p: SimParams, s_end: float) -> float:
        auto = 1.1 * 2.0 * p.K0 * math.sqrt(s_end)
        if self.y_max <= 0.0:
            return auto
        if self.y_max < auto:
            raise ValueError(
                f"y_max = {self.y_max} too small to resolve the cutoff support "
                f"(need >= {auto:.2f} for s_end = {s_end})"
            )
        return self.y_max


# ---------------------------------------------------------------------------
# Banded operators.  An operator is a dict {offset: diag} with
# A[i, i + offset] = diag[i]; entries outside the matrix are ignored.

Operator = Dict[int, np.ndarray]


def _op_matvec(op: Operator, f: np.ndarray) -> np.ndarray:
    n = f.size
    out = np.zeros_like(f)
    for k, d in op.items():
        if k >= 0:
            out[: n - k] += d[: n - k] * f[k:]
        else:
            out[-k:] += d[-k:] * f[: n + k]
    return out


def _op_axpy(target: Operator, op: Operator, scale: float) -> None:
    for k, d in op.items():
        if k in target:
            target[k] = target[k] + scale * d
        else:
            target[k] = scale * d


def _op_to_banded(op: Operator, n: int, l: int = 2, u: int = 2) -> np.ndarray:
    ab = np.zeros((l + u + 1, n))
    for k, d in op.items():
        if k > u or -k > l:
            raise ValueError(f"offset {k} outside bandwidth")
        if k >= 0:
            ab[u - k, k:] = d[: n - k]
        else:
            ab[u - k, : n + k] = d[-k:]
    return ab


def _laplacian_op(y: np.ndarray, dim: int, radial: bool) -> Operator:
    n = y.size
    dy = y[1] - y[0]
    lo2 = np.zeros(n)
    lo1 = np.full(n, 1.0 / dy ** 2)
    d0 = np.full(n, -2.0 / dy ** 2)
    up1 = np.full(n, 1.0 / dy ** 2)
    up2 = np.zeros(n)

    if radial and dim > 1:
        # second term (N-1) f'/r with centred gradient; L'Hopital at r = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            c = (dim - 1) / np.where(y == 0.0, np.inf, y)
        lo1 -= c / (2.0 * dy)
        up1 += c / (2.0 * dy)
        # r = 0 row: Lap f = N f'' with symmetric ghost f(-dr) = f(dr)
        d0[0] = -2.0 * dim / dy ** 2
        up1[0] = 2.0 * dim / dy ** 2
        lo1[0] = 0.0
        # outer boundary: one-sided second difference + one-sided gradient
        d0[-1] = 1.0 / dy ** 2 + c[-1] * 1.5 / dy
        lo1[-1] = -2.0 / dy ** 2 - c[-1] * 2.0 / dy
        lo2[-1] = 1.0 / dy ** 2 + c[-1] * 0.5 / dy
        up1[-1] = 0.0
    else:
        # one-sided second differences at both ends (quadratic extrapolation)
        d0[0] = 1.0 / dy ** 2
        up1[0] = -2.0 / dy ** 2
        up2[0] = 1.0 / dy ** 2
        lo1[0] = 0.0
        d0[-1] = 1.0 / dy ** 2
        lo1[-1] = -2.0 / dy ** 2
        lo2[-1] = 1.0 / dy ** 2
        up1[-1] = 0.0
    return {-2: lo2, -1: lo1, 0: d0, 1: up1, 2: up2}


def _drift_op(y: np.ndarray, radial: bool) -> Operator:
    """Drift term -(y/2) d/dy with second-order upwind-biased differences."""
    n = y.size
    dy = y[1] - y[0]
    a = 0.5 * y  # advective velocity (outward)
    lo2 = np.zeros(n)
    lo1 = np.zeros(n)
    d0 = np.zeros(n)
    up1 = np.zeros(n)
    up2 = np.zeros(n)

    pos = a > 0.0
    neg = a < 0.0
    # velocity > 0: backward stencil (3 f_i - 4 f_{i-1} + f_{i-2}) / (2 dy)
    d0[pos] += -a[pos] * 1.5 / dy
    lo1[pos] += a[pos] * 2.0 / dy
    lo2[pos] += -a[pos] * 0.5 / dy
    # velocity < 0: forward stencil (-3 f_i + 4 f_{i+1} - f_{i+2}) / (2 dy)
    d0[neg] += a[neg] * 1.5 / dy
    up1[neg] += -a[neg] * 2.0 / dy
    up2[neg] += a[neg] * 0.5 / dy

    if radial and n >= 2 and a[1] > 0.0:
        # first interior radial node lacks i-2: first-order backward there
        d0[1] = -a[1] / dy
        lo1[1] = a[1] / dy
        lo2[1] = 0.0
    return {-2: lo2, -1: lo1, 0: d0, 1: up1, 2: up2}


def apply_L(f: np.ndarray, grid: QuadGrid) -> np.ndarray:
    """Discrete Hermite operator Lap f - y/2 . grad f + f on the grid."""
    f = np.asarray(f, dtype=float)
    lap = _op_matvec(_laplacian_op(grid.y, grid.dim, grid.radial), f)
    drift = _op_matvec(_drift_op(grid.y, grid.radial), f)
    return lap + drift + f


# ---------------------------------------------------------------------------
# Pointwise ingredients of the Q-equation


def potential_V(y_norm, s: float, p: SimParams):
    """Linearisation potential V = 2 (psi_alpha - 1), valued in (-2, 2(e^m - 1)]."""
    out = 2.0 * (psi_alpha(y_norm, s, p) - 1.0)
    return out


def nonlinear_G(q, grad_q, y_norm, s: float, p: SimParams):
    """Gradient nonlinearity (alpha-1)[|grad Q + grad psi|^2/(Q+psi) - |grad psi|^2/psi]."""
    q = np.asarray(q, dtype=float)
    psi = psi_alpha(y_norm, s, p)
    dpsi = psi_alpha_dr(y_norm, s, p) * np.sign(np.asarray(y_norm, dtype=float))
    den = q + psi
    if np.any(den <= 0.0):
        raise SolverFailure(s, "Q + psi_alpha lost positivity")
    g = np.asarray(grad_q, dtype=float) + dpsi
    out = (p.alpha - 1.0) * (g * g / den - dpsi * dpsi / psi)
    return out if np.ndim(out) else float(out)


def residual_R(y_norm, s: float, p: SimParams):
    """Profile-generation error R of the comparison profile psi_alpha.

    Analytic form with the O(1) cancellations performed exactly:
        R = psi [ m/s + expm1(m)/D - c0 r^2/(s^2 D) - 2 c0 N/(s D)
                  + c0 r^2/(s^2 D^2) ],
    with m = N/((2+2 alpha) s), c0 = 1/(4+4 alpha), D = 1 + c0 r^2 / s.
    Every bracket term is O(1/s) uniformly in y, so s sup_y |R| stays bounded.
    """
    if not s > 0.0:
        raise ValueError(f"s must be > 0, got {s}")
    r2 = np.square(np.abs(np.asarray(y_norm, dtype=float)))
    N = p.dim
    c0 = p.c_profile
    m = N / ((2.0 + 2.0 * p.alpha) * s)
    D = 1.0 + c0 * r2 / s
    psi = math.exp(m) / D
    bracket = (
        m / s
        + math.expm1(m) / D
        - c0 * r2 / (s * s * D)
        - 2.0 * c0 * N / (s * D)
        + c0 * r2 / (s * s * D * D)
    )
    out = psi * bracket
    return out if np.ndim(out) else float(out)


def residual_R_fd(y_norm, s: float, p: SimParams, h_y: float = 1e-4, h_s: float = 1e-5):
    """Finite-difference evaluation of R from psi_alpha (cross-check oracle)."""
    y = np.asarray(y_norm, dtype=float)
    N = p.dim

    def psi(yv, sv):
        return psi_alpha(yv, sv, p)

    dpsi_ds = (psi(y, s + h_s) - psi(y, s - h_s)) / (2.0 * h_s)
    dpsi_dr = (psi(y + h_y, s) - psi(y - h_y, s)) / (2.0 * h_y)
    d2psi = (psi(y + h_y, s) - 2.0 * psi(y, s) + psi(y - h_y, s)) / h_y ** 2
    r = np.abs(y)
    lap = d2psi + np.where(r > 0, (N - 1) * dpsi_dr / np.where(r > 0, r, 1.0), (N - 1) * d2psi)
    ps = psi(y, s)
    return (-dpsi_ds + lap - 0.5 * r * dpsi_dr + ps * ps - ps
            + (p.alpha - 1.0) * dpsi_dr * dpsi_dr / ps)


# ---------------------------------------------------------------------------
# Snapshots and trajectories


@dataclass
class SimSnapshot:
    s: float
    w: np.ndarray
    q: np.ndarray
    modes: Optional[ModeDecomposition]
    sup_w: float
    profile_err_value: float
    profile_err_grad: float


@dataclass
class SimTrajectory:
    p: SimParams
    cfg: SolverConfig
    grid: QuadGrid
    snapshots: List[SimSnapshot] = field(default_factory=list)
    stop_reason: str = "completed"
    stop_index: Optional[int] = None

    @property
    def s_values(self) -> np.ndarray:
        return np.array([snap.s for snap in self.snapshots])

    def mode_series(self):
        s = self.s_values
        q0 = np.array([snap.modes.q0 for snap in self.snapshots])
        q1 = np.array([snap.modes.q1 for snap in self.snapshots])
        q2 = np.array([snap.modes.q2 for snap in self.snapshots])
        return s, q0, q1, q2


def profile_error(w: np.ndarray, grid: QuadGrid, s: float, p: SimParams):
    """Sup-norm distance of e^W from e^{phi_alpha(y/sqrt s)} and its gradient."""
    z = grid.y / math.sqrt(s)
    target = np.exp(phi_alpha(z, p.alpha))
    ew = np.exp(w)
    err_val = float(np.max(np.abs(ew - target)))
    dtarget = target * phi_alpha_prime(z, p.alpha) * np.sign(grid.y) / math.sqrt(s)
    dew = np.gradient(ew, grid.y, edge_order=2)
    err_grad = float(np.max(np.abs(dew - dtarget)))
    return err_val, err_grad


# ---------------------------------------------------------------------------
# The solver


class SimilaritySolver:
    """Single-owner stepping engine; instances are not shared across threads."""

    def __init__(self, p: SimParams, cfg: SolverConfig, s_end: float):
        self.p = p
        self.cfg = cfg
        y_max = cfg.resolved_y_max(p, s_end)
        self.grid = make_quad_grid(y_max, cfg.dy, p.dim)
        y = self.grid.y
        self._lap = _laplacian_op(y, p.dim, self.grid.radial)
        self._drift = _drift_op(y, self.grid.radial)
        self._identity: Operator = {0: np.ones(y.size)}
        self._matrix_cache: Dict[float, np.ndarray] = {}
        self._sign_y = np.sign(y)

    # -- explicit right-hand sides -------------------------------------

    def _nonlinear_W(self, w: np.ndarray) -> np.ndarray:
        grad = np.gradient(w, self.grid.y, edge_order=2)
        return self.p.alpha * grad * grad + np.expm1(w)

    def _nonlinear_Q(self, q: np.ndarray, s: float) -> np.ndarray:
        y = self.grid.y
        grad = np.gradient(q, y, edge_order=2)
        V = potential_V(y, s, self.p)
        G = nonlinear_G(q, grad, y, s, self.p)
        R = residual_R(y, s, self.p)
        return V * q + q * q + G + R

    def _full_rhs(self, u: np.ndarray, s: float) -> np.ndarray:
        lap = _op_matvec(self._lap, u)
        drift = _op_matvec(self._drift, u)
        if self.cfg.formulation == "W_equation":
            return lap + drift + self._nonlinear_W(u)
        return lap + drift + u + self._nonlinear_Q(u, s)

    # -- time stepping ---------------------------------------------------

    def _reaction_scale(self, u: np.ndarray, s: float) -> float:
        if self.cfg.formulation == "W_equation":
            return float(np.exp(np.clip(np.max(u), -50.0, 700.0)))
        psi = psi_alpha(self.grid.y, s, self.p)
        return float(np.max(np.abs(u + psi)))

    def _check_state(self, u: np.ndarray, s: float) -> None:
        if not np.all(np.isfinite(u)):
            raise SolverFailure(s, "non-finite values in state")
        if self.cfg.formulation == "W_equation":
            if float(np.max(u)) > self.cfg.blowup_guard:
                raise SolverBlowup(s)
        else:
            psi = psi_alpha(self.grid.y, s, self.p)
            den = u + psi
            if np.any(den <= 0.0):
                raise SolverFailure(s, "Q + psi_alpha lost positivity")
            if float(np.max(np.log(np.max(den)))) > self.cfg.blowup_guard:
                raise SolverBlowup(s)

    def _matrix(self, ds: float) -> np.ndarray:
        key = round(ds, 15)
        ab = self._matrix_cache.get(key)
        if ab is None:
            op: Operator = {}
            _op_axpy(op, self._identity, 1.0)
            _op_axpy(op, self._lap, -0.5 * ds)
            _op_axpy(op, self._drift, -ds)
            if self.cfg.formulation == "Q_equation":
                _op_axpy(op, self._identity, -ds)
            ab = _op_to_banded(op, self.grid.y.size)
            if len(self._matrix_cache) > 64:
                self._matrix_cache.clear()
            self._matrix_cache[key] = ab
        return ab

    def pick_ds(self, u: np.ndarray, s: float, s_limit: Optional[float] = None) -> float:
        ds = min(self.cfg.ds, self.cfg.cfl_safety / max(self._reaction_scale(u, s), 1e-12))
        if self.cfg.scheme == "explicit_RK2":
            dy = self.cfg.dy
            a_max = 0.5 * float(np.max(np.abs(self.grid.y)))
            ds = min(ds, self.cfg.cfl_safety * 0.5 * dy * dy,
                     self.cfg.cfl_safety * dy / max(a_max, 1e-12))
        if s_limit is not None:
            ds = min(ds, s_limit - s)
        return max(ds, 1e-12)

    def step(self, u: np.ndarray, s: float, ds: float) -> np.ndarray:
        """Advance one step of size ds; raises SolverBlowup / SolverFailure."""
        self._check_state(u, s)
        if self.cfg.scheme == "explicit_RK2":
            mid = u + 0.5 * ds * self._full_rhs(u, s)
            out = u + ds * self._full_rhs(mid, s + 0.5 * ds)
        else:
            expl = (self._nonlinear_W(u) if self.cfg.formulation == "W_equation"
                    else self._nonlinear_Q(u, s))
            rhs = u + 0.5 * ds * _op_matvec(self._lap, u) + ds * expl
            out = solve_banded((2, 2), self._matrix(ds), rhs, check_finite=False)
        if not np.all(np.isfinite(out)):
            raise SolverFailure(s + ds, "non-finite values after step")
        return out


def step(state: SimilarityField, cfg: SolverConfig, p: SimParams,
         s_end_hint: Optional[float] = None) -> SimilarityField:
    """One time step on a SimilarityField (convenience wrapper)."""
    s_end = s_end_hint if s_end_hint is not None else state.s + 10.0
    solver = SimilaritySolver(p, cfg, s_end)
    if solver.grid.y.size != state.y_nodes.size or not np.allclose(solver.grid.y, state.y_nodes):
        raise ValueError("state grid does not match the solver grid")
    if cfg.formulation == "W_equation":
        u = state.w_values
    else:
        u = np.exp(state.w_values) - psi_alpha(solver.grid.y, state.s, p)
    ds = solver.pick_ds(u, state.s)
    out = solver.step(u, state.s, ds)
    if cfg.formulation == "W_equation":
        w = out
    else:
        w = np.log(out + psi_alpha(solver.grid.y, state.s + ds, p))
    return SimilarityField(y_nodes=state.y_nodes.copy(), w_values=w, s=state.s + ds)


def evolve(
    w_init: np.ndarray,
    s0: float,
    s_end: float,
    cfg: SolverConfig,
    p: SimParams,
    snapshot_every: float = 0.1,
    decompose_snapshots: bool = True,
    stop: Optional[Callable[[SimSnapshot], bool]] = None,
    extra_snapshots: int = 2,
    solver: Optional[SimilaritySolver] = None,
) -> SimTrajectory:
    """Evolve from W(., s0) to s_end, emitting snapshots at fixed spacing.

    Steps are clipped so snapshot times are hit exactly.  ``stop`` is
    evaluated on each snapshot; once it fires the run continues for
    ``extra_snapshots`` more snapshots (so outgoing derivatives can be
    measured) and then stops with reason "stopped".  Solver errors are
    converted into stop reasons "blowup" / "failure" with the partial
    trajectory preserved.
    """
    if solver is None:
        solver = SimilaritySolver(p, cfg, s_end)
    grid = solver.grid
    w_init = np.asarray(w_init, dtype=float)
    if w_init.shape != grid.y.shape:
        raise ValueError("initial data does not match the solver grid")

    traj = SimTrajectory(p=p, cfg=cfg, grid=grid)

    if cfg.formulation == "W_equation":
        u = w_init.copy()
    else:
        u = np.exp(w_init) - psi_alpha(grid.y, s0, p)

    s = s0
    stop_countdown = -1

    def emit(u_now: np.ndarray, s_now: float) -> SimSnapshot:
        if cfg.formulation == "W_equation":
            w = u_now.copy()
            q = np.exp(w) - psi_alpha(grid.y, s_now, p)
        else:
            q = u_now.copy()
            w = np.log(q + psi_alpha(grid.y, s_now, p))
        md = decompose(q, s_now, p, grid) if decompose_snapshots else None
        ev, eg = profile_error(w, grid, s_now, p)
        snap = SimSnapshot(s=s_now, w=w, q=q, modes=md, sup_w=float(np.max(np.abs(w))),
                           profile_err_value=ev, profile_err_grad=eg)
        traj.snapshots.append(snap)
        return snap

    snap = emit(u, s)
    if stop is not None and stop(snap):
        traj.stop_index = 0
        stop_countdown = extra_snapshots

    k = 1
    while s < s_end - 1e-12:
        target = min(s0 + k * snapshot_every, s_end)
        while s < target - 1e-12:
            ds = solver.pick_ds(u, s, s_limit=target)
            try:
                u = solver.step(u, s, ds)
            except SolverBlowup:
                traj.stop_reason = "blowup"
                return traj
            except SolverFailure:
                traj.stop_reason = "failure"
                return traj
            s += ds
        snap = emit(u, s)
        k += 1
        if stop_countdown > 0:
            stop_countdown -= 1
            if stop_countdown == 0:
                traj.stop_reason = "stopped"
                return traj
        elif stop is not None and traj.stop_index is None and stop(snap):
            traj.stop_index = len(traj.snapshots) - 1
            stop_countdown = extra_snapshots
            if extra_snapshots == 0:
                traj.stop_reason = "stopped"
                return traj
    return traj
