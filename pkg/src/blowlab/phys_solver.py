"""Physical-variable PDE engine on a log-refined grid.

Evolves U(x, t) for  dU/dt = Lap U + alpha |grad U|^2 + e^U  up to times
exponentially close to the blowup time.  The grid is geometric from x_min
to x_mid and uniform from x_mid to x_max (mirrored through 0 in 1-D), so
the shrinking similarity scale sqrt(T-t) stays resolved without global
refinement.  Diffusion is treated with a theta-scheme (Crank-Nicolson with
a slight off-centring for robustness on the stiff near-origin spacings);
the reaction and gradient terms are explicit with dt capped by
cfl / max e^U, which advances s = -ln(T-t) in roughly equal increments.

The far boundary freezes the gradient of U to the far-field shape
-ln(1 + a |x|^2), a Robin-type condition compatible with the affine space
the data lives in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .params import SimParams
from .profiles import PhysicalField, t_of_x

__all__ = [
    "make_phys_grid",
    "PhysTrajectory",
    "evolve_physical",
    "WindowSeries",
    "window_extract",
    "no_blowup_monitor",
    "FinalProfile",
    "final_profile_extract",
    "blowup_rate_series",
]


def make_phys_grid(p: SimParams, x_min: float = 1e-6, x_mid: float = 0.1,
                   x_max: float = 4.0, n_log: int = 1400, n_uniform: int = 900,
                   resolve_until: Optional[float] = None) -> np.ndarray:
    """Log-refined grid; full line for dim == 1, radii [0, x_max] otherwise.

    ``resolve_until`` (a time-to-blowup) enforces the near-origin spacing
    requirement dx <= sqrt(T - t_end)/8 at the similarity scale.
    """
    pos = np.concatenate([
        np.geomspace(x_min, x_mid, n_log),
        np.linspace(x_mid, x_max, n_uniform)[1:],
    ])
    if resolve_until is not None:
        need = math.sqrt(resolve_until) / 8.0
        scale = math.sqrt(resolve_until * abs(math.log(resolve_until)))
        idx = np.searchsorted(pos, scale)
        local_dx = np.diff(pos)[min(idx, pos.size - 2)]
        if local_dx > need:
            raise ValueError(
                f"grid spacing {local_dx:.3g} at the similarity scale exceeds "
                f"sqrt(T-t_end)/8 = {need:.3g}; increase n_log"
            )
    if p.dim == 1:
        return np.concatenate([-pos[::-1], [0.0], pos])
    return np.concatenate([[0.0], pos])


# ---------------------------------------------------------------------------
# Nonuniform banded operators (same layout as the similarity engine)


def _nonuniform_lap(x: np.ndarray, dim: int, radial: bool) -> Dict[int, np.ndarray]:
    n = x.size
    lo2 = np.zeros(n)
    lo1 = np.zeros(n)
    d0 = np.zeros(n)
    up1 = np.zeros(n)
    up2 = np.zeros(n)
    hm = np.empty(n)
    hp = np.empty(n)
    hm[1:] = np.diff(x)
    hp[:-1] = np.diff(x)
    hm[0] = hm[1]
    hp[-1] = hp[-2]

    i = np.arange(1, n - 1)
    lo1[i] = 2.0 / (hm[i] * (hm[i] + hp[i]))
    d0[i] = -2.0 / (hm[i] * hp[i])
    up1[i] = 2.0 / (hp[i] * (hm[i] + hp[i]))

    if radial and dim > 1:
        with np.errstate(divide="ignore"):
            c = (dim - 1) / np.where(x == 0.0, np.inf, x)
        lo1[i] += -c[i] * hp[i] / (hm[i] * (hm[i] + hp[i]))
        d0[i] += c[i] * (hp[i] - hm[i]) / (hm[i] * hp[i])
        up1[i] += c[i] * hm[i] / (hp[i] * (hm[i] + hp[i]))
        # r = 0: Lap U = N U'' with symmetric extension
        d0[0] = -2.0 * dim / hp[0] ** 2
        up1[0] = 2.0 * dim / hp[0] ** 2
    else:
        # ends handled by boundary condition rows; fill with one-sided lap
        d0[0] = 1.0 / hp[0] ** 2
        up1[0] = -2.0 / hp[0] ** 2
        up2[0] = 1.0 / hp[0] ** 2
    d0[-1] = 1.0 / hm[-1] ** 2
    lo1[-1] = -2.0 / hm[-1] ** 2
    lo2[-1] = 1.0 / hm[-1] ** 2
    return {-2: lo2, -1: lo1, 0: d0, 1: up1, 2: up2}


def _op_matvec(op: Dict[int, np.ndarray], f: np.ndarray) -> np.ndarray:
    n = f.size
    out = np.zeros_like(f)
    for k, d in op.items():
        if k >= 0:
            out[: n - k] += d[: n - k] * f[k:]
        else:
            out[-k:] += d[-k:] * f[: n + k]
    return out


# ---------------------------------------------------------------------------
# Trajectory container with window interpolation


@dataclass
class PhysTrajectory:
    p: SimParams
    x: np.ndarray
    times: List[float] = field(default_factory=list)
    frames: List[np.ndarray] = field(default_factory=list)
    stop_reason: str = "completed"
    _splines: Dict[int, CubicSpline] = field(default_factory=dict, repr=False)

    @property
    def t_last(self) -> float:
        return self.times[-1]

    def frame(self, i: int) -> np.ndarray:
        return self.frames[i]

    def _spline(self, i: int) -> CubicSpline:
        sp = self._splines.get(i)
        if sp is None:
            sp = CubicSpline(self.x, self.frames[i])
            if len(self._splines) > 40:
                self._splines.clear()
            self._splines[i] = sp
        return sp

    def _bracket(self, t: float) -> Tuple[int, int, float]:
        times = self.times
        if t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return len(times) - 1, len(times) - 1, 0.0
        j = int(np.searchsorted(times, t))
        i = j - 1
        lam = (t - times[i]) / (times[j] - times[i])
        return i, j, lam

    def values_at(self, x_query: np.ndarray, t: float, deriv: int = 0) -> np.ndarray:
        """Cubic in space, linear in time between stored frames."""
        i, j, lam = self._bracket(t)
        vi = self._spline(i)(x_query, nu=deriv)
        if j == i:
            return vi
        vj = self._spline(j)(x_query, nu=deriv)
        return (1.0 - lam) * vi + lam * vj

    def window_values(self, x0: float, xi: np.ndarray, tau: float):
        """Window values (ln theta + U), gradients and Hessians at one tau."""
        _, theta = t_of_x(x0, self.p)
        t_query = (self.p.T - theta) + tau * theta
        root = math.sqrt(theta)
        xq = x0 + np.asarray(xi, dtype=float) * root
        vals = math.log(theta) + self.values_at(xq, t_query)
        grads = root * self.values_at(xq, t_query, deriv=1)
        hesses = theta * self.values_at(xq, t_query, deriv=2)
        return vals, grads, hesses

    def center_value(self, t: float) -> float:
        return float(self.values_at(np.array([0.0]), t)[0])


def evolve_physical(
    init: PhysicalField,
    t_end: float,
    p: SimParams,
    cfl: float = 0.05,
    dt_base: Optional[float] = None,
    theta_scheme: float = 0.505,
    store_every: int = 1,
    guard_offset: float = 10.0,
) -> PhysTrajectory:
    """March U from init.t to t_end, storing frames for window extraction.

    Stops early with reason "blowup_guard" when max U exceeds
    -ln(T - t_end) + guard_offset, or "failure" on non-finite values.
    """
    if not t_end < p.T:
        raise ValueError("t_end must be < T")
    if not init.t < t_end:
        raise ValueError("initial time must precede t_end")
    x = init.x_nodes
    u = init.u_values.copy()
    n = x.size
    radial = p.dim > 1
    lap = _nonuniform_lap(x, p.dim, radial)
    if dt_base is None:
        dt_base = (t_end - init.t) / 400.0
    guard = -math.log(p.T - t_end) + guard_offset

    # far-field slope of -ln(1 + a x^2) imposed at the outer boundary rows
    def far_slope(xv: float) -> float:
        return -2.0 * p.a_far * xv / (1.0 + p.a_far * xv * xv)

    h_uni = x[-1] - x[-2]
    traj = PhysTrajectory(p=p, x=x)
    traj.times.append(init.t)
    traj.frames.append(u.copy())

    eye = np.ones(n)
    t = init.t
    k_step = 0
    while t < t_end - 1e-18:
        e_u = np.exp(np.clip(u, -700.0, 700.0))
        dt = min(dt_base, cfl / float(np.max(e_u)), t_end - t)
        grad_u = np.gradient(u, x, edge_order=2)
        expl = p.alpha * grad_u * grad_u + e_u
        rhs = u + dt * (1.0 - theta_scheme) * _op_matvec(lap, u) + dt * expl

        ab = np.zeros((5, n))
        for koff, d in lap.items():
            if koff >= 0:
                ab[2 - koff, koff:] = -dt * theta_scheme * d[: n - koff]
            else:
                ab[2 - koff, : n + koff] = -dt * theta_scheme * d[-koff:]
        ab[2, :] += eye

        # boundary rows: prescribed slope (one-sided, second order)
        if radial:
            rows = [(n - 1, -1)]
        else:
            rows = [(0, +1), (n - 1, -1)]
        for i0, orient in rows:
            ab[:, i0] = 0.0
            if orient < 0:
                # (3u_i - 4u_{i-1} + u_{i-2}) / (2h) = slope
                ab[2, i0] = 3.0 / (2.0 * h_uni)
                ab[3, i0 - 1] = -4.0 / (2.0 * h_uni)
                ab[4, i0 - 2] = 1.0 / (2.0 * h_uni)
                rhs[i0] = far_slope(x[i0])
            else:
                ab[2, i0] = -3.0 / (2.0 * h_uni)
                ab[1, i0 + 1] = 4.0 / (2.0 * h_uni)
                ab[0, i0 + 2] = -1.0 / (2.0 * h_uni)
                rhs[i0] = far_slope(x[i0])

        u = solve_banded((2, 2), ab, rhs, check_finite=False)
        t += dt
        k_step += 1
        if not np.all(np.isfinite(u)):
            traj.stop_reason = "failure"
            break
        if k_step % store_every == 0 or t >= t_end - 1e-18:
            traj.times.append(t)
            traj.frames.append(u.copy())
        if float(np.max(u)) > guard:
            traj.stop_reason = "blowup_guard"
            break
    return traj


# ---------------------------------------------------------------------------
# Window extraction and monitors


@dataclass
class WindowSeries:
    x0: float
    xi: np.ndarray
    taus: np.ndarray
    values: np.ndarray   # (n_tau, n_xi)
    grads: np.ndarray
    hesses: np.ndarray
    theta: float


def window_extract(traj: PhysTrajectory, x0: float, p: SimParams,
                   n_xi: int = 33, xi_max: Optional[float] = None,
                   max_taus: int = 400) -> WindowSeries:
    """Window time series at anchor x0 over the covered tau range.

    tau runs from max(0, (t_first - t(x0))/theta) up to the last stored
    frame; xi spans |xi| <= alpha0 sqrt(|ln theta|) unless overridden.
    """
    _, theta = t_of_x(x0, p)
    t_x = p.T - theta
    tau_lo = max(0.0, (traj.times[0] - t_x) / theta)
    tau_hi = (traj.t_last - t_x) / theta
    if tau_hi <= tau_lo:
        raise ValueError(f"trajectory does not cover the window of x0 = {x0}")
    frame_taus = (np.asarray(traj.times) - t_x) / theta
    taus = np.unique(np.clip(frame_taus, tau_lo, tau_hi))
    if taus.size > max_taus:
        idx = np.unique(np.linspace(0, taus.size - 1, max_taus).astype(int))
        taus = taus[idx]
    if xi_max is None:
        xi_max = p.alpha0 * math.sqrt(abs(math.log(theta)))
    xi = np.linspace(-xi_max, xi_max, n_xi)
    vals = np.empty((taus.size, xi.size))
    grads = np.empty_like(vals)
    hesses = np.empty_like(vals)
    for k, tau in enumerate(taus):
        vals[k], grads[k], hesses[k] = traj.window_values(x0, xi, tau)
    return WindowSeries(x0=x0, xi=xi, taus=taus, values=vals,
                        grads=grads, hesses=hesses, theta=theta)


def no_blowup_monitor(win: WindowSeries) -> float:
    """Sup over the window (|xi| <= 1) of (1-tau) e^U + sqrt(1-tau) |grad U|."""
    mask = np.abs(win.xi) <= 1.0
    one_m = (1.0 - win.taus)[:, None]
    vals = one_m * np.exp(win.values[:, mask]) + np.sqrt(one_m) * np.abs(win.grads[:, mask])
    return float(np.max(vals))


@dataclass
class FinalProfile:
    x: np.ndarray
    u: np.ndarray
    grad_u: np.ndarray
    t_last: float
    t_prev: float
    cauchy_diff: float   # sup over |x| >= eps0/4 of |U(t_last) - U(t_prev)|


def final_profile_extract(traj: PhysTrajectory, p: SimParams,
                          prev_gap_factor: float = 100.0) -> FinalProfile:
    """Final frame with gradient plus a Cauchy-in-time stabilisation estimate."""
    t_last = traj.t_last
    target_prev = p.T - prev_gap_factor * (p.T - t_last)
    times = np.asarray(traj.times)
    i_prev = int(np.argmin(np.abs(times - target_prev)))
    u_last = traj.frames[-1]
    u_prev = traj.frames[i_prev]
    far = np.abs(traj.x) >= p.eps0 / 4.0
    cauchy = float(np.max(np.abs(u_last[far] - u_prev[far])))
    keep = np.abs(traj.x) > 0.0
    grad = np.gradient(u_last, traj.x, edge_order=2)
    return FinalProfile(
        x=traj.x[keep], u=u_last[keep], grad_u=grad[keep],
        t_last=t_last, t_prev=float(times[i_prev]), cauchy_diff=cauchy,
    )


def blowup_rate_series(traj: PhysTrajectory, p: SimParams):
    """Arrays (t, s, U(0, t) + ln(T - t)) along the stored frames."""
    center = np.array([fr[np.argmin(np.abs(traj.x))] for fr in traj.frames])
    t = np.asarray(traj.times)
    theta = p.T - t
    return t, -np.log(theta), center + np.log(theta)
