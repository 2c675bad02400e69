"""Shooting over the expanding directions of the trapped solution.

The initial-data family has N+1 free parameters (d0, d1) controlling the
amplitudes of the two expanding Hermite modes of Q.  Trajectories that are
not exactly tuned exit the shrinking mode boxes in finite time, Q0
deviations growing like e^s and Q1 like e^{s/2}; exits are transversal, so
exit signs are well defined and the exit map has nonzero degree on the
boundary of the admissible parameter rectangle.  ``classify_exit_map``
sweeps the parameter square and measures that winding; ``refine`` locates
the trapped trajectory by nested bisection: the outer level bisects d1 on
the sign of the Q1 exit, the inner level bisects d0 on the sign of the Q0
exit until the Q0 exit is pushed past the Q1 exit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .hermite import decompose
from .initial_data import ConstructionError, InitialDataSpec, build_initial_U, build_initial_W
from .params import SimParams
from .phys_solver import PhysTrajectory, blowup_rate_series, evolve_physical, make_phys_grid
from .profiles import PhysicalField
from .sim_solver import SimilaritySolver, SimTrajectory, SolverConfig, evolve
from .trap import CONSTRAINT_ORDER, check_D1

__all__ = [
    "ShootOutcome",
    "shoot",
    "SweepResult",
    "classify_exit_map",
    "RefineResult",
    "RefinementError",
    "refine",
    "mode_map_slopes",
    "preimage_box",
    "polish_d0_physical",
]


@dataclass
class ShootOutcome:
    d0: float
    d1: float
    exit_s: float                     # math.inf when the run reached s_end
    exit_constraint: Optional[str]
    exit_sign: int
    status: str                       # exited | completed | construction_failed | solver_failure
    transversality: Optional[float] = None  # exit_sign * d(mode)/ds at exit
    gamma: Optional[Tuple[float, float]] = None  # (s*^2/A)(Q0, Q1) at exit
    q1_end_sign: int = 0

    @property
    def trapped(self) -> bool:
        return self.status == "completed"


def _margin_series(traj: SimTrajectory, p: SimParams):
    s_vals = traj.s_values
    reports = [check_D1(snap.modes, snap.s, p) for snap in traj.snapshots]
    return s_vals, reports


def shoot(
    d0: float,
    d1: float,
    s_end: float,
    p: SimParams,
    cfg: SolverConfig,
    snapshot_every: float = 0.1,
    keep_trajectory: bool = False,
):
    """Evolve the (d0, d1) data until the first trap exit or s_end.

    Returns a ShootOutcome (and the trajectory when keep_trajectory).
    Solver failures are a distinct status, never conflated with an exit.
    """
    spec_err = None
    try:
        spec = InitialDataSpec(d0=d0, d1=np.full(p.dim, d1, dtype=float), params=p)
    except ValueError as exc:
        spec_err = str(exc)
    if spec_err is not None:
        out = ShootOutcome(d0, d1, math.nan, None, 0, "construction_failed")
        return (out, None) if keep_trajectory else out

    solver = SimilaritySolver(p, cfg, s_end)
    try:
        w0 = build_initial_W(spec, solver.grid.y)
    except ConstructionError:
        out = ShootOutcome(d0, d1, math.nan, None, 0, "construction_failed")
        return (out, None) if keep_trajectory else out

    def stopped(snap) -> bool:
        return not check_D1(snap.modes, snap.s, p).in_set

    traj = evolve(w0, p.s0, s_end, cfg, p, snapshot_every=snapshot_every,
                  stop=stopped, extra_snapshots=2, solver=solver)

    s_vals, reports = _margin_series(traj, p)
    exit_idx = None
    for i, rep in enumerate(reports):
        if not rep.in_set:
            exit_idx = i
            break

    if exit_idx is None:
        if traj.stop_reason in ("blowup", "failure"):
            out = ShootOutcome(d0, d1, float(s_vals[-1]), None, 0, "solver_failure")
            return (out, traj) if keep_trajectory else out
        q1_end = float(traj.snapshots[-1].modes.q1[0]) if p.dim == 1 else 0.0
        out = ShootOutcome(d0, d1, math.inf, None, 0, "completed",
                           q1_end_sign=int(np.sign(q1_end)))
        return (out, traj) if keep_trajectory else out

    rep = reports[exit_idx]
    constraint = rep.first_violation
    # interpolate the crossing of the violated margin between snapshots
    if exit_idx == 0:
        s_star = float(s_vals[0])
    else:
        m_prev = reports[exit_idx - 1].margins[constraint]
        m_here = rep.margins[constraint]
        frac = m_prev / max(m_prev - m_here, 1e-300)
        s_star = float(s_vals[exit_idx - 1] + frac * (s_vals[exit_idx] - s_vals[exit_idx - 1]))

    q0_series = np.array([snap.modes.q0 for snap in traj.snapshots])
    q1_series = np.array([float(snap.modes.q1[0]) if p.dim == 1 else 0.0
                          for snap in traj.snapshots])
    if constraint == "Q0":
        series = q0_series
    elif constraint == "Q1":
        series = q1_series
    else:
        series = None

    sign = 0
    transv = None
    if series is not None:
        sign = int(np.sign(series[exit_idx])) or 1
        lo = max(exit_idx - 1, 0)
        hi = min(exit_idx + 1, len(s_vals) - 1)
        if hi > lo:
            slope = (series[hi] - series[lo]) / (s_vals[hi] - s_vals[lo])
            transv = sign * float(slope)

    gamma = (float(q0_series[exit_idx] * s_star ** 2 / p.A),
             float(q1_series[exit_idx] * s_star ** 2 / p.A))
    out = ShootOutcome(d0, d1, s_star, constraint, sign, "exited",
                       transversality=transv, gamma=gamma,
                       q1_end_sign=int(np.sign(q1_series[exit_idx])))
    return (out, traj) if keep_trajectory else out


def _shoot_task(args) -> ShootOutcome:
    d0, d1, s_end, p, cfg, snapshot_every = args
    return shoot(d0, d1, s_end, p, cfg, snapshot_every=snapshot_every)


def _run_many(tasks, workers: Optional[int]) -> List[ShootOutcome]:
    if workers is None:
        workers = min(8, os.cpu_count() or 1)
    if workers <= 1 or len(tasks) <= 2:
        return [_shoot_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_shoot_task, tasks, chunksize=4))


# ---------------------------------------------------------------------------
# Mode map and its admissible preimage


def mode_map_slopes(p: SimParams, cfg: SolverConfig, s_end: float) -> Tuple[float, float]:
    """Measured diagonal of the linear map (d0, d1) -> (Q0bar, Q1bar)."""
    solver = SimilaritySolver(p, cfg, s_end)
    grid = solver.grid
    from .initial_data import build_initial_Q

    spec0 = InitialDataSpec(d0=1.0, d1=np.zeros(p.dim), params=p)
    md0 = decompose(build_initial_Q(spec0, grid.y), p.s0, p, grid)
    slope0 = md0.q0 / (p.A / p.s0 ** 2)
    if p.dim == 1:
        spec1 = InitialDataSpec(d0=0.0, d1=np.ones(1), params=p)
        md1 = decompose(build_initial_Q(spec1, grid.y), p.s0, p, grid)
        slope1 = float(md1.q1[0]) / (p.A / p.s0 ** 2)
    else:
        slope1 = 0.0
    return float(slope0), float(slope1)


def preimage_box(p: SimParams, cfg: SolverConfig, s_end: float) -> Tuple[float, float]:
    """Half-widths (b0, b1) of the preimage of the mode box in (d0, d1)."""
    slope0, slope1 = mode_map_slopes(p, cfg, s_end)
    b0 = min(2.0, 1.0 / abs(slope0))
    b1 = min(2.0, 1.0 / abs(slope1)) if slope1 != 0.0 else 0.0
    return b0, b1


@dataclass
class SweepResult:
    d0_values: np.ndarray
    d1_values: np.ndarray
    outcomes: List[ShootOutcome]
    boundary_winding: int
    boundary_outcomes: List[ShootOutcome]
    preimage_halfwidths: Tuple[float, float]

    def outcome(self, i: int, j: int) -> ShootOutcome:
        return self.outcomes[i * self.d1_values.size + j]

    def best(self) -> ShootOutcome:
        finite = [o for o in self.outcomes if o.status in ("exited", "completed")]
        return max(finite, key=lambda o: o.exit_s)


def _winding_from_gammas(gammas: Sequence[Tuple[float, float]]) -> int:
    angles = np.array([math.atan2(g1, g0) for g0, g1 in gammas])
    total = 0.0
    for k in range(len(angles)):
        d = angles[(k + 1) % len(angles)] - angles[k]
        while d > math.pi:
            d -= 2.0 * math.pi
        while d < -math.pi:
            d += 2.0 * math.pi
        total += d
    return int(round(total / (2.0 * math.pi)))


def classify_exit_map(
    grid_res: int,
    p: SimParams,
    cfg: SolverConfig,
    s_end: float,
    workers: Optional[int] = None,
    boundary_samples_per_side: int = 12,
    snapshot_every: float = 0.1,
) -> SweepResult:
    """Sweep (d0, d1) over [-2, 2]^2 and measure the boundary winding.

    The winding is evaluated along the boundary of the admissible rectangle
    (the preimage of the mode box), where exits happen immediately and the
    exit map lands on the boundary of the unit square.  Requires dim == 1.
    """
    if p.dim != 1:
        raise ValueError("the full two-parameter map requires dim == 1")
    d0s = np.linspace(-2.0, 2.0, grid_res)
    d1s = np.linspace(-2.0, 2.0, grid_res)
    tasks = [(d0, d1, s_end, p, cfg, snapshot_every) for d0 in d0s for d1 in d1s]
    outcomes = _run_many(tasks, workers)

    b0, b1 = preimage_box(p, cfg, s_end)
    boundary_pts: List[Tuple[float, float]] = []
    m = boundary_samples_per_side
    for k in range(m):  # counterclockwise: bottom, right, top, left
        boundary_pts.append((-b0 + 2.0 * b0 * k / m, -b1))
    for k in range(m):
        boundary_pts.append((b0, -b1 + 2.0 * b1 * k / m))
    for k in range(m):
        boundary_pts.append((b0 - 2.0 * b0 * k / m, b1))
    for k in range(m):
        boundary_pts.append((-b0, b1 - 2.0 * b1 * k / m))
    btasks = [(d0, d1, s_end, p, cfg, snapshot_every) for d0, d1 in boundary_pts]
    boundary_outcomes = _run_many(btasks, workers)
    gammas = [o.gamma for o in boundary_outcomes if o.gamma is not None]
    winding = _winding_from_gammas(gammas) if len(gammas) >= 4 else 0

    return SweepResult(
        d0_values=d0s, d1_values=d1s, outcomes=outcomes,
        boundary_winding=winding, boundary_outcomes=boundary_outcomes,
        preimage_halfwidths=(b0, b1),
    )


# ---------------------------------------------------------------------------
# Nested bisection refinement


class RefinementError(RuntimeError):
    pass


@dataclass
class RefineResult:
    d0: float
    d1: float
    exit_s: float
    achieved: List[float]       # best exit_s after each outer level (index 0 = start)
    n_shoots: int
    best_outcome: ShootOutcome


def refine(
    p: SimParams,
    cfg: SolverConfig,
    s_end: float,
    depth: int,
    d0_bracket: Tuple[float, float],
    d1_bracket: Tuple[float, float],
    snapshot_every: float = 0.1,
    inner_max_iter: int = 70,
) -> RefineResult:
    """Nested sign bisection toward the trapped trajectory.

    Outer levels bisect d1 on the sign of the eventual Q1 exit; each inner
    solve bisects d0 on the Q0 exit sign until the trajectory exits through
    Q1 instead (or completes), which yields the outer verdict.  The best
    exit time seen is monotone nondecreasing across levels by construction.
    """
    count = 0
    best: Optional[ShootOutcome] = None

    def do_shoot(d0: float, d1: float) -> ShootOutcome:
        nonlocal count, best
        count += 1
        out = shoot(d0, d1, s_end, p, cfg, snapshot_every=snapshot_every)
        if out.status in ("exited", "completed"):
            if best is None or out.exit_s > best.exit_s:
                best = out
        return out

    def q0_sign(out: ShootOutcome) -> Optional[int]:
        if out.status == "exited" and out.exit_constraint == "Q0":
            return out.exit_sign
        return None

    def inner(d1: float, lo: float, hi: float) -> Tuple[int, Tuple[float, float]]:
        """Returns (q1 verdict sign, final d0 bracket)."""
        out_lo = do_shoot(lo, d1)
        out_hi = do_shoot(hi, d1)
        s_lo, s_hi = q0_sign(out_lo), q0_sign(out_hi)
        width = hi - lo
        tries = 0
        while (s_lo != -1 or s_hi != 1) and tries < 8:
            # expand until the bracket straddles the Q0 crossing
            if s_lo != -1:
                lo -= width
                out_lo = do_shoot(lo, d1)
                s_lo = q0_sign(out_lo)
            if s_hi != 1:
                hi += width
                out_hi = do_shoot(hi, d1)
                s_hi = q0_sign(out_hi)
            width = hi - lo
            tries += 1
        if s_lo != -1 or s_hi != 1:
            # one of the endpoints already exits via Q1: that is the verdict
            for out in (out_lo, out_hi):
                if out.status == "exited" and out.exit_constraint == "Q1":
                    return out.exit_sign, (lo, hi)
            raise RefinementError(
                f"could not bracket the Q0 crossing at d1 = {d1}: "
                f"signs ({s_lo}, {s_hi})"
            )
        last = None
        for _ in range(inner_max_iter):
            mid = 0.5 * (lo + hi)
            out = do_shoot(mid, d1)
            last = out
            if out.status == "completed":
                return out.q1_end_sign or 1, (lo, hi)
            if out.status != "exited":
                raise RefinementError(f"solver failure during refinement at ({mid}, {d1})")
            if out.exit_constraint == "Q0":
                if out.exit_sign > 0:
                    hi = mid
                else:
                    lo = mid
            elif out.exit_constraint == "Q1":
                return out.exit_sign, (lo, hi)
            else:
                raise RefinementError(
                    f"unexpected exit constraint {out.exit_constraint} at ({mid}, {d1})"
                )
        # bracket exhausted at floating-point scale: use the Q1 trend sign
        return (last.q1_end_sign or 1), (lo, hi)

    achieved: List[float] = []
    d1_lo, d1_hi = d1_bracket
    d0_lo, d0_hi = d0_bracket
    v_lo, br = inner(d1_lo, d0_lo, d0_hi)
    v_hi, _ = inner(d1_hi, d0_lo, d0_hi)
    tries = 0
    width = d1_hi - d1_lo
    while v_lo == v_hi and tries < 6:
        d1_lo -= width
        d1_hi += width
        v_lo, _ = inner(d1_lo, d0_lo, d0_hi)
        v_hi, _ = inner(d1_hi, d0_lo, d0_hi)
        width = d1_hi - d1_lo
        tries += 1
    if v_lo == v_hi:
        raise RefinementError(
            f"Q1 verdicts agree ({v_lo}) on both d1 endpoints: enclosure lost"
        )
    achieved.append(best.exit_s if best is not None else p.s0)

    for _ in range(depth):
        d1_mid = 0.5 * (d1_lo + d1_hi)
        # restart the inner bracket near the previous crossing, mildly inflated
        c = 0.5 * (br[0] + br[1])
        w = max((br[1] - br[0]) * 8.0, 1e-15)
        verdict, br = inner(d1_mid, c - 0.5 * w, c + 0.5 * w)
        if verdict == v_hi:
            d1_hi = d1_mid
        else:
            d1_lo = d1_mid
        achieved.append(best.exit_s)

    assert best is not None
    return RefineResult(d0=best.d0, d1=best.d1, exit_s=best.exit_s,
                        achieved=achieved, n_shoots=count, best_outcome=best)


# ---------------------------------------------------------------------------
# Physical-engine polish of the dominant parameter


def polish_d0_physical(
    d1: float,
    d0_center: float,
    p: SimParams,
    t_end: float,
    half_width: float = 0.02,
    n_iter: int = 10,
    grid: Optional[np.ndarray] = None,
    **evolve_kwargs,
) -> Tuple[float, PhysTrajectory]:
    """Bisection of d0 on the physical engine's own trapped point.

    The two engines discretise the same dynamics differently, so the
    similarity-refined d0 is biased on the physical grid; the late-time
    drift of U(0,t) + ln(T-t) is monotone in d0 and provides the verdict.
    Returns the polished d0 and its trajectory.
    """
    if grid is None:
        grid = make_phys_grid(p, resolve_until=p.T - t_end)

    def run(d0: float) -> Tuple[float, PhysTrajectory]:
        spec = InitialDataSpec(d0=d0, d1=np.full(p.dim, d1), params=p)
        init = build_initial_U(spec, grid)
        traj = evolve_physical(init, t_end, p, **evolve_kwargs)
        _, _, band = blowup_rate_series(traj, p)
        dev = float(band[-1] - band[0])
        if traj.stop_reason == "blowup_guard":
            dev = abs(dev) if dev != 0 else 1.0  # early guard => overshoot upward
        return dev, traj

    lo, hi = d0_center - half_width, d0_center + half_width
    dev_lo, traj_lo = run(lo)
    dev_hi, traj_hi = run(hi)
    tries = 0
    while dev_lo * dev_hi > 0 and tries < 4:
        if abs(dev_lo) < abs(dev_hi):
            lo -= (hi - lo)
            dev_lo, traj_lo = run(lo)
        else:
            hi += (hi - lo)
            dev_hi, traj_hi = run(hi)
        tries += 1
    if dev_lo * dev_hi > 0:
        # no sign change: return the less-drifting endpoint
        return (lo, traj_lo) if abs(dev_lo) < abs(dev_hi) else (hi, traj_hi)
    best_d0, best_traj, best_dev = lo, traj_lo, abs(dev_lo)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        dev, traj = run(mid)
        if abs(dev) < best_dev:
            best_d0, best_traj, best_dev = mid, traj, abs(dev)
        if dev * dev_lo > 0:
            lo, dev_lo = mid, dev
        else:
            hi, dev_hi = mid, dev
    return best_d0, best_traj
