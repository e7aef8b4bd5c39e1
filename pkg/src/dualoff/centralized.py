"""Centralized two-layer solver.

The outer layer scans the noise share rho0 over a fixed grid; the inner
layer solves, for each rho0, the share-assignment subproblem

    minimize  sum_i c * log2(rho0 + sum_{j != i} rho_j)
    s.t.      rho in G(rho0),  sum_i rho_i >= 1 - rho0,

with c = (price_bs - price_ap) * w_ap.  G(rho0) is a normal (downward
closed) set cut out by four per-MU constraint families: the demand cap on
each share, the AP-interface power cap, the BS-interface power cap, and the
combined power budget.  The objective is increasing, so the optimum sits on
the budget hyperplane sum rho = 1 - rho0 and is approached from below by a
shrinking poly-block vertex set: the cheapest vertex is projected onto the
hyperplane along the segment toward the box corner, the projection updates
the incumbent when it lands inside G, and the vertex is split into one
child per coordinate.  Vertices that leave G, duplicate an existing vertex,
or can no longer beat the incumbent are dropped.

Feasibility of a grid point is decided first by a mirrored poly-block
maximization of rho0 + sum rho over G intersected with the search box: the
subproblem is feasible iff that maximum reaches 1.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .model import (
    GlobalInfeasible,
    NetworkInstance,
    RhoProfile,
    SolverConfig,
    Status,
    SubproblemResult,
    TopSearchReport,
    rho0_grid,
)
from .transforms import LN2, solution_from_rho, transform_constants

logger = logging.getLogger(__name__)

# Slack applied when testing membership in the normal set, so boundary
# points produced by the projections are not rejected for roundoff.
MEMBERSHIP_TOL = 1e-9


class NoCrossing(ValueError):
    """The segment between the given points misses the budget hyperplane."""


class PolyblockTrace(NamedTuple):
    """One minimizer iteration: vertex count, incumbent value, vertex gap."""

    iteration: int
    n_vertices: int
    cbv: float
    gap: float


def hyperplane_gap(rho, rho0: float) -> float:
    """sum(rho) - (1 - rho0); zero on the budget hyperplane."""
    return float(np.sum(rho) - (1.0 - rho0))


def _ap_power_share_limit(rho0: float, inst: NetworkInstance) -> np.ndarray:
    # AP-interface cap in share coordinates: a_i * rho_i / rho0 <= p_ap_max.
    c = transform_constants(inst)
    return inst.p_ap_max * rho0 / c.a


def _in_normal_set_rows(
    rows: np.ndarray, rho0: float, inst: NetworkInstance, tol: float
) -> np.ndarray:
    c = transform_constants(inst)
    pa_lim = _ap_power_share_limit(rho0, inst)
    s = rows.sum(axis=1)
    others = rho0 + s[:, None] - rows
    ok = (rows >= -tol).all(axis=1)
    ok &= (rows <= c.cap_demand + tol).all(axis=1)
    ok &= (rows <= pa_lim + tol).all(axis=1)
    ok &= (others <= c.q + tol).all(axis=1)
    lhs = c.b * c.e * others**c.wb + c.a * rows / rho0
    ok &= (lhs <= c.k + tol).all(axis=1)
    return ok


def in_normal_set(
    rho, rho0: float, inst: NetworkInstance, tol: float = MEMBERSHIP_TOL
) -> bool:
    """Whether the share vector satisfies all four constraint families."""
    rows = np.atleast_2d(np.asarray(rho, dtype=float))
    return bool(_in_normal_set_rows(rows, rho0, inst, tol)[0])


def upper_corner(rho0: float, inst: NetworkInstance) -> np.ndarray:
    """Componentwise least upper bound of the search box for a given rho0.

    Each coordinate is the smallest of the demand cap, the AP-power cap in
    share form, and the budget 1 - rho0 that any single share can claim.
    """
    c = transform_constants(inst)
    o = np.minimum(c.cap_demand, _ap_power_share_limit(rho0, inst))
    return np.maximum(np.minimum(o, 1.0 - rho0), 0.0)


def project_to_hyperplane(
    z, o, rho0: float, tol: float = 1e-10
) -> np.ndarray:
    """Point where the segment from z to o meets sum(rho) = 1 - rho0.

    Found by bisection on the segment parameter; the hyperplane is affine,
    so the closed-form parameter (1 - rho0 - sum z)/(sum o - sum z) must
    agree and is used as a cross-check in the test suite.  Raises
    NoCrossing when the segment stays on one side.
    """
    z = np.asarray(z, dtype=float)
    o = np.asarray(o, dtype=float)
    target = 1.0 - rho0
    sz = float(z.sum())
    so = float(o.sum())
    if sz > target + tol or so < target - tol:
        raise NoCrossing(
            f"segment sums [{sz!r}, {so!r}] do not straddle {target!r}"
        )
    if so - sz <= tol:
        return z.copy()
    t_lo, t_hi = 0.0, 1.0
    span = so - sz
    while t_hi - t_lo > tol:
        mid = 0.5 * (t_lo + t_hi)
        if sz + mid * span < target:
            t_lo = mid
        else:
            t_hi = mid
    t = 0.5 * (t_lo + t_hi)
    return z + t * (o - z)


def _objective_rows(rows: np.ndarray, rho0: float, scale: float) -> np.ndarray:
    s = rows.sum(axis=1)
    args = rho0 + s[:, None] - rows
    return scale * np.log(args).sum(axis=1) / LN2


def _dedup_key(row: np.ndarray, resolution: float) -> tuple:
    return tuple(np.rint(row / resolution).astype(np.int64))


def solve_subproblem(
    rho0: float,
    inst: NetworkInstance,
    cfg: Optional[SolverConfig] = None,
    trace: Optional[list] = None,
) -> SubproblemResult:
    """Poly-block minimization of the fixed-rho0 subproblem.

    Returns the incumbent share vector and objective value.  Status is
    Infeasible when the region is provably empty from this routine's view
    (origin outside G, or the box cannot reach the budget hyperplane) or
    when no projection ever landed inside G; IterCapReached when the safety
    cap fired first.  A returned Optimal vector lies on the hyperplane
    within bisection tolerance (the budget constraint binds at any optimum).

    The incumbent is only updated by projections that lie inside G: a
    hyperplane point reached from a vertex can fall outside the normal set,
    and accepting it would hand back an infeasible "solution".
    """
    cfg = cfg or SolverConfig()
    if trace is not None:
        trace.clear()
    n = inst.n_mus
    scale = (inst.price_bs - inst.price_ap) * inst.w_ap
    origin = np.zeros(n)
    if not in_normal_set(origin, rho0, inst):
        return SubproblemResult(None, np.inf, Status.INFEASIBLE, 0)
    o = upper_corner(rho0, inst)
    target = 1.0 - rho0
    if o.sum() < target - cfg.bisection_tol:
        return SubproblemResult(None, np.inf, Status.INFEASIBLE, 0)

    counter = itertools.count()
    heap = [(_objective_rows(origin[None, :], rho0, scale)[0], next(counter), tuple(origin))]
    seen = {_dedup_key(origin, cfg.bisection_tol)}
    cbs: Optional[np.ndarray] = None
    cbv = np.inf
    iters = 0
    hit_cap = False
    while heap:
        if iters >= cfg.max_polyblock_iters:
            hit_cap = True
            break
        val, _, zt = heapq.heappop(heap)
        if val >= cbv:
            # Remaining vertices are all at least as expensive: the pruned
            # vertex set is empty and the incumbent is the answer.
            break
        iters += 1
        z = np.asarray(zt)
        x = project_to_hyperplane(z, o, rho0, cfg.bisection_tol)
        gap = float(np.max(np.abs(x - z)))
        if in_normal_set(x, rho0, inst):
            vx = _objective_rows(x[None, :], rho0, scale)[0]
            if vx < cbv:
                cbv = vx
                cbs = x
        if trace is not None:
            trace.append(PolyblockTrace(iters, len(heap) + 1, cbv, gap))
        if gap < cfg.epsilon_polyblock:
            break
        moves = np.nonzero(x - z > 1e-15)[0]
        if moves.size == 0:
            break
        children = np.repeat(z[None, :], moves.size, axis=0)
        children[np.arange(moves.size), moves] = x[moves]
        vals = _objective_rows(children, rho0, scale)
        keep = _in_normal_set_rows(children, rho0, inst, MEMBERSHIP_TOL)
        keep &= vals < cbv
        for row, v in zip(children[keep], vals[keep]):
            key = _dedup_key(row, cfg.bisection_tol)
            if key not in seen:
                seen.add(key)
                heapq.heappush(heap, (float(v), next(counter), tuple(row)))

    if cbs is None:
        status = Status.ITER_CAP_REACHED if hit_cap else Status.INFEASIBLE
        return SubproblemResult(None, np.inf, status, iters)
    status = Status.ITER_CAP_REACHED if hit_cap else Status.OPTIMAL
    return SubproblemResult(tuple(float(v) for v in cbs), float(cbv), status, iters)


def _ray_extent(z: np.ndarray, rho0: float, inst: NetworkInstance, cfg: SolverConfig) -> float:
    """sup of lam in [0, 1] with lam * z inside G and the search box."""
    c = transform_constants(inst)
    box = np.minimum(
        np.minimum(c.cap_demand, _ap_power_share_limit(rho0, inst)), 1.0 - rho0
    )
    lam = 1.0
    pos = z > 0.0
    if pos.any():
        lam = min(lam, float(np.min(box[pos] / z[pos])))
    s = float(z.sum())
    others = s - z
    gaps = c.q - rho0
    mask = others > 0.0
    if mask.any():
        lam = min(lam, float(np.min(gaps[mask] / others[mask])))
    lam = max(lam, 0.0)

    def _total_power_ok(l: float) -> bool:
        scaled = l * z
        lhs = c.b * c.e * (rho0 + l * s - scaled) ** c.wb + c.a * scaled / rho0
        return bool((lhs <= c.k + MEMBERSHIP_TOL).all())

    if _total_power_ok(lam):
        return lam
    lo, hi = 0.0, lam
    while hi - lo > cfg.bisection_tol:
        mid = 0.5 * (lo + hi)
        if _total_power_ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def subproblem_feasible(
    rho0: float, inst: NetworkInstance, cfg: Optional[SolverConfig] = None
) -> bool:
    """Poly-block feasibility check for one grid point.

    Maximizes rho0 + sum(rho) over the normal set within the search box by
    the mirrored poly-block scheme: start from the box corner, project each
    candidate vertex along the ray from the origin onto the upper boundary
    of G by bisection, and split.  The subproblem is feasible iff the
    maximum reaches 1.  Exits early once a projected point certifies a
    value of 1 (feasible) or the best remaining vertex falls below 1
    (infeasible); hitting the iteration cap reports infeasible and logs.
    """
    cfg = cfg or SolverConfig()
    c = transform_constants(inst)
    n = inst.n_mus
    tol = MEMBERSHIP_TOL
    # A normal set is empty iff it misses the origin.
    if rho0 > np.min(c.q) + tol:
        return False
    if np.any(c.b * c.e * rho0**c.wb > c.k + tol):
        return False
    budget = 1.0 - rho0
    if budget <= tol:
        return True
    box = np.minimum(
        np.minimum(c.cap_demand, _ap_power_share_limit(rho0, inst)), budget
    )
    # Any point with sum(rho) >= budget needs rho_i >= 1 - q_i (the BS-power
    # family bounds everyone else's total), so these are exact pre-checks.
    lower = np.maximum(1.0 - c.q, 0.0)
    if np.any(lower > box + tol):
        return False
    if rho0 + box.sum() < 1.0 - tol:
        return False

    counter = itertools.count()
    corner = np.full(n, budget)
    heap = [(-(rho0 + corner.sum()), next(counter), tuple(corner))]
    seen = {_dedup_key(corner, cfg.bisection_tol)}
    best = -np.inf
    for _ in range(cfg.max_polyblock_iters):
        if not heap:
            return False
        neg_val, _, zt = heapq.heappop(heap)
        ub = -neg_val
        if ub < 1.0 - tol:
            return False
        z = np.asarray(zt)
        if in_normal_set(z, rho0, inst):
            return True  # the best vertex itself is feasible, so L = ub >= 1
        lam = _ray_extent(z, rho0, inst, cfg)
        x = lam * z
        best = max(best, rho0 + float(x.sum()))
        if best >= 1.0 - tol:
            return True
        if ub - best <= cfg.epsilon_polyblock:
            return False
        moves = np.nonzero(z - x > 1e-15)[0]
        for i in moves:
            child_val = ub - (z[i] - x[i])
            if child_val < 1.0 - tol:
                continue
            child = z.copy()
            child[i] = x[i]
            key = _dedup_key(child, cfg.bisection_tol)
            if key not in seen:
                seen.add(key)
                heapq.heappush(heap, (-child_val, next(counter), tuple(child)))
    logger.warning(
        "feasibility check hit the iteration cap at rho0=%g; treating as infeasible",
        rho0,
    )
    return False


def run(inst: NetworkInstance, cfg: Optional[SolverConfig] = None) -> TopSearchReport:
    """Full centralized solve with per-grid-point diagnostics."""
    cfg = cfg or SolverConfig()
    grid = rho0_grid(cfg.delta_top)
    best_value = np.inf
    best_rho0 = None
    best_rho = None
    mask = []
    total_iters = 0
    capped = 0
    for r0 in grid:
        r0 = float(r0)
        feasible = subproblem_feasible(r0, inst, cfg)
        if not feasible:
            mask.append(False)
            continue
        res = solve_subproblem(r0, inst, cfg)
        total_iters += res.iterations
        if res.status is Status.ITER_CAP_REACHED:
            capped += 1
        if res.rho is None:
            mask.append(False)
            continue
        mask.append(True)
        if res.value < best_value:
            best_value = res.value
            best_rho0 = r0
            best_rho = res.rho
    if best_rho is None:
        raise GlobalInfeasible("no rho0 grid point admits a feasible subproblem")
    profile = RhoProfile(rho0=best_rho0, rho=best_rho)
    solution = solution_from_rho(profile, inst)
    return TopSearchReport(
        solution=solution,
        objective=float(best_value),
        rho0_best=float(best_rho0),
        feasible_ratio=sum(mask) / len(grid),
        grid=tuple(float(g) for g in grid),
        feasible_mask=tuple(mask),
        total_subproblem_iterations=total_iters,
        iter_capped_points=capped,
    )


def solve(inst: NetworkInstance, cfg: Optional[SolverConfig] = None):
    """Best allocation found by the centralized search."""
    return run(inst, cfg).solution
