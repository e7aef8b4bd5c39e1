"""Closed-form layer: rates, SINR/power/share mappings, recovery, costs.

Everything here is a pure function of an instance and a decision vector.
Base-2 logarithms are computed as natural log divided by ln 2 throughout, so
golden numbers are bit-stable across platforms.

Power vectors toward the AP are plain float arrays (W) aligned with the
instance's MU order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .model import (
    AllocationSolution,
    DomainError,
    MuParams,
    NetworkInstance,
    RhoProfile,
    SinrProfile,
)

LN2 = math.log(2.0)

ArrayLike = Union[float, Sequence[float], np.ndarray]


class OverOffload(ValueError):
    """AP rate exceeds demand for some MU, so the BS residual is negative."""

    def __init__(self, indices: Sequence[int]):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(f"AP rate exceeds demand for MU(s) {self.indices}")


class SinrInfeasible(ValueError):
    """No finite power profile realizes the requested SINR targets."""


class RhoInfeasible(ValueError):
    """Share profile sums to >= 1, leaving no noise share."""


def log2(x: ArrayLike) -> np.ndarray:
    return np.log(x) / LN2


@dataclass(frozen=True)
class TransformConstants:
    """Per-instance constants of the transformed constraint system.

    a = n_A/g_iA and b = n_B/g_iB are the noise-over-gain ratios; e is the
    BS rate factor 2^(R_i/B); cap_demand the demand cap 1 - 2^(-R_i/W) on
    each share; q the BS-power bound ((P_iB^max + b)/(b e))^(B/W); k the
    shifted total-power budget P_i^max + b.  wb is W/B.
    """

    a: np.ndarray
    b: np.ndarray
    e: np.ndarray
    cap_demand: np.ndarray
    q: np.ndarray
    k: np.ndarray
    wb: float


@lru_cache(maxsize=64)
def transform_constants(inst: NetworkInstance) -> TransformConstants:
    a = inst.n_a / inst.g_ap
    b = inst.n_b / inst.g_bs
    e = np.exp2(inst.demand / inst.b_bs)
    cap_demand = -np.expm1(-LN2 * inst.demand / inst.w_ap)
    q = ((inst.p_bs_max + b) / (b * e)) ** (inst.b_bs / inst.w_ap)
    k = inst.p_total_max + b
    for arr in (a, b, e, cap_demand, q, k):
        arr.setflags(write=False)
    return TransformConstants(
        a=a, b=b, e=e, cap_demand=cap_demand, q=q, k=k, wb=inst.w_ap / inst.b_bs
    )


def rates_at_ap(p_ap: ArrayLike, inst: NetworkInstance) -> np.ndarray:
    """Per-MU AP uplink rates (bit/s) under mutual interference."""
    p = np.asarray(p_ap, dtype=float)
    received = p * inst.g_ap
    total = received.sum() + inst.n_a
    sinr = received / (total - received)
    return inst.w_ap * np.log1p(sinr) / LN2


def rate_at_bs(p_bs: float, mu: MuParams, inst: NetworkInstance) -> float:
    """BS uplink rate (bit/s) over the MU's orthogonal sub-channel."""
    return inst.b_bs * math.log1p(p_bs * mu.g_bs / inst.n_b) / LN2


def bs_residuals_from_pap(
    p_ap: ArrayLike, inst: NetworkInstance
) -> tuple[np.ndarray, np.ndarray]:
    """BS rates and powers that top each MU's demand up exactly.

    Uses the demand constraint held with equality (any slack is wasted
    money), so x_bs = R - x_ap and p_bs inverts the BS rate curve.  Raises
    OverOffload instead of clamping when the AP leg already exceeds demand
    beyond roundoff; callers are responsible for keeping x_ap <= R.
    """
    p = np.asarray(p_ap, dtype=float)
    received = p * inst.g_ap
    total = received.sum() + inst.n_a
    sinr = received / (total - received)
    x_ap = inst.w_ap * np.log1p(sinr) / LN2
    x_bs = inst.demand - x_ap
    tol = 1e-9 * np.maximum(inst.demand, 1.0)
    over = np.nonzero(x_bs < -tol)[0]
    if over.size:
        raise OverOffload(over)
    x_bs = np.maximum(x_bs, 0.0)
    c = transform_constants(inst)
    p_bs = c.b * np.expm1(LN2 * x_bs / inst.b_bs)
    return x_bs, p_bs


def sinr_from_powers(p_ap: ArrayLike, inst: NetworkInstance) -> SinrProfile:
    p = np.asarray(p_ap, dtype=float)
    received = p * inst.g_ap
    total = received.sum() + inst.n_a
    theta = received / (total - received)
    return SinrProfile(theta=tuple(float(t) for t in theta))


def powers_from_sinr(theta: SinrProfile, inst: NetworkInstance) -> np.ndarray:
    """Unique power profile achieving the targets, W.

    The targets must leave a positive noise share (load < 1); at or above
    that boundary no finite powers exist and SinrInfeasible is raised.
    """
    t = np.asarray(theta.theta, dtype=float)
    rho = t / (1.0 + t)
    load = rho.sum()
    if load >= 1.0:
        raise SinrInfeasible(f"sum theta/(1+theta) = {load!r} >= 1")
    return (inst.n_a / inst.g_ap) * rho / (1.0 - load)


def rho_from_theta(theta: ArrayLike) -> np.ndarray:
    """Map SINR theta >= 0 to its power share theta/(1+theta)."""
    t = np.asarray(theta, dtype=float)
    if np.any(t < 0.0):
        raise DomainError("theta must be >= 0")
    return t / (1.0 + t)


def theta_from_rho(rho: ArrayLike) -> np.ndarray:
    """Inverse share map rho/(1-rho); defined for rho in [0, 1)."""
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0.0) or np.any(r >= 1.0):
        raise DomainError("rho must lie in [0, 1)")
    return r / (1.0 - r)


@dataclass(frozen=True)
class CompleteOffloading:
    """Outcome of the complete-offloading test.

    When holds is True, sending every bit through the AP is optimal and
    theta_star carries the per-MU targets 2^(R_i/W) - 1; required_p_ap are
    the powers those targets need.
    """

    holds: bool
    theta_star: Optional[SinrProfile] = None
    required_p_ap: Optional[tuple[float, ...]] = None


def complete_offloading_check(inst: NetworkInstance) -> CompleteOffloading:
    """Test whether routing all demand to the AP is optimal.

    Two conditions must hold: the full-offload SINR targets leave a positive
    noise share at the AP, and the powers realizing them respect both the
    AP-interface and total power caps.  The BS-interface cap is untouched
    since no traffic goes there.
    """
    u = np.exp2(-inst.demand / inst.w_ap)
    margin = u.sum() - (inst.n_mus - 1)
    if not margin > 0.0:
        return CompleteOffloading(holds=False)
    p_req = (inst.n_a / inst.g_ap) * (1.0 - u) / margin
    cap = np.minimum(inst.p_total_max, inst.p_ap_max)
    if np.any(p_req > cap):
        return CompleteOffloading(holds=False)
    theta_star = SinrProfile(theta=tuple(float(x) for x in np.exp2(inst.demand / inst.w_ap) - 1.0))
    return CompleteOffloading(
        holds=True,
        theta_star=theta_star,
        required_p_ap=tuple(float(p) for p in p_req),
    )


@dataclass(frozen=True)
class BatchRecovery:
    """Vectorized recovery of many share profiles at once (rows of rho)."""

    cost: np.ndarray
    feasible: np.ndarray
    offload_ratio: np.ndarray
    x_ap: np.ndarray
    x_bs: np.ndarray
    p_ap: np.ndarray
    p_bs: np.ndarray


# Absolute slack allowed on power caps when judging feasibility, W.
POWER_TOL = 1e-9


def recover_batch(rho_rows: np.ndarray, inst: NetworkInstance) -> BatchRecovery:
    """Physical allocations for a batch of share vectors.

    rho_rows has shape (n, n_mus) with entries in [0, 1) and row sums < 1.
    Row sums >= 1 yield feasible=False rather than raising, so grid searches
    can sweep freely.
    """
    c = transform_constants(inst)
    rows = np.atleast_2d(np.asarray(rho_rows, dtype=float))
    s = rows.sum(axis=1)
    noise_share = 1.0 - s
    valid = noise_share > 0.0
    safe_share = np.where(valid, noise_share, 1.0)

    log1m = np.log1p(-rows)
    x_ap = -inst.w_ap * log1m / LN2
    x_bs = inst.demand - x_ap
    p_ap = c.a * rows / safe_share[:, None]
    p_bs = c.b * np.expm1(np.log(c.e) + c.wb * log1m)

    rate_tol = 1e-9 * np.maximum(inst.demand, 1.0)
    ok = valid.copy()
    ok &= (x_bs >= -rate_tol).all(axis=1)
    ok &= (p_ap <= inst.p_ap_max + POWER_TOL).all(axis=1)
    ok &= (np.maximum(p_bs, 0.0) <= inst.p_bs_max + POWER_TOL).all(axis=1)
    ok &= (p_ap + np.maximum(p_bs, 0.0) <= inst.p_total_max + POWER_TOL).all(axis=1)

    cost = inst.price_ap * x_ap.sum(axis=1) + inst.price_bs * x_bs.sum(axis=1)
    ratio = x_ap.sum(axis=1) / inst.demand.sum()
    return BatchRecovery(
        cost=cost,
        feasible=ok,
        offload_ratio=ratio,
        x_ap=x_ap,
        x_bs=x_bs,
        p_ap=p_ap,
        p_bs=p_bs,
    )


def solution_from_rho(profile: RhoProfile, inst: NetworkInstance) -> AllocationSolution:
    """Recover the physical allocation behind a share profile.

    AP power is a_i * rho_i / (1 - sum rho); AP rate W*log2(1/(1-rho_i));
    the BS leg carries the demand remainder.  The rate split satisfies
    x_ap + x_bs = demand identically (same log term with opposite signs).
    Raises RhoInfeasible when the shares leave no noise share at all.
    """
    rho = np.asarray(profile.rho, dtype=float)
    if rho.size != inst.n_mus:
        raise DomainError(
            f"profile has {rho.size} MUs, instance has {inst.n_mus}"
        )
    if rho.sum() >= 1.0:
        raise RhoInfeasible(f"sum rho = {rho.sum()!r} >= 1")
    out = recover_batch(rho[None, :], inst)
    x_bs = out.x_bs[0]
    p_bs = out.p_bs[0]
    # Snap roundoff-scale negatives from the full-offload corner to zero;
    # anything larger stays visible and is already flagged infeasible.
    rate_tol = 1e-9 * np.maximum(inst.demand, 1.0)
    snap = (x_bs < 0.0) & (x_bs >= -rate_tol)
    x_bs = np.where(snap, 0.0, x_bs)
    p_bs = np.where(x_bs == 0.0, 0.0, p_bs)
    return AllocationSolution(
        x_ap=tuple(float(v) for v in out.x_ap[0]),
        x_bs=tuple(float(v) for v in x_bs),
        p_ap=tuple(float(v) for v in out.p_ap[0]),
        p_bs=tuple(float(v) for v in p_bs),
        total_cost=float(inst.price_ap * out.x_ap[0].sum() + inst.price_bs * x_bs.sum()),
        feasible=bool(out.feasible[0]),
        offload_ratio=float(out.x_ap[0].sum() / inst.demand.sum()),
        rho=profile,
    )


def total_cost(solution: AllocationSolution, inst: NetworkInstance) -> float:
    """Cost rate in $/s: price-weighted sum of all rates."""
    return float(
        inst.price_ap * sum(solution.x_ap) + inst.price_bs * sum(solution.x_bs)
    )


def evaluate_constraints(
    solution: AllocationSolution, inst: NetworkInstance
) -> dict[str, np.ndarray]:
    """Signed per-MU constraint slacks; negative means violated.

    Keys: the three power caps, the nonnegativity of the BS leg (the
    no-over-offload condition), and the demand-split residual
    x_ap + x_bs - demand (zero when the demand is met exactly).
    """
    x_ap = np.asarray(solution.x_ap)
    x_bs = np.asarray(solution.x_bs)
    p_ap = np.asarray(solution.p_ap)
    p_bs = np.asarray(solution.p_bs)
    return {
        "p_ap_cap": inst.p_ap_max - p_ap,
        "p_bs_cap": inst.p_bs_max - p_bs,
        "p_total_cap": inst.p_total_max - (p_ap + p_bs),
        "bs_rate_nonneg": x_bs.copy(),
        "demand_met": x_ap + x_bs - inst.demand,
    }
