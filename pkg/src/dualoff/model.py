"""Problem data for the dual-connectivity offloading cost minimizer.

Units are fixed package-wide: bandwidths in Hz, rates in bit/s, powers in W,
prices in $/bit.  Prices quoted in $/GB are converted at the ingestion
boundary with 1 GB = 1e9 bits; this is the convention under which the bundled
benchmark scenarios produce costs in $/s (e.g. eight users offloading
2 Mbit/s each at 2 $/GB cost 0.032 $/s).

Mobile users (MUs) are identified by zero-based index in list order; every
per-MU vector in the package aligns with that order.  All types here are
immutable value objects and safe to share across parallel workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

GB_IN_BITS = 1e9


class DomainError(ValueError):
    """A value lies outside the mathematical domain of an operation."""


class GlobalInfeasible(Exception):
    """No feasible allocation exists for the instance."""


class AssumptionViolated(Exception):
    """An instance violates a precondition of the requested solver."""


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_CAP_REACHED = "IterCapReached"
    ASSUMPTION_VIOLATED = "AssumptionViolated"


@dataclass(frozen=True)
class MuParams:
    """Static parameters of one mobile user.

    g_ap / g_bs are channel power gains (dimensionless) toward the access
    point and the base station.  p_ap_max, p_bs_max and p_total_max are the
    per-interface and combined transmit-power caps in W; the caps are
    independent (p_total_max may exceed or undercut their sum).  demand is
    the required throughput in bit/s.
    """

    g_ap: float
    g_bs: float
    p_ap_max: float
    p_bs_max: float
    p_total_max: float
    demand: float


@dataclass(frozen=True)
class NetworkInstance:
    """One macro BS plus one shared-channel AP serving ``mus``.

    w_ap is the AP channel bandwidth shared by all MUs; b_bs is the
    orthogonal per-MU bandwidth granted by the BS; n0 the noise power
    density in W/Hz.  Prices are per bit, with price_bs > price_ap in the
    operating regime this package targets (offloading must be worth it).
    """

    mus: tuple[MuParams, ...]
    w_ap: float
    b_bs: float
    n0: float
    price_ap: float
    price_bs: float

    @classmethod
    def with_gb_prices(
        cls,
        mus: Iterable[MuParams],
        w_ap: float,
        b_bs: float,
        n0: float,
        price_ap_per_gb: float,
        price_bs_per_gb: float,
    ) -> "NetworkInstance":
        """Build an instance from $/GB prices (converted at 1 GB = 1e9 bits)."""
        return cls(
            mus=tuple(mus),
            w_ap=w_ap,
            b_bs=b_bs,
            n0=n0,
            price_ap=price_ap_per_gb / GB_IN_BITS,
            price_bs=price_bs_per_gb / GB_IN_BITS,
        )

    @property
    def n_mus(self) -> int:
        return len(self.mus)

    @property
    def n_a(self) -> float:
        """Noise power over the AP channel, W."""
        return self.w_ap * self.n0

    @property
    def n_b(self) -> float:
        """Noise power over one BS sub-channel, W."""
        return self.b_bs * self.n0

    # Cached per-MU vectors; cached_property stores straight into __dict__,
    # which keeps the dataclass hashable and equality based on fields only.
    @cached_property
    def g_ap(self) -> np.ndarray:
        return np.array([m.g_ap for m in self.mus], dtype=float)

    @cached_property
    def g_bs(self) -> np.ndarray:
        return np.array([m.g_bs for m in self.mus], dtype=float)

    @cached_property
    def p_ap_max(self) -> np.ndarray:
        return np.array([m.p_ap_max for m in self.mus], dtype=float)

    @cached_property
    def p_bs_max(self) -> np.ndarray:
        return np.array([m.p_bs_max for m in self.mus], dtype=float)

    @cached_property
    def p_total_max(self) -> np.ndarray:
        return np.array([m.p_total_max for m in self.mus], dtype=float)

    @cached_property
    def demand(self) -> np.ndarray:
        return np.array([m.demand for m in self.mus], dtype=float)

    def with_demand(self, demand_bps: float) -> "NetworkInstance":
        """Copy of the instance with every MU's demand set to demand_bps."""
        return replace(
            self, mus=tuple(replace(m, demand=demand_bps) for m in self.mus)
        )


def validate_instance(inst: NetworkInstance) -> list[str]:
    """Collect the instance's well-formedness violations.

    Returns an empty list iff the instance satisfies every invariant; each
    entry names the offending field and rule.  Never raises: degenerate
    instances are constructible on purpose so issues surface here.
    """
    problems: list[str] = []
    if inst.n_mus < 1:
        problems.append("mus: at least one MU is required")
    for i, mu in enumerate(inst.mus):
        for name in ("g_ap", "g_bs", "p_ap_max", "p_bs_max", "p_total_max", "demand"):
            value = getattr(mu, name)
            if not value > 0.0:
                problems.append(f"mus[{i}].{name}: must be strictly positive, got {value!r}")
    for name in ("w_ap", "b_bs", "n0"):
        value = getattr(inst, name)
        if not value > 0.0:
            problems.append(f"{name}: must be strictly positive, got {value!r}")
    if not inst.price_ap > 0.0:
        problems.append(f"price_ap: must be strictly positive, got {inst.price_ap!r}")
    if not inst.price_bs > inst.price_ap:
        problems.append(
            "price_bs: must strictly exceed price_ap "
            f"(got price_bs={inst.price_bs!r}, price_ap={inst.price_ap!r})"
        )
    return problems


@dataclass(frozen=True)
class RhoProfile:
    """SINR-share coordinates: slack rho0 in (0,1], per-MU rho_i in [0,1).

    rho_i = theta_i / (1 + theta_i) is MU i's share of the AP received power,
    and rho0 the leftover noise share.  A profile is "closed" when
    rho0 + sum(rho) equals one; solver outputs are closed up to their
    configured tolerance, intermediate points need not be.
    """

    rho0: float
    rho: tuple[float, ...]

    def __post_init__(self) -> None:
        if not 0.0 < self.rho0 <= 1.0:
            raise DomainError(f"rho0 must lie in (0, 1], got {self.rho0!r}")
        for i, r in enumerate(self.rho):
            if not 0.0 <= r < 1.0:
                raise DomainError(f"rho[{i}] must lie in [0, 1), got {r!r}")

    @property
    def rho_sum(self) -> float:
        return float(sum(self.rho))

    @property
    def closure_gap(self) -> float:
        """rho0 + sum(rho) - 1; zero for a closed profile."""
        return self.rho0 + self.rho_sum - 1.0

    def is_closed(self, tol: float = 1e-9) -> bool:
        return abs(self.closure_gap) <= tol

    @classmethod
    def closed_from_rho(cls, rho: Sequence[float]) -> "RhoProfile":
        """Profile with rho0 chosen so the coordinates sum to one."""
        rho = tuple(float(r) for r in rho)
        return cls(rho0=1.0 - sum(rho), rho=rho)


@dataclass(frozen=True)
class SinrProfile:
    """Per-MU target (or achieved) SINR at the AP, dimensionless, >= 0.

    Realizable profiles satisfy load < 1; the power mapping raises when fed
    an overloaded profile, so overloaded targets remain constructible for
    boundary tests.
    """

    theta: tuple[float, ...]

    def __post_init__(self) -> None:
        for i, t in enumerate(self.theta):
            if not t >= 0.0:
                raise DomainError(f"theta[{i}] must be >= 0, got {t!r}")

    @property
    def load(self) -> float:
        """sum of theta/(1+theta); must stay below 1 for finite powers."""
        return float(sum(t / (1.0 + t) for t in self.theta))


@dataclass(frozen=True)
class AllocationSolution:
    """Recovered physical allocation.

    Per-MU rates (bit/s) and transmit powers (W) to AP and BS, the total
    cost rate in $/s, a feasibility verdict against the power caps and the
    demand split, and the offloaded fraction of total demand.
    """

    x_ap: tuple[float, ...]
    x_bs: tuple[float, ...]
    p_ap: tuple[float, ...]
    p_bs: tuple[float, ...]
    total_cost: float
    feasible: bool
    offload_ratio: float
    rho: Optional[RhoProfile] = None


@dataclass(frozen=True)
class SolverConfig:
    """Tunable solver resolutions; defaults match the bundled benchmarks.

    delta_top is the rho0 line-search step, delta_sub the currency quantum
    of the distributed auction, epsilon_polyblock the vertex-gap stopping
    threshold (max-norm in rho space), bisection_tol the scalar-search
    precision, and max_polyblock_iters a safety cap per subproblem.
    """

    delta_top: float = 0.005
    delta_sub: float = 0.001
    epsilon_polyblock: float = 1e-4
    bisection_tol: float = 1e-10
    max_polyblock_iters: int = 20000

    def __post_init__(self) -> None:
        for name in ("delta_top", "delta_sub", "epsilon_polyblock", "bisection_tol"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"{name} must be strictly positive")
        if self.delta_top > 0.5:
            raise DomainError("delta_top must be <= 0.5")
        if self.max_polyblock_iters <= 0:
            raise DomainError("max_polyblock_iters must be strictly positive")


@dataclass(frozen=True)
class SubproblemResult:
    """Outcome of one fixed-rho0 subproblem."""

    rho: Optional[tuple[float, ...]]
    value: float
    status: Status
    iterations: int = 0


@dataclass(frozen=True)
class TopSearchReport:
    """Full outcome of a rho0 line search, for diagnostics and reporting.

    feasible_ratio is the fraction of grid points whose subproblem was
    feasible; grid and feasible_mask expose the per-point outcomes.
    total_subproblem_iterations counts polyblock iterations (centralized)
    or granted currency units (distributed).
    """

    solution: AllocationSolution
    objective: float
    rho0_best: float
    feasible_ratio: float
    grid: tuple[float, ...]
    feasible_mask: tuple[bool, ...]
    total_subproblem_iterations: int
    iter_capped_points: int = 0


def rho0_grid(delta_top: float) -> np.ndarray:
    """Line-search grid {delta, 2*delta, ...} capped at 1.0 inclusive."""
    n = int(np.floor(1.0 / delta_top + 1e-9))
    grid = np.arange(1, n + 1, dtype=float) * delta_top
    grid[-1] = min(grid[-1], 1.0)
    return grid
