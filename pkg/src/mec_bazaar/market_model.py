"""Domain types and pure economic functions of the resource market.

Everything in this module is a pure function of its arguments: clearing
prices, supply shares, supplier cost/profit and customer utility/payout/
payoff. Derived per-slot quantities (aggregate load, price, supply split)
are never stored on the scenario; they are always recomputed from the
strategy matrices.

Conventions: demand and supply are measured in task-units, prices in
price-units per task-unit. Suppliers are indexed j = 0..M-1, customers
i = 0..N-1, slots t = 0..T-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateMarketError,
    DimensionError,
    DomainError,
    NoClearingPriceError,
)

__all__ = [
    "SolverConfig",
    "Scenario",
    "BidMatrix",
    "DemandMatrix",
    "PiecewiseBid",
    "MarketState",
    "AgentEconomics",
    "aggregate_load",
    "clearing_price_affine",
    "clearing_price_piecewise",
    "supply_share",
    "supply_allocation",
    "es_cost",
    "es_cost_prime",
    "es_profit",
    "te_utility",
    "te_payout",
    "te_payoff",
    "compute_market_state",
    "compute_agent_economics",
]


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Step-size schedule and stopping rule for the bidding games.

    ``eta1`` drives supplier bid ascent, ``eta2`` customer demand ascent;
    both shrink geometrically once per outer iteration. The loop stops as
    soon as the Frobenius distance between consecutive demand matrices
    falls below ``epsilon`` (divided by the current demand norm when
    ``relative_stopping`` is set).
    """

    eta1_init: float = 0.05
    eta1_decay: float = 0.985
    eta2_init: float = 0.01
    eta2_decay: float = 0.98
    epsilon: float = 0.3
    lambda_init: float = 20000.0
    max_iterations: int = 5000
    singularity_delta: float = 1e-6
    relative_stopping: bool = False

    def validate(self) -> None:
        if not (self.eta1_init > 0 and self.eta2_init > 0):
            raise DomainError("step sizes must be positive")
        if not (0 < self.eta1_decay <= 1 and 0 < self.eta2_decay <= 1):
            raise DomainError("step-size decays must lie in (0, 1]")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.lambda_init < 0:
            raise DomainError("lambda_init must be nonnegative")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not (0 <= self.singularity_delta < 0.5):
            raise DomainError("singularity_delta must lie in [0, 0.5)")

    def overridden(self, **changes) -> "SolverConfig":
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg


@dataclass
class Scenario:
    """Immutable description of one market instance.

    ``cost_coeffs`` holds one quadratic-cost triple (a2, a1, a0) per
    supplier. ``utility_w`` / ``utility_alpha`` are per-customer per-slot
    utility coefficients. ``initial_demand`` is the drawn shiftable
    profile chi0; its row sums define ``shiftable_total`` and it doubles
    as the "before algorithm" demand profile.
    """

    num_es: int
    num_te: int
    num_slots: int
    cost_coeffs: np.ndarray      # (M, 3) columns a2, a1, a0
    utility_w: np.ndarray        # (N, T)
    utility_alpha: np.ndarray    # (N, T)
    base_demand: np.ndarray      # (N, T)
    shiftable_total: np.ndarray  # (N,)
    initial_demand: np.ndarray   # (N, T)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.num_es < 2:
            raise DomainError("need at least two suppliers (num_es >= 2)")
        if self.num_te < 1:
            raise DomainError("need at least one customer (num_te >= 1)")
        if self.num_slots < 1:
            raise DomainError("need at least one slot (num_slots >= 1)")
        m, n, t = self.num_es, self.num_te, self.num_slots
        shapes = {
            "cost_coeffs": (self.cost_coeffs, (m, 3)),
            "utility_w": (self.utility_w, (n, t)),
            "utility_alpha": (self.utility_alpha, (n, t)),
            "base_demand": (self.base_demand, (n, t)),
            "shiftable_total": (self.shiftable_total, (n,)),
            "initial_demand": (self.initial_demand, (n, t)),
        }
        for name, (arr, expect) in shapes.items():
            if arr.shape != expect:
                raise DimensionError(
                    f"{name} has shape {arr.shape}, expected {expect}")
        if np.any(self.cost_coeffs[:, 0] <= 0):
            raise DomainError("cost_coeffs: a2 must be positive")
        if np.any(self.cost_coeffs[:, 1:] < 0):
            raise DomainError("cost_coeffs: a1 and a0 must be nonnegative")
        if np.any(self.utility_alpha <= 0):
            raise DomainError("utility_alpha must be positive")
        if np.any(self.utility_w <= 0):
            raise DomainError("utility_w must be positive")
        if np.any(self.base_demand < 0):
            raise DomainError("base_demand must be nonnegative")
        if np.any(self.shiftable_total < 0):
            raise DomainError("shiftable_total must be nonnegative")
        if np.any(self.initial_demand < 0):
            raise DomainError("initial_demand must be nonnegative")
        row_sums = self.initial_demand.sum(axis=1)
        scale = np.maximum(np.abs(self.shiftable_total), 1.0)
        if np.any(np.abs(row_sums - self.shiftable_total) > 1e-9 * scale):
            raise DomainError(
                "initial_demand row sums must equal shiftable_total")
        self.solver.validate()


@dataclass
class BidMatrix:
    """Affine supply slopes, one per supplier per slot (M x T)."""

    values: np.ndarray

    def validate(self) -> None:
        if self.values.ndim != 2:
            raise DimensionError("bid matrix must be two-dimensional")
        if np.any(self.values < 0):
            raise DomainError("bids must be nonnegative")


@dataclass
class DemandMatrix:
    """Shiftable demand, one row per customer (N x T).

    Row i must sum to that customer's fixed daily total.
    """

    values: np.ndarray
    totals: np.ndarray

    def validate(self) -> None:
        if self.values.ndim != 2 or self.totals.shape != (self.values.shape[0],):
            raise DimensionError("demand matrix and totals do not conform")
        if np.any(self.values < 0):
            raise DomainError("demand must be nonnegative")
        sums = self.values.sum(axis=1)
        scale = np.maximum(np.abs(self.totals), 1.0)
        if np.any(np.abs(sums - self.totals) > 1e-9 * scale):
            raise DomainError("demand rows must sum to the daily totals")


@dataclass
class PiecewiseBid:
    """Piecewise-linear supply family for a whole market at one slot.

    ``breakpoints`` are the K-1 interior segment boundaries shared by all
    suppliers (the last segment is unbounded above); ``slopes`` holds one
    row of K segment slopes per supplier. With no breakpoints this is
    exactly the affine family.
    """

    breakpoints: np.ndarray  # (K-1,) strictly increasing, positive
    slopes: np.ndarray       # (M, K)

    def validate(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float)
        sl = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        if sl.shape[1] != bp.size + 1:
            raise DimensionError(
                f"need {bp.size + 1} slope segments for {bp.size} breakpoints,"
                f" got {sl.shape[1]}")
        if bp.size and (np.any(bp <= 0) or np.any(np.diff(bp) <= 0)):
            raise DomainError("breakpoints must be positive and strictly increasing")
        if np.any(sl < 0):
            raise DomainError("slopes must be nonnegative")


@dataclass
class MarketState:
    """Per-slot derived quantities: load, clearing price, supply split."""

    load: np.ndarray    # (T,)
    price: np.ndarray   # (T,)
    supply: np.ndarray  # (M, T)


@dataclass
class AgentEconomics:
    """Per-agent economics at a fixed strategy profile.

    Identities: ``es_profit = es_revenue - cost`` entrywise and
    ``te_payoff = sum_t utility - sum_t payout`` per customer.
    """

    es_profit: np.ndarray   # (M, T)
    es_revenue: np.ndarray  # (M, T)
    te_payout: np.ndarray   # (N, T)
    te_payoff: np.ndarray   # (N,)


# --------------------------------------------------------------------------
# Pure operations
# --------------------------------------------------------------------------

def aggregate_load(chi: np.ndarray, base: np.ndarray, t: int) -> float:
    """Total demand SUM_i(chi[i][t] + r[i][t]) at slot ``t``."""
    chi = np.asarray(chi, dtype=float)
    base = np.asarray(base, dtype=float)
    if chi.shape != base.shape:
        raise DimensionError(
            f"demand {chi.shape} and base demand {base.shape} do not conform")
    if not 0 <= t < chi.shape[1]:
        raise DimensionError(f"slot {t} out of range for T={chi.shape[1]}")
    return float(chi[:, t].sum() + base[:, t].sum())


def clearing_price_affine(lambda_col: np.ndarray, load: float) -> float:
    """Uniform price load / SUM_j lambda_j for the affine supply family."""
    lam = np.asarray(lambda_col, dtype=float)
    if np.any(lam < 0):
        raise DomainError("bids must be nonnegative")
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateMarketError(
            "all bids are zero: clearing price undefined")
    if load < 0:
        raise DomainError("load must be nonnegative")
    return float(load / total)


def clearing_price_piecewise(bids: PiecewiseBid, load: float) -> float:
    """Clearing price for the piecewise-linear supply family.

    Searches segments from the lowest price upward and returns the first
    candidate consistent with its own segment. The family as printed is
    discontinuous at breakpoints, so a load can fall inside a jump; that
    raises :class:`NoClearingPriceError` carrying the bracketing
    breakpoint instead of silently picking a side.
    """
    bids.validate()
    if load < 0:
        raise DomainError("load must be nonnegative")
    bp = np.asarray(bids.breakpoints, dtype=float)
    sl = np.atleast_2d(np.asarray(bids.slopes, dtype=float))
    n_seg = sl.shape[1]
    for k in range(n_seg):
        lower = 0.0 if k == 0 else float(bp[k - 1])
        slope_sum = float(sl[:, k].sum())
        const = 0.0 if k == 0 else float(bp[k - 1] * sl[:, k - 1].sum())
        if slope_sum <= 0.0:
            if load == const:
                return lower
            continue
        candidate = (load - const) / slope_sum
        if k > 0 and candidate <= lower:
            # Supply already jumped past this load at the breakpoint.
            raise NoClearingPriceError(
                f"load {load} falls in the supply discontinuity at price "
                f"{lower}", breakpoint_price=lower)
        upper = float(bp[k]) if k < n_seg - 1 else np.inf
        if (candidate >= 0.0 if k == 0 else candidate > lower) and candidate <= upper:
            return float(candidate)
    raise NoClearingPriceError(
        f"no segment clears load {load}",
        breakpoint_price=float(bp[-1]) if bp.size else 0.0)


def supply_allocation(lambda_col: np.ndarray, load: float) -> np.ndarray:
    """Per-supplier share lambda_j * load / SUM(lambda); sums to load."""
    lam = np.asarray(lambda_col, dtype=float)
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateMarketError("all bids are zero: shares undefined")
    return lam * (load / total)


def supply_share(lambda_col: np.ndarray, j: int, load: float) -> float:
    """Share of ``load`` won by supplier ``j`` under proportional split."""
    return float(supply_allocation(lambda_col, load)[j])


def es_cost(coeffs, f):
    """Quadratic serving cost a2*f^2 + a1*f + a0."""
    a2, a1, a0 = coeffs
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("supplied load must be nonnegative")
    out = a2 * f * f + a1 * f + a0
    return float(out) if out.ndim == 0 else out


def es_cost_prime(coeffs, f):
    """Marginal cost 2*a2*f + a1."""
    a2, a1, _ = coeffs
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("supplied load must be nonnegative")
    out = 2.0 * a2 * f + a1
    return float(out) if out.ndim == 0 else out


def es_profit(lambda_col: np.ndarray, j: int, load: float, coeffs) -> float:
    """Supplier j's profit: revenue share minus quadratic cost.

    Equals lambda_j * load^2 / (SUM lambda)^2 - C_j(share).
    """
    lam = np.asarray(lambda_col, dtype=float)
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateMarketError("all bids are zero: profit undefined")
    f_j = lam[j] * load / total
    return float(lam[j] * load * load / (total * total) - es_cost(coeffs, f_j))


def te_utility(w, alpha, x):
    """Saturating quadratic task utility.

    w*x - (alpha/2)*x^2 up to the saturation point x = w/alpha, constant
    w^2/(2*alpha) beyond it; continuous and nondecreasing.
    """
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("served demand must be nonnegative")
    cap = w / alpha
    out = np.where(x <= cap, w * x - 0.5 * alpha * x * x,
                   w * w / (2.0 * alpha))
    return float(out) if out.ndim == 0 else out


def te_payout(chi_it, r_it, price):
    """Slot payout (chi + r) * price."""
    chi_it = np.asarray(chi_it, dtype=float)
    r_it = np.asarray(r_it, dtype=float)
    price = np.asarray(price, dtype=float)
    if np.any(chi_it < 0) or np.any(r_it < 0) or np.any(price < 0):
        raise DomainError("payout inputs must be nonnegative")
    out = (chi_it + r_it) * price
    return float(out) if out.ndim == 0 else out


def te_payoff(chi_row, r_row, prices, w_row, alpha_row) -> float:
    """Daily payoff: SUM_t [utility(chi+r) - (chi+r) * price]."""
    chi_row = np.asarray(chi_row, dtype=float)
    r_row = np.asarray(r_row, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if not (chi_row.shape == r_row.shape == prices.shape):
        raise DimensionError("row inputs must share one length-T shape")
    x = chi_row + r_row
    util = te_utility(w_row, alpha_row, x)
    return float(np.sum(util - te_payout(chi_row, r_row, prices)))


def compute_market_state(chi: np.ndarray, base: np.ndarray,
                         bids: np.ndarray) -> MarketState:
    """Derive per-slot load, price and supply split from strategies."""
    chi = np.asarray(chi, dtype=float)
    base = np.asarray(base, dtype=float)
    bids = np.asarray(bids, dtype=float)
    if chi.shape != base.shape:
        raise DimensionError("demand and base demand must conform")
    if bids.shape[1] != chi.shape[1]:
        raise DimensionError("bids and demand must agree on slot count")
    load = (chi + base).sum(axis=0)
    totals = bids.sum(axis=0)
    if np.any(totals <= 0):
        slot = int(np.argmax(totals <= 0))
        raise DegenerateMarketError(
            f"all bids are zero at slot {slot}", slot=slot)
    price = load / totals
    supply = bids * (load / totals)
    return MarketState(load=load, price=price, supply=supply)


def compute_agent_economics(chi: np.ndarray, base: np.ndarray,
                            bids: np.ndarray, cost_coeffs: np.ndarray,
                            w: np.ndarray, alpha: np.ndarray,
                            state: MarketState | None = None) -> AgentEconomics:
    """Evaluate all agents' economics at a fixed strategy profile."""
    if state is None:
        state = compute_market_state(chi, base, bids)
    a2 = cost_coeffs[:, 0][:, None]
    a1 = cost_coeffs[:, 1][:, None]
    a0 = cost_coeffs[:, 2][:, None]
    revenue = state.supply * state.price[None, :]
    cost = a2 * state.supply ** 2 + a1 * state.supply + a0
    profit = revenue - cost
    x = np.asarray(chi, dtype=float) + np.asarray(base, dtype=float)
    payout = x * state.price[None, :]
    utility = te_utility(w, alpha, x)
    payoff = (utility - payout).sum(axis=1)
    return AgentEconomics(es_profit=profit, es_revenue=revenue,
                          te_payout=payout, te_payoff=payoff)
