"""Both noncooperative games as iterative updates, and their orchestration.

One outer iteration does, in order: per-slot supplier bid ascent (all
suppliers step simultaneously from the old column), a price refresh from
the fresh bids, then one demand ascent step for every customer against
that refreshed price (Jacobi style: all customers move from the same
snapshot). Step sizes decay geometrically once per outer iteration and
the loop stops when consecutive demand matrices are closer than epsilon
in Frobenius norm.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateMarketError, DomainError
from .market_model import (
    AgentEconomics,
    MarketState,
    Scenario,
    SolverConfig,
    compute_agent_economics,
    compute_market_state,
    es_cost_prime,
)

__all__ = [
    "IterationTrace",
    "EquilibriumResult",
    "es_surrogate_gradient",
    "es_update_step",
    "te_gradient",
    "project_simplex",
    "te_update_step",
    "run_dtoa",
    "supplier_fixed_point",
]

STATUS_CONVERGED = "converged"
STATUS_ITERATION_CAP = "iteration-cap-reached"


@dataclass
class IterationTrace:
    """Per-iteration convergence record of one solver run.

    ``delta`` is the Frobenius distance between consecutive demand
    matrices; ``price`` and ``load`` are the per-slot vectors the
    customers reacted to in that iteration. Full strategy snapshots are
    kept every ``snapshot_stride`` iterations when requested.
    """

    iteration: np.ndarray                  # (G,)
    price: np.ndarray                      # (G, T)
    load: np.ndarray                       # (G, T)
    delta: np.ndarray                      # (G,)
    eta1: np.ndarray                       # (G,)
    eta2: np.ndarray                       # (G,)
    snapshot_stride: int = 0
    snapshot_iterations: list = field(default_factory=list)
    snapshot_demand: list = field(default_factory=list)
    snapshot_bids: list = field(default_factory=list)


@dataclass
class EquilibriumResult:
    bids: np.ndarray        # (M, T)
    demand: np.ndarray      # (N, T)
    state: MarketState
    economics: AgentEconomics
    trace: IterationTrace
    status: str
    iterations_used: int


# --------------------------------------------------------------------------
# Single-agent update primitives (reference implementations; the solver
# loop runs the vectorized kernels in _kernels)
# --------------------------------------------------------------------------

def es_surrogate_gradient(lambda_col, j: int, load: float, coeffs,
                          guard: float = 1e-6) -> float:
    """Supplier j's bid-ascent direction at one slot.

    price - ((L - f_j)/(L - 2 f_j)) * C'_j(f_j) with f_j the proportional
    share. On the Lemma-1 region f_j < L/2 this has the same sign as the
    true profit derivative (they differ by the positive factor
    (L - 2 f_j)/sum(bids)). Once f_j >= (1/2 - guard) * L the factor
    blows up, so the direction is clamped to -price, pushing the bid back
    toward the stable region.
    """
    lam = np.asarray(lambda_col, dtype=float)
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateMarketError("all bids are zero: gradient undefined")
    price = load / total
    f_j = lam[j] * load / total
    if f_j >= (0.5 - guard) * load:
        return float(-price)
    marginal = es_cost_prime(coeffs, f_j)
    return float(price - (load - f_j) / (load - 2.0 * f_j) * marginal)


def es_update_step(bids: np.ndarray, t: int, loads: np.ndarray,
                   scenario: Scenario, eta1: float) -> np.ndarray:
    """One projected ascent step for every supplier at slot ``t``.

    All suppliers step simultaneously from the old column; the result is
    clipped at zero.
    """
    if eta1 <= 0:
        raise DomainError("eta1 must be positive")
    col = np.asarray(bids, dtype=float)[:, t]
    grads = np.array([
        es_surrogate_gradient(col, j, float(loads[t]),
                              scenario.cost_coeffs[j],
                              scenario.solver.singularity_delta)
        for j in range(col.size)
    ])
    return np.maximum(col + eta1 * grads, 0.0)


def te_gradient(chi: np.ndarray, base: np.ndarray, i: int, t: int,
                lambda_col: np.ndarray, w: np.ndarray,
                alpha: np.ndarray) -> float:
    """Exact partial derivative of customer i's payoff in chi[i][t].

    U'(x) - (L_t + x) / sum(bids) with x = chi[i][t] + r[i][t]; the second
    term carries the customer's own impact on the clearing price.
    """
    lam = np.asarray(lambda_col, dtype=float)
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateMarketError("all bids are zero: gradient undefined")
    x = float(chi[i, t] + base[i, t])
    load = float(chi[:, t].sum() + base[:, t].sum())
    w_it = float(np.asarray(w)[i, t])
    a_it = float(np.asarray(alpha)[i, t])
    marginal_utility = w_it - a_it * x if x * a_it <= w_it else 0.0
    return marginal_utility - (load + x) / total


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto {x >= 0, sum x = total}."""
    if total < 0:
        raise DomainError("projection total must be nonnegative")
    v = np.asarray(v, dtype=float)
    return _kernels.project_rows(v[None, :].copy(),
                                 np.array([float(total)]))[0]


def te_update_step(chi: np.ndarray, i: int, base: np.ndarray,
                   bids: np.ndarray, eta2: float, w: np.ndarray,
                   alpha: np.ndarray) -> np.ndarray:
    """One projected ascent step of customer i's whole demand row."""
    if eta2 <= 0:
        raise DomainError("eta2 must be positive")
    t_count = chi.shape[1]
    grad = np.array([
        te_gradient(chi, base, i, t, bids[:, t], w, alpha)
        for t in range(t_count)
    ])
    total = float(chi[i].sum())
    return project_simplex(chi[i] + eta2 * grad, total)


# --------------------------------------------------------------------------
# Orchestration
# --------------------------------------------------------------------------

def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    step = math.ceil(n / parts)
    return [(s, min(s + step, n)) for s in range(0, n, step)]


def _run_es_phase(lam, load, a2, a1, eta1, delta, pool, slot_chunks):
    if pool is None:
        return _kernels.es_phase(lam, load, a2, a1, eta1, delta)
    futures = [
        pool.submit(_kernels.es_phase, lam[:, s:e].copy(), load[s:e],
                    a2, a1, eta1, delta)
        for s, e in slot_chunks
    ]
    parts = [f.result() for f in futures]
    new_lam = np.concatenate([p[0] for p in parts], axis=1)
    totals = np.concatenate([p[1] for p in parts])
    price = np.concatenate([p[2] for p in parts])
    for (s, _), p in zip(slot_chunks, parts):
        if p[3] >= 0:
            return new_lam, totals, price, s + p[3]
    return new_lam, totals, price, -1


def _run_te_phase(chi, base, w, alpha, load, totals, q, eta2, pool,
                  row_chunks):
    if pool is None:
        return _kernels.te_phase(chi, base, w, alpha, load, totals, q, eta2)
    futures = [
        pool.submit(_kernels.te_phase, chi[s:e], base[s:e], w[s:e],
                    alpha[s:e], load, totals, q[s:e], eta2)
        for s, e in row_chunks
    ]
    return np.concatenate([f.result() for f in futures], axis=0)


def run_dtoa(scenario: Scenario, threads: int = 1,
             trace_stride: int = 0) -> EquilibriumResult:
    """Iterate both games from the scenario's initial profiles.

    Deterministic for a fixed scenario: the initial demand comes from the
    scenario's seeded draw, bids start at ``lambda_init``, and the result
    is independent of ``threads`` (workers only split structurally
    independent rows and columns).
    """
    scenario.validate()
    cfg = scenario.solver
    chi = np.ascontiguousarray(scenario.initial_demand, dtype=float)
    base = np.ascontiguousarray(scenario.base_demand, dtype=float)
    w = np.ascontiguousarray(scenario.utility_w, dtype=float)
    alpha = np.ascontiguousarray(scenario.utility_alpha, dtype=float)
    q = np.ascontiguousarray(scenario.shiftable_total, dtype=float)
    a2 = np.ascontiguousarray(scenario.cost_coeffs[:, 0], dtype=float)
    a1 = np.ascontiguousarray(scenario.cost_coeffs[:, 1], dtype=float)
    lam = np.full((scenario.num_es, scenario.num_slots), cfg.lambda_init,
                  dtype=float)

    eta1, eta2 = cfg.eta1_init, cfg.eta2_init
    rec_iter: list[int] = []
    rec_price: list[np.ndarray] = []
    rec_load: list[np.ndarray] = []
    rec_delta: list[float] = []
    rec_eta1: list[float] = []
    rec_eta2: list[float] = []
    snaps: tuple[list, list, list] = ([], [], [])

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    slot_chunks = _chunks(scenario.num_slots, threads)
    row_chunks = _chunks(scenario.num_te, threads)
    status = STATUS_ITERATION_CAP
    iterations = 0
    try:
        for g in range(1, cfg.max_iterations + 1):
            load = chi.sum(axis=0) + base.sum(axis=0)
            lam, totals, price, bad = _run_es_phase(
                lam, load, a2, a1, eta1, cfg.singularity_delta, pool,
                slot_chunks)
            if bad >= 0:
                raise DegenerateMarketError(
                    f"bids collapsed to zero at slot {bad}, iteration {g}",
                    slot=bad, iteration=g)
            chi_new = _run_te_phase(chi, base, w, alpha, load, totals, q,
                                    eta2, pool, row_chunks)
            delta = float(np.linalg.norm(chi_new - chi))
            rec_iter.append(g)
            rec_price.append(price)
            rec_load.append(load)
            rec_delta.append(delta)
            rec_eta1.append(eta1)
            rec_eta2.append(eta2)
            chi = chi_new
            iterations = g
            if trace_stride and (g % trace_stride == 0 or g == 1):
                snaps[0].append(g)
                snaps[1].append(chi.copy())
                snaps[2].append(lam.copy())
            eta1 *= cfg.eta1_decay
            eta2 *= cfg.eta2_decay
            threshold = cfg.epsilon
            if cfg.relative_stopping:
                threshold = cfg.epsilon * max(float(np.linalg.norm(chi)),
                                              1e-300)
            if delta < threshold:
                status = STATUS_CONVERGED
                break
    finally:
        if pool is not None:
            pool.shutdown()

    trace = IterationTrace(
        iteration=np.array(rec_iter, dtype=int),
        price=np.array(rec_price),
        load=np.array(rec_load),
        delta=np.array(rec_delta),
        eta1=np.array(rec_eta1),
        eta2=np.array(rec_eta2),
        snapshot_stride=trace_stride,
        snapshot_iterations=snaps[0],
        snapshot_demand=snaps[1],
        snapshot_bids=snaps[2],
    )
    state = compute_market_state(chi, base, lam)
    econ = compute_agent_economics(chi, base, lam, scenario.cost_coeffs,
                                   w, alpha, state)
    return EquilibriumResult(bids=lam, demand=chi, state=state,
                             economics=econ, trace=trace, status=status,
                             iterations_used=iterations)


def supplier_fixed_point(loads: np.ndarray, cost_coeffs: np.ndarray,
                         solver: SolverConfig):
    """Run the supplier game alone at fixed per-slot loads.

    Same ascent rule, step schedule and stopping style as the full loop,
    applied to the bid matrix only: stop when consecutive bid matrices are
    closer than epsilon in Frobenius norm. Returns
    (bids, iterations_used, converged).
    """
    solver.validate()
    loads = np.ascontiguousarray(loads, dtype=float)
    a2 = np.ascontiguousarray(cost_coeffs[:, 0], dtype=float)
    a1 = np.ascontiguousarray(cost_coeffs[:, 1], dtype=float)
    lam = np.full((cost_coeffs.shape[0], loads.size), solver.lambda_init,
                  dtype=float)
    eta1 = solver.eta1_init
    converged = False
    iterations = 0
    for g in range(1, solver.max_iterations + 1):
        new_lam, _, _, bad = _kernels.es_phase(lam, loads, a2, a1, eta1,
                                               solver.singularity_delta)
        if bad >= 0:
            raise DegenerateMarketError(
                f"bids collapsed to zero at slot {bad}, iteration {g}",
                slot=bad, iteration=g)
        delta = float(np.linalg.norm(new_lam - lam))
        lam = new_lam
        iterations = g
        eta1 *= solver.eta1_decay
        threshold = solver.epsilon
        if solver.relative_stopping:
            threshold = solver.epsilon * max(float(np.linalg.norm(lam)),
                                             1e-300)
        if delta < threshold:
            converged = True
            break
    return lam, iterations, converged
