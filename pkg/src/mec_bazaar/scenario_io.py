"""Seeded scenario generation, serialization, and result bundles.

Random draws come from a counter-based keyed generator: every value is a
pure function of (seed, field id, entity index, slot), built by chaining
splitmix64 finalizers. Generation order therefore cannot matter and
parallel generation is deterministic by construction. The key schedule is
the contract; the mixer is an implementation detail.

Scenario files are single JSON documents with a ``schema_version`` field.
Floats are serialized with ``repr`` (shortest round-trip form), so
load(save(s)) reproduces every number bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ScenarioFormatError, SchemaVersionError
from .market_model import Scenario, SolverConfig

__all__ = [
    "GenerationParams",
    "generate_scenario",
    "save_scenario",
    "load_scenario",
    "save_result",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1

# Field ids of the keyed draw streams (part of the key-schedule contract).
FIELD_BASE_DEMAND = 0
FIELD_SHIFT_FRACTION = 1
FIELD_COST_A2 = 2
FIELD_UTILITY_W = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays."""
    z = (z + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def keyed_uniform(seed: int, field_id: int, entity: np.ndarray,
                  slot: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draw keyed by (seed, field, entity, slot)."""
    with np.errstate(over="ignore"):
        z = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        z = _mix64(z ^ np.asarray(field_id, dtype=np.uint64))
        z = _mix64(z ^ np.asarray(entity, dtype=np.uint64))
        z = _mix64(z ^ np.asarray(slot, dtype=np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _uniform_grid(seed, field_id, n, t, lo, hi):
    i = np.arange(n, dtype=np.uint64)[:, None]
    s = np.arange(t, dtype=np.uint64)[None, :]
    u = keyed_uniform(seed, field_id, i, s)
    return lo + u * (hi - lo)


@dataclass(frozen=True)
class GenerationParams:
    """Draw ranges and counts for scenario generation."""

    num_es: int = 10
    num_te: int = 1000
    num_slots: int = 24
    base_demand_range: tuple[float, float] = (9660.0, 37065.0)
    shiftable_fraction_range: tuple[float, float] = (0.10, 0.12)
    a2_range: tuple[float, float] = (4.76e-6, 4.76e-5)
    a1: float = 0.001
    a0: float = 0.001
    alpha: float = 0.5
    w_range: tuple[float, float] = (0.8, 1.0)
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        for name in ("base_demand_range", "shiftable_fraction_range",
                     "a2_range", "w_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(f"{name}: lower bound exceeds upper bound")
            if lo < 0:
                raise DomainError(f"{name}: bounds must be nonnegative")
        if self.a2_range[0] <= 0:
            raise DomainError("a2_range: a2 must stay positive")
        if self.w_range[0] <= 0:
            raise DomainError("w_range: w must stay positive")
        if self.a1 < 0 or self.a0 < 0:
            raise DomainError("a1 and a0 must be nonnegative")
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")
        if self.num_es < 2 or self.num_te < 1 or self.num_slots < 1:
            raise DomainError(
                "counts must satisfy num_es >= 2, num_te >= 1, num_slots >= 1")


def generate_scenario(params: GenerationParams) -> Scenario:
    """Draw one market instance from the parameter ranges.

    Base demand r[i][t] is uniform in the base range; the initial
    shiftable profile chi0[i][t] is a uniform fraction of r[i][t]; each
    customer's daily shiftable total is the row sum of chi0, which makes
    the initial point feasible by construction.
    """
    params.validate()
    n, m, t = params.num_te, params.num_es, params.num_slots
    r = _uniform_grid(params.seed, FIELD_BASE_DEMAND, n, t,
                      *params.base_demand_range)
    frac = _uniform_grid(params.seed, FIELD_SHIFT_FRACTION, n, t,
                         *params.shiftable_fraction_range)
    chi0 = frac * r
    w = _uniform_grid(params.seed, FIELD_UTILITY_W, n, t, *params.w_range)
    a2 = _uniform_grid(params.seed, FIELD_COST_A2, m, 1,
                       *params.a2_range)[:, 0]
    coeffs = np.column_stack([
        a2,
        np.full(m, params.a1, dtype=float),
        np.full(m, params.a0, dtype=float),
    ])
    scenario = Scenario(
        num_es=m,
        num_te=n,
        num_slots=t,
        cost_coeffs=coeffs,
        utility_w=w,
        utility_alpha=np.full((n, t), params.alpha, dtype=float),
        base_demand=r,
        shiftable_total=chi0.sum(axis=1),
        initial_demand=chi0,
        solver=params.solver,
        seed=params.seed,
    )
    scenario.validate()
    return scenario


# --------------------------------------------------------------------------
# Scenario files
# --------------------------------------------------------------------------

def _solver_to_dict(cfg: SolverConfig) -> dict:
    return dataclasses.asdict(cfg)


def _scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "num_es": s.num_es,
        "num_te": s.num_te,
        "num_slots": s.num_slots,
        "seed": s.seed,
        "cost_coeffs": s.cost_coeffs.tolist(),
        "utility_w": s.utility_w.tolist(),
        "utility_alpha": s.utility_alpha.tolist(),
        "base_demand": s.base_demand.tolist(),
        "shiftable_total": s.shiftable_total.tolist(),
        "initial_demand": s.initial_demand.tolist(),
        "solver": _solver_to_dict(s.solver),
    }


def save_scenario(path: str, scenario: Scenario,
                  generation: GenerationParams | None = None) -> None:
    """Write a scenario file; optionally record its generation recipe."""
    scenario.validate()
    doc = _scenario_to_dict(scenario)
    if generation is not None:
        gen = dataclasses.asdict(generation)
        gen.pop("solver", None)  # already mirrored in the solver block
        doc["generation"] = gen
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_scenario(path: str) -> Scenario:
    """Parse and validate a scenario file.

    Malformed JSON, missing fields, wrong shapes and violated invariants
    all raise :class:`ScenarioFormatError` naming the offending field;
    an unsupported ``schema_version`` raises :class:`SchemaVersionError`.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{path}: not valid JSON (line {exc.lineno}, col {exc.colno})")
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema_version {version!r} unsupported "
            f"(expected {SCHEMA_VERSION})", field="schema_version")
    required = ["num_es", "num_te", "num_slots", "seed", "cost_coeffs",
                "utility_w", "utility_alpha", "base_demand",
                "shiftable_total", "initial_demand", "solver"]
    for name in required:
        if name not in doc:
            raise ScenarioFormatError(f"{path}: missing field {name!r}",
                                      field=name)
    try:
        solver = SolverConfig(**doc["solver"])
    except TypeError as exc:
        raise ScenarioFormatError(f"{path}: bad solver block ({exc})",
                                  field="solver")
    try:
        scenario = Scenario(
            num_es=int(doc["num_es"]),
            num_te=int(doc["num_te"]),
            num_slots=int(doc["num_slots"]),
            cost_coeffs=np.asarray(doc["cost_coeffs"], dtype=float),
            utility_w=np.asarray(doc["utility_w"], dtype=float),
            utility_alpha=np.asarray(doc["utility_alpha"], dtype=float),
            base_demand=np.asarray(doc["base_demand"], dtype=float),
            shiftable_total=np.asarray(doc["shiftable_total"], dtype=float),
            initial_demand=np.asarray(doc["initial_demand"], dtype=float),
            solver=solver,
            seed=int(doc["seed"]),
        )
    except (ValueError, TypeError) as exc:
        raise ScenarioFormatError(f"{path}: malformed array field ({exc})")
    try:
        scenario.validate()
    except DomainError as exc:
        raise ScenarioFormatError(f"{path}: {exc}", field=_guess_field(exc))
    return scenario


def _guess_field(exc: Exception) -> str | None:
    text = str(exc)
    for name in ("cost_coeffs", "utility_alpha", "utility_w", "base_demand",
                 "shiftable_total", "initial_demand"):
        if name in text:
            return name
    return None


# --------------------------------------------------------------------------
# Result bundles
# --------------------------------------------------------------------------

def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                repr(v) if isinstance(v, float) else str(v)
                for v in row) + "\n")


def save_result(out_dir: str, result, scenario: Scenario) -> dict:
    """Persist a solver result bundle under ``out_dir``.

    Writes result.json plus trace.csv, demands.csv and bids.csv; returns
    a dict of the paths written. The bundle is a pure function of the
    result (no timestamps or timings), so identical runs produce
    bit-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    econ = result.economics
    summary = {
        "status": result.status,
        "iterations": result.iterations_used,
        "final_delta": (float(result.trace.delta[-1])
                        if result.trace.delta.size else None),
        "epsilon": scenario.solver.epsilon,
        "seed": scenario.seed,
        "load": result.state.load.tolist(),
        "price": result.state.price.tolist(),
        "es_daily_profit": econ.es_profit.sum(axis=1).tolist(),
        "es_daily_revenue": econ.es_revenue.sum(axis=1).tolist(),
        "te_daily_payout": econ.te_payout.sum(axis=1).tolist(),
        "te_payoff": econ.te_payoff.tolist(),
    }
    paths = {
        "result": os.path.join(out_dir, "result.json"),
        "trace": os.path.join(out_dir, "trace.csv"),
        "demands": os.path.join(out_dir, "demands.csv"),
        "bids": os.path.join(out_dir, "bids.csv"),
    }
    with open(paths["result"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")

    trace = result.trace
    slots = range(scenario.num_slots)
    _write_csv(
        paths["trace"],
        ["iteration", "slot", "price", "load", "frobenius_delta", "eta1",
         "eta2"],
        ((int(trace.iteration[k]), t, float(trace.price[k, t]),
          float(trace.load[k, t]), float(trace.delta[k]),
          float(trace.eta1[k]), float(trace.eta2[k]))
         for k in range(trace.iteration.size) for t in slots))
    _write_csv(
        paths["demands"],
        ["te_id", "slot", "chi_before", "chi_after"],
        ((i, t, float(scenario.initial_demand[i, t]),
          float(result.demand[i, t]))
         for i in range(scenario.num_te) for t in slots))
    _write_csv(
        paths["bids"],
        ["es_id", "slot", "lambda_final"],
        ((j, t, float(result.bids[j, t]))
         for j in range(scenario.num_es) for t in slots))
    return paths
