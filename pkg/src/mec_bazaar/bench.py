"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the solver's three phase kernels on a representative scenario with
both backends, checks they agree, and prints per-iteration timings:

    python -m mec_bazaar.bench [--tes 1000] [--iters 200] [--seed 1]

The numbers motivate the default backend choice; set
MEC_BAZAAR_BACKEND=numpy to force the fallback at run time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import _kernels
from .scenario_io import GenerationParams, generate_scenario


def _phase_loop(scenario, iters, es_phase, te_phase):
    chi = scenario.initial_demand.copy()
    base = scenario.base_demand
    w, alpha = scenario.utility_w, scenario.utility_alpha
    q = scenario.shiftable_total
    a2 = scenario.cost_coeffs[:, 0].copy()
    a1 = scenario.cost_coeffs[:, 1].copy()
    lam = np.full((scenario.num_es, scenario.num_slots),
                  scenario.solver.lambda_init)
    eta1, eta2 = scenario.solver.eta1_init, scenario.solver.eta2_init
    t0 = time.perf_counter()
    for _ in range(iters):
        load = chi.sum(axis=0) + base.sum(axis=0)
        lam, totals, price, bad = es_phase(
            lam, load, a2, a1, eta1, scenario.solver.singularity_delta)
        assert bad < 0
        chi = te_phase(chi, base, w, alpha, load, totals, q, eta2)
        eta1 *= scenario.solver.eta1_decay
        eta2 *= scenario.solver.eta2_decay
    elapsed = time.perf_counter() - t0
    return elapsed, chi, lam


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tes", type=int, default=1000)
    parser.add_argument("--ess", type=int, default=10)
    parser.add_argument("--slots", type=int, default=24)
    parser.add_argument("--iters", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    scenario = generate_scenario(GenerationParams(
        num_te=args.tes, num_es=args.ess, num_slots=args.slots,
        seed=args.seed))
    print(f"scenario: N={args.tes} M={args.ess} T={args.slots}, "
          f"{args.iters} iterations per backend")

    results = {}
    np_time, np_chi, np_lam = _phase_loop(
        scenario, args.iters, _kernels.es_phase_np, _kernels.te_phase_np)
    results["numpy"] = np_time
    print(f"numpy : {np_time:8.3f} s  ({np_time / args.iters * 1e3:7.3f} ms/iter)")

    if _kernels.HAVE_NUMBA:
        # warm-up outside the timed region so JIT compilation is excluded
        _phase_loop(scenario, 1, _kernels.es_phase_nb, _kernels.te_phase_nb)
        nb_time, nb_chi, nb_lam = _phase_loop(
            scenario, args.iters, _kernels.es_phase_nb, _kernels.te_phase_nb)
        results["numba"] = nb_time
        print(f"numba : {nb_time:8.3f} s  ({nb_time / args.iters * 1e3:7.3f} ms/iter)")
        print(f"speedup: {np_time / nb_time:.2f}x")
        chi_dev = np.max(np.abs(nb_chi - np_chi) / np.maximum(np.abs(np_chi), 1.0))
        lam_dev = np.max(np.abs(nb_lam - np_lam) / np.maximum(np.abs(np_lam), 1.0))
        print(f"backend agreement: max rel deviation chi={chi_dev:.3e} "
              f"lam={lam_dev:.3e}")
        if max(chi_dev, lam_dev) > 1e-9:
            print("WARNING: backends disagree beyond rounding")
            return 1
    else:
        print("numba : not installed, fallback only")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
