#!/usr/bin/env python3
"""Compare the numba and numpy backends of the inverse Q-learning replay kernel.

Usage: python benchmarks/bench_kernels.py [--transitions 100000] [--repeats 3]
"""
import argparse
import time

import numpy as np

from invq import _accel
from invq.iql import IqlConfig, run_iql
from invq.mdp import sample_trajectories
from invq.objectworld import ObjectworldSpec, expert, generate


def time_backend(backend, demos, cfg, n_states, n_actions, repeats):
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = run_iql(demos, cfg, n_states, n_actions, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8, help="Objectworld grid size")
    ap.add_argument("--transitions", type=int, default=100_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    inst = generate(ObjectworldSpec(n=args.n, seed=0))
    pi, _ = expert(inst)
    demos = sample_trajectories(inst.mdp, pi, args.transitions // 8, 8, seed=0)
    cfg = IqlConfig(alpha_r=0.05, alpha_sh=0.05, alpha_q=0.05)
    S, A = inst.n_states, inst.n_actions
    print(f"IQL replay: {demos.n_transitions} transitions, {S} states, {A} actions")

    timings = {}
    if _accel.NUMBA_AVAILABLE:
        # warmup triggers (or loads cached) compilation
        t0 = time.perf_counter()
        run_iql(demos.subset(1), cfg, S, A, backend="numba")
        print(f"numba warmup (compile or cache load): {time.perf_counter() - t0:.2f}s")
        timings["numba"] = time_backend("numba", demos, cfg, S, A, args.repeats)
    else:
        print("numba not installed; numpy backend only")
    timings["numpy"] = time_backend("numpy", demos, cfg, S, A, max(1, args.repeats // 3))

    for name, (secs, _) in timings.items():
        rate = demos.n_transitions / secs
        print(f"{name:>6}: {secs * 1e3:9.1f} ms  ({rate:,.0f} transitions/s)")
    if len(timings) == 2:
        (tn, rn), (tp, rp) = timings["numba"], timings["numpy"]
        gap = max(np.max(np.abs(rn.q - rp.q)), np.max(np.abs(rn.reward - rp.reward)))
        print(f"speedup {tp / tn:.1f}x, max table difference {gap:.1e}")


if __name__ == "__main__":
    main()
