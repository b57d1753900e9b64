"""Time the dynamics and network kernels with and without numba.

Each configuration runs in a fresh interpreter because the JIT switch is read
at import time::

    python benchmarks/bench_kernels.py            # both paths
    python benchmarks/bench_kernels.py --inner    # current process only
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat=5, number=1):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def inner(ticks: int) -> dict:
    from gfmsim._jit import ENABLE_JIT
    from gfmsim.approximator import MLPParams, forward
    from gfmsim.dynamics.core import mass_matrix
    from gfmsim.dynamics.scenarios import make_scenario

    out = {"jit": ENABLE_JIT}
    pair = make_scenario("pusher-pose", 0)
    rng = np.random.default_rng(0)
    actions = rng.uniform(-0.3, 0.3, (ticks, 2))

    def rollout():
        s = pair.initial_state
        for a in actions:
            s = pair.tick(pair.sim_model, s, a)

    rollout()  # compile
    out["tick_ms"] = 1e3 * _best(rollout, 3) / ticks
    q = pair.initial_state.q
    mass_matrix(pair.sim_model, q)
    out["mass_matrix_us"] = 1e6 * _best(lambda: mass_matrix(pair.sim_model, q), 5, 200)

    net = MLPParams.init((60, 64, 64, 4), rng, "elu")
    x = rng.normal(size=(32, 60))
    forward(net, x)
    out["mlp_forward_us"] = 1e6 * _best(lambda: forward(net, x), 5, 200)
    return out


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--inner", action="store_true")
    p.add_argument("--ticks", type=int, default=200)
    args = p.parse_args()
    if args.inner:
        print(json.dumps(inner(args.ticks)))
        return
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, GFMSIM_DISABLE_JIT=disable)
        res = subprocess.run([sys.executable, __file__, "--inner", "--ticks", str(args.ticks)],
                             env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(res.stdout.strip().splitlines()[-1]))
    keys = [k for k in rows[0] if k != "jit"]
    print(f"{'metric':<18}{'numba':>12}{'python':>12}{'speedup':>10}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:<18}{a:>12.3f}{b:>12.3f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
