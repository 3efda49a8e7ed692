"""Time the hot kernels with numba on and off.

Each backend runs in its own interpreter because the JIT switch is read at
import time::

    python3 benchmarks/bench_kernels.py            # both backends, side by side
    python3 benchmarks/bench_kernels.py --child    # current backend only, JSON out
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def child(repeat):
    from napping_lab import USE_NUMBA
    from napping_lab import baseline as B
    from napping_lab import envs
    from napping_lab import kernels as K

    rng = np.random.default_rng(0)
    cases = {}

    params = envs.CartPoleParams()
    policy = B.BaselinePolicy.zeros("cartpole").with_theta(rng.normal(0, 0.3, B.n_params((4, 32, 32, 2))))
    starts = B.start_states(params, 50, rng)
    cases["cartpole rollout x50"] = lambda: B.rollouts(policy, params, starts)

    mc = envs.MountainCarParams()
    mpol = B.BaselinePolicy.zeros("mountaincar").with_theta(rng.normal(0, 0.3, B.n_params((2, 32, 32, 3))))
    mstarts = B.start_states(mc, 5, rng)
    thetas = np.stack([mpol.theta + rng.normal(0, 0.1, mpol.theta.size) for _ in range(10)])
    args = mpol.kernel_args()
    cases["mountaincar population 10x5"] = lambda: K.evaluate_population(
        1, thetas, args[1], args[2], args[3], mc.to_vector(), mstarts)

    anchors = rng.normal(size=(2000, 32))
    queries = rng.normal(size=(200, 32))
    cases["nearest anchor 200q x 2000"] = lambda: [K.nearest_row(anchors, 2000, q) for q in queries]

    out = {"numba": USE_NUMBA, "seconds": {k: _best_of(f, repeat) for k, f in cases.items()}}
    print(json.dumps(out))


def run_backend(disabled, repeat):
    env = dict(os.environ)
    env["NAPPING_LAB_NO_NUMBA"] = "1" if disabled else "0"
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--child", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if args.child:
        child(args.repeat)
        return
    jit = run_backend(False, args.repeat)
    plain = run_backend(True, args.repeat)
    print(f"{'kernel':<32}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, t_jit in jit["seconds"].items():
        t_plain = plain["seconds"][name]
        print(f"{name:<32}{t_jit:>12.5f}{t_plain:>12.5f}{t_plain / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
