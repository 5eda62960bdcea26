"""Timing comparison of the compiled and pure-numpy kernel backends.

The backend is fixed at import time by the SO3FLOW_NUMBA environment
variable, so each backend runs in its own subprocess and the parent prints
a side-by-side table. Run from the repository root:

    python3 benchmarks/kernel_benchmark.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_cases():
    from so3flow import kernels

    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(2048, 3))
    a = rng.normal(size=(1024, 3))
    b = rng.normal(size=(1024, 3))
    omegas = rng.normal(size=(100000, 3))
    rotations = kernels.batch_exp(omegas)
    quats = rng.normal(size=(100000, 4))

    cases = {
        "fps_indices 2048->512": lambda: kernels.fps_indices(cloud, 512),
        "nn_mean_dist 1024x1024": lambda: kernels.nn_mean_dist(a, b),
        "nn_spacing 1024": lambda: kernels.nn_spacing(a),
        "batch_exp 100k": lambda: kernels.batch_exp(omegas),
        "batch_log 100k": lambda: kernels.batch_log(rotations),
        "quats_to_matrices 100k": lambda: kernels.quats_to_matrices(quats),
    }
    results = {"backend": kernels.BACKEND, "times": {}}
    for name, fn in cases.items():
        fn()  # warmup, includes jit compilation on the numba backend
        results["times"][name] = _best_of(fn)
    print(json.dumps(results))


def main():
    rows = {}
    for flag in ("1", "0"):
        env = dict(os.environ, SO3FLOW_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker"],
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            return proc.returncode
        payload = json.loads(proc.stdout.strip().splitlines()[-1])
        rows[payload["backend"]] = payload["times"]
    if set(rows) != {"numba", "numpy"}:
        print(f"note: backends measured: {sorted(rows)} (numba unavailable?)")
    name_w = max(len(n) for times in rows.values() for n in times)
    backends = sorted(rows)
    header = f"{'kernel':<{name_w}}  " + "  ".join(f"{b:>10}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name in rows[backends[0]]:
        cells = [f"{rows[b][name] * 1e3:9.3f}ms" for b in backends]
        line = f"{name:<{name_w}}  " + "  ".join(f"{c:>10}" for c in cells)
        if len(backends) == 2:
            line += f"  {rows['numpy'][name] / rows['numba'][name]:7.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    if "--worker" in sys.argv:
        run_cases()
    else:
        sys.exit(main())
