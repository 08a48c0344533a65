"""Time the compiled kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from knockstat import _backend, gof
from knockstat.distfit import EMConfig, em_log_space, sample_mixture


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    y = np.log(sample_mixture(gof.CANONICAL_MIXTURE, 1116, 1).ki)
    steps = np.arange(1, 1117) / 1116
    cdf = np.sort(np.random.default_rng(2).uniform(size=1116))
    cfg = EMConfig()
    return {
        "em (1116 pts, 5 restarts)": lambda: em_log_space(y, cfg),
        "gof_scores x1000": lambda: [_backend.gof_scores(steps, cdf) for _ in range(1000)],
        "acf lag 20 x1000": lambda: [_backend.acf(y, 20) for _ in range(1000)],
        "mixture thresholds, 50 reps": lambda: gof.mc_thresholds("mixture", None, reps=50, seed=0),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _backend.compiled_available():
        print("compiled kernels not built; only the python backend is available")
    backends = ["python"] + (["compiled"] if _backend.compiled_available() else [])
    print(f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases().items():
        row = []
        for b in backends:
            _backend.set_backend(b)
            row.append(best_of(fn, args.repeat))
        line = f"{name:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in row)
        if len(row) == 2:
            line += f"{row[0] / row[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
