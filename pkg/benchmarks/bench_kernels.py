"""Time the hot kernels under the numba and the pure-numpy backend.

    python benchmarks/bench_kernels.py [--iters 200] [--repeat 3]

The backend is chosen at import time, so each one runs in a child
interpreter with ECHODECOMP_DISABLE_NUMBA set accordingly.  The first call
of every kernel is a warm-up and is not timed (it absorbs JIT compilation).
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def child(args):
    from echodecomp import backend, bin_mvbs
    from echodecomp.echogram import flatten, shift_nonnegative
    from echodecomp.summarize import summarize
    from echodecomp.synth import SynthSpec, gen_patterned_echogram
    from echodecomp.tsnmf import TsnmfConfig, palm_fit

    _, _, cube = gen_patterned_echogram(SynthSpec(noise_sigma=0.1))
    x = shift_nonnegative(flatten(cube)).values
    # a tiny stop ratio keeps every timed fit at exactly --iters sweeps
    cfg = TsnmfConfig(rank=3, eta=1e3, max_iter=args.iters, stop_ratio=1e-15, n_restarts=1)
    rng = np.random.default_rng(0)
    h = rng.random((3, args.days))
    t0 = np.datetime64("2017-08-21T00:00:00")
    n_ping = 20000
    times = t0 + (np.arange(n_ping) * 43).astype("timedelta64[s]")
    sv = rng.uniform(-90, -40, size=(3, 200, n_ping))
    depth = np.arange(200) * 0.9 + 0.5

    palm = _best_of(lambda: palm_fit(x, cfg, seed=1), args.repeat)
    out = {
        "backend": backend(),
        f"palm_fit {x.shape[0]}x{x.shape[1]} K=3, per sweep": palm / args.iters,
        f"summarize T={args.days} (distances + ward)":
            _best_of(lambda: summarize(h, 4), args.repeat),
        f"bin_mvbs 3x200x{n_ping}": _best_of(
            lambda: bin_mvbs(sv, depth, times, 5.0, 200.0), args.repeat),
    }
    print(json.dumps(out))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iters", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--days", type=int, default=400)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child(args)
        return

    results = {}
    for disable in ("0", "1"):
        env = dict(os.environ, ECHODECOMP_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, __file__, "--child", "--iters", str(args.iters),
                               "--repeat", str(args.repeat), "--days", str(args.days)],
                              env=env, capture_output=True, text=True, check=True)
        row = json.loads(proc.stdout.strip().splitlines()[-1])
        results[row.pop("backend")] = row

    if "numba" not in results:
        print("numba is unavailable; only the numpy backend ran")
    names = list(next(iter(results.values())))
    width = max(len(n) for n in names)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name in names:
        jit = results.get("numba", {}).get(name)
        ref = results["numpy"][name]
        jit_s = f"{jit * 1e3:10.3f}" if jit is not None else f"{'-':>10}"
        speed = f"{ref / jit:7.2f}x" if jit else f"{'-':>8}"
        print(f"{name:<{width}}  {jit_s}  {ref * 1e3:10.3f}  {speed}")


if __name__ == "__main__":
    main()
