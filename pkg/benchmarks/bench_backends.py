"""Time the compiled kernel against the pure-numpy fallback.

Usage::

    python benchmarks/bench_backends.py [--repeat 20] [--points 60] [--frames 25]

Both backends filter the same synthetic sequence; the script reports the
median wall time per sequence and the largest disagreement between them.
"""
import argparse
import timeit

import numpy as np

from cyclic_ukf import synth, ukf


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--points", type=int, default=60)
    parser.add_argument("--frames", type=int, default=25)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    cfg = synth.SynthConfig(n_points=args.points, n_frames=args.frames, seed=args.seed,
                            outlier_frames=(min(8, args.frames - 1),))
    z = synth.generate(cfg).noisy
    backends = ukf.available_backends()
    results = {}
    print(f"{args.points} points x {args.frames} frames, {args.repeat} repeats")
    for backend in backends:
        run = lambda: ukf.filter_sequence(z, cfg.meta, backend=backend)  # noqa: E731
        results[backend] = run()
        times = timeit.repeat(run, number=1, repeat=args.repeat)
        print(f"  {backend:9s} median {np.median(times) * 1e3:8.2f} ms   min {min(times) * 1e3:8.2f} ms")
    if len(backends) == 2:
        diff = np.max(np.abs(results["compiled"] - results["python"]))
        print(f"  max |compiled - python| = {diff:.2e} px")
    else:
        print("  compiled kernel not built; only the python backend was timed")


if __name__ == "__main__":
    main()
