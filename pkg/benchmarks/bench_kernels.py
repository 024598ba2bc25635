#!/usr/bin/env python3
"""Time the compiled kernels against their NumPy twins on pipeline-shaped work.

Each case builds one realistic fixture (synthetic low- or medium-mag data),
checks that both backends agree on it, then reports best-of-N wall times.
Run from the repository root:

    python3 benchmarks/bench_kernels.py [--reps N]
"""

import argparse
import math
import time

import numpy as np

from gridscout import _kernels_py

try:
    from gridscout import _kernels
except ImportError:
    _kernels = None

from gridscout.lattice import lattice_points
from gridscout.synth import LowMagConfig, MedMagConfig, gen_lowmag, gen_medmag


def best_of(fn, reps: int) -> float:
    best = math.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def case_label_components(mod):
    img = gen_lowmag(LowMagConfig(angle=17.0), seed=1).image
    mask = np.ascontiguousarray(img.data >= 20.0).astype(np.uint8)

    def run():
        labels, n = mod.label_components(mask, 4)
        return n

    return run


def case_disk_union_sum(mod):
    truth = gen_medmag(MedMagConfig(width=288, height=288, spacing=36.0),
                       seed=2)
    prob = np.ascontiguousarray(truth.pmap.data, dtype=np.float64)
    shape = (truth.pmap.width, truth.pmap.height)
    rng = np.random.default_rng(0)
    candidates = []
    for _ in range(60):  # one anchor-pair search worth of lattices
        a = tuple(rng.uniform(30, 250, 2))
        theta = rng.uniform(0, math.pi / 2)
        b = (a[0] + 36 * math.cos(theta), a[1] + 36 * math.sin(theta))
        candidates.append(lattice_points(a, b, shape))
    stamp = np.zeros(prob.shape, dtype=np.int32)
    counter = [0]

    def run():
        total = 0.0
        for pts in candidates:
            counter[0] += 1
            s, m = mod.disk_union_sum(prob, pts, 4.0, stamp, counter[0])
            total += s
        return total

    return run


def case_bilinear_crop(mod):
    img = np.ascontiguousarray(
        gen_lowmag(LowMagConfig(angle=17.0), seed=3).image.data)
    out = np.empty((140, 140), dtype=np.float64)
    rng = np.random.default_rng(1)
    centers = rng.uniform(100, 900, (40, 2))

    def run():
        acc = 0.0
        for cx, cy in centers:
            mod.bilinear_crop(img, cx, cy, math.radians(17.0), 0.0, out)
            acc += out[0, 0]
        return acc

    return run


def case_em_estep(mod):
    img = gen_lowmag(LowMagConfig(), seed=4).image
    values, counts = np.unique(img.data, return_counts=True)
    values = np.ascontiguousarray(values, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)

    def run():
        acc = (0.0, 0.0, 0.0)
        for _ in range(50):  # one EM run's worth of E-steps
            acc = mod.em_estep(values, counts, 0.5, 0.5, 6.0, 48.0)
        return acc

    return run


CASES = [
    ("label_components 1024^2", case_label_components),
    ("disk_union_sum 60 lattices", case_disk_union_sum),
    ("bilinear_crop 40 x 140^2", case_bilinear_crop),
    ("em_estep 50 iterations", case_em_estep),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5,
                        help="repetitions per case; best time wins")
    args = parser.parse_args()

    if _kernels is None:
        print("compiled extension not built; timing the NumPy backend only")
    print(f"{'kernel':<28} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, make in CASES:
        run_py = make(_kernels_py)
        t_py = best_of(run_py, args.reps)
        if _kernels is None:
            print(f"{name:<28} {t_py * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
            continue
        run_c = make(_kernels)
        ref, got = run_py(), run_c()
        if not np.allclose(np.atleast_1d(ref), np.atleast_1d(got),
                           rtol=1e-9, atol=1e-6):
            raise AssertionError(f"{name}: backends disagree: {ref} vs {got}")
        t_c = best_of(run_c, args.reps)
        print(f"{name:<28} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
              f"{t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
