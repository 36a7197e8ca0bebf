"""Timing comparison of the two expected-cost kernel backends.

Builds a representative full-day problem (24 steps, 50 scenarios, 4
sub-slots), evaluates the cost-and-gradient kernel through the compiled
extension and the pure-numpy fallback, checks they agree, and reports the
median evaluation time of each.

Run from the repository root::

    python3 benchmarks/bench_cost_kernel.py [--scenarios 50] [--repeats 200]
"""

import argparse
import statistics
import time

import numpy as np

from pvpump._core import cost_numpy

try:
    from pvpump._core import cost_kernel
except ImportError:
    cost_kernel = None


def build_instance(n_steps, n_scen, n_sub, seed=0):
    """Tank-network horizon data whose states stay inside the soft band.

    Inputs hover around the level-holding flow so the barrier terms are
    active but not saturated; that keeps the cross-backend agreement check
    meaningful (an exploded barrier dwarfs every other term).
    """
    rng = np.random.default_rng(seed)
    ad = np.array([[0.998, 0.002], [0.002, 0.998]])
    bd1 = np.diag([1.0e-3, 1.0e-3])
    bd2 = np.array([-0.5e-3, -0.5e-3])
    cp = np.array([[0.79, 0.02], [0.03, 0.88]])
    dp = np.diag([0.021, 0.026])
    p_in = np.array([-31.0, -27.0])
    price = np.where(rng.random(n_steps) < 0.3, 0.08, 0.22)
    pv = np.clip(rng.normal(10.0, 8.0, (n_scen, n_steps, n_sub)), 0.0, None)
    demand = rng.uniform(110.0, 130.0, n_steps)
    z = rng.uniform(40.0, 80.0, n_steps * 2)
    h0 = np.array([2.2, 2.1])
    args = (h0, ad, bd1, bd2, demand, price, pv, cp, dp, p_in,
            0.3, 0.002725, 0.25,
            np.full(2, 80.0), np.full(2, 80.0),
            np.full(2, 0.3), np.full(2, 0.3),
            np.array([1.5, 1.4]), np.array([3.0, 2.8]),
            np.array([2.2, 2.1]), 1e4, 0.1, 500.0)
    return z, args


def time_backend(fn, z, args, repeats):
    grad = np.empty_like(z)
    fn(z, *args, grad)  # warm up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(z, *args, grad)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=24)
    parser.add_argument("--scenarios", type=int, default=50)
    parser.add_argument("--subslots", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=200)
    opts = parser.parse_args()

    z, args = build_instance(opts.steps, opts.scenarios, opts.subslots)
    grad_np = np.empty_like(z)
    f_np, sat_np = cost_numpy.expected_cost_grad(z, *args, grad_np)
    print(f"instance: {opts.steps} steps x {opts.scenarios} scenarios "
          f"x {opts.subslots} sub-slots")
    print(f"numpy     f = {f_np:.6f}  (saturated terms: {sat_np})")

    t_np = time_backend(cost_numpy.expected_cost_grad, z, args, opts.repeats)
    print(f"numpy     median eval: {1e6 * t_np:9.1f} us")

    if cost_kernel is None:
        print("compiled backend not available; rebuild the extension to "
              "compare")
        return

    grad_cy = np.empty_like(z)
    f_cy, sat_cy = cost_kernel.expected_cost_grad(z, *args, grad_cy)
    f_gap = abs(f_cy - f_np) / max(abs(f_np), 1.0)
    g_gap = float(np.max(np.abs(grad_cy - grad_np)))
    g_gap /= max(float(np.max(np.abs(grad_np))), 1.0)
    print(f"compiled  f = {f_cy:.6f}  (saturated terms: {sat_cy})")
    print(f"agreement: relative f gap {f_gap:.2e}, "
          f"relative grad gap {g_gap:.2e}")

    t_cy = time_backend(cost_kernel.expected_cost_grad, z, args,
                        opts.repeats)
    print(f"compiled  median eval: {1e6 * t_cy:9.1f} us")
    print(f"speedup: {t_np / t_cy:.2f}x")


if __name__ == "__main__":
    main()
