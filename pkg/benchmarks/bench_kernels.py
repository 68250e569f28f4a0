"""Time the simplex kernels compiled with numba against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants run inside one process: the module-level kernels are swapped
for their ``.numpy_impl`` attribute, so every other line of code is shared.
Needs numba installed (and SHAREDESS_DISABLE_NUMBA unset) for a comparison.
"""
from __future__ import annotations

import argparse
import contextlib
import statistics
import time

import numpy as np

from sharedess import HAVE_NUMBA, lp
from sharedess.offline import ControllerLp, solve_p1_monolithic
from sharedess.sim import gen_random_scenario, load_bundled


@contextlib.contextmanager
def numpy_kernels():
    saved = lp._simplex_loop, lp._pivot
    lp._simplex_loop, lp._pivot = lp._simplex_loop.numpy_impl, lp._pivot.numpy_impl
    try:
        yield
    finally:
        lp._simplex_loop, lp._pivot = saved


def _controller_cold():
    cfg = load_bundled()
    y = np.random.default_rng(0).uniform(0, 0.05, (cfg.n_users, cfg.horizon))
    ctl = ControllerLp(cfg)
    return lambda: ctl.solve(y)


def _controller_warm():
    cfg = load_bundled()
    rng = np.random.default_rng(1)
    ys = np.cumsum(rng.normal(0, 1e-3, (200, cfg.n_users, cfg.horizon)), axis=0) + 0.025

    def run():
        ctl = ControllerLp(cfg, warm=True)
        for y in np.clip(ys, 0, None):
            ctl.solve(y)

    return run


def _oracle():
    cfg = load_bundled()
    return lambda: solve_p1_monolithic(cfg)


def _random_oracle():
    cfg = gen_random_scenario(11, 4, 24)
    return lambda: solve_p1_monolithic(cfg)


CASES = [
    ("controller LP, cold (M=4, N=24)", _controller_cold),
    ("controller LP, 200 warm re-solves", _controller_warm),
    ("full oracle LP, bundled scenario", _oracle),
    ("full oracle LP, random 4x24 with loads", _random_oracle),
]


def _time(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compile on the first numba call)
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not active; only the numpy kernels can be timed")
    print(f"{'case':42s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, make in CASES:
        fn = make()
        fast = _time(fn, args.repeat) if HAVE_NUMBA else float("nan")
        with numpy_kernels():
            slow = _time(fn, args.repeat)
        print(f"{name:42s} {1e3 * fast:11.2f} {1e3 * slow:11.2f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
