"""Throughput of the compiled physics kernel against the numpy fallback.

Usage: python3 benchmarks/bench_physics.py [--envs 64] [--steps 200] [--terrain rough]

Each control step integrates four 240 Hz substeps for every environment,
as the training loop does. Prints environment steps per second per backend
and the speed-up.
"""
import argparse
import time

import numpy as np

from amploco import backend
from amploco.dynamics import RobotModel, standing_state
from amploco.terrain import TerrainSpec, generate, pack


def run(kernel, n_envs, steps, kind, repeats):
    model = RobotModel()
    params = model.pack()
    fields = pack([generate(TerrainSpec(kind=kind, seed=i)) for i in range(n_envs)])
    rng = np.random.default_rng(0)
    targets = np.ascontiguousarray(model.stance_pose() + rng.normal(0, 0.2, (n_envs, 4)))
    best = np.inf
    for _ in range(repeats):
        states = np.stack([standing_state(model).to_array() for _ in range(n_envs)])
        contact = np.zeros((n_envs, 2, 3))
        t0 = time.perf_counter()
        for _ in range(steps):
            kernel.integrate(params, states, targets, fields, 1.0 / 240.0, 4, contact)
        best = min(best, time.perf_counter() - t0)
    return n_envs * steps / best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--envs", type=int, default=64)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--terrain", default="rough", choices=["flat", "rough", "gaps", "stepping_stones"])
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    rates = {"python": run(backend.get("python"), args.envs, args.steps, args.terrain, args.repeats)}
    try:
        rates["cython"] = run(backend.get("cython"), args.envs, args.steps, args.terrain, args.repeats)
    except ImportError:
        print("compiled kernel not built; reporting the numpy fallback only")
    for name, rate in rates.items():
        print(f"{name:>7}: {rate:12.0f} env-steps/s")
    if len(rates) == 2:
        print(f"speed-up: {rates['cython'] / rates['python']:.1f}x")


if __name__ == "__main__":
    main()
