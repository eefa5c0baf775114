"""Time batched stage posing: compiled kernel vs numpy fallback vs per-config model.

    python3 benchmarks/bench_fk.py --configs 100000 --points 2
"""

import argparse
import importlib
import timeit

import numpy as np

from stagekin import simulator as sim
from stagekin._kernels import _fk_py
from stagekin.dataio import StageConfig
from stagekin.model import calibrate, forward_kinematics

try:
    _fk_core = importlib.import_module("stagekin._kernels._fk_core")
except ImportError:
    _fk_core = None


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", type=int, default=100_000)
    parser.add_argument("--points", type=int, default=2)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    theta = calibrate(sim.generate_dataset(sim.synthesize_stage(sim.MEASURED_ANGLES, seed=args.seed)))
    origins, axes = theta.stage_axes()
    cfg = np.column_stack([
        rng.uniform(-25, 25, (args.configs, 3)), rng.uniform(-359, 359, args.configs)
    ])
    pts = theta.z_c_hat + rng.normal(size=(args.points, 3))

    rows = [("numpy", best_of(lambda: _fk_py.pose_points(origins, axes, cfg, pts), args.repeat))]
    if _fk_core is not None:
        rows.append(("cython", best_of(lambda: _fk_core.pose_points(origins, axes, cfg, pts), args.repeat)))
        diff = np.max(np.abs(_fk_core.pose_points(origins, axes, cfg, pts) - _fk_py.pose_points(origins, axes, cfg, pts)))
    n_seq = min(args.configs, 2000)
    seq_cfgs = [StageConfig(*row) for row in cfg[:n_seq]]
    t_seq = best_of(lambda: [forward_kinematics(theta, c, points=pts) for c in seq_cfgs], 1)
    rows.append(("per-config model", t_seq * args.configs / n_seq))

    print(f"{args.configs} configs x {args.points} points, best of {args.repeat}")
    base = rows[0][1]
    for name, t in rows:
        print(f"  {name:<18} {t * 1e3:10.2f} ms  {args.configs / t / 1e6:8.3f} Mconf/s  {base / t:8.3g}x vs numpy")
    if _fk_core is None:
        print("  compiled kernel not built; numpy fallback only")
    else:
        print(f"  max |cython - numpy| = {diff:.2e} mm")


if __name__ == "__main__":
    main()
