import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from stagekin import _kernels
from stagekin._kernels import _fk_py
from stagekin.dataio import StageConfig
from stagekin.model import forward_kinematics

try:
    _fk_core = importlib.import_module("stagekin._kernels._fk_core")
except ImportError:  # extension not built
    _fk_core = None

needs_core = pytest.mark.skipif(_fk_core is None, reason="compiled kernel not built")


def _configs(rng, n):
    return np.column_stack([
        rng.uniform(-25, 25, n), rng.uniform(-25, 25, n), rng.uniform(-25, 25, n), rng.uniform(-359, 359, n)
    ])


def test_python_kernel_matches_sequential_model(skewed_theta, rng):
    origins, axes = skewed_theta.stage_axes()
    cfg = _configs(rng, 50)
    pts = np.vstack([skewed_theta.z_c_hat, skewed_theta.z_e_hat, skewed_theta.neutral_corners])
    out = _fk_py.pose_points(origins, axes, cfg, pts)
    for row, got in zip(cfg, out):
        posed = forward_kinematics(skewed_theta, StageConfig(*row), points=pts)
        assert np.max(np.abs(got - posed.points)) <= 1e-9


@needs_core
def test_compiled_matches_python(skewed_theta, rng):
    origins, axes = skewed_theta.stage_axes()
    cfg = _configs(rng, 1000)
    pts = rng.normal(size=(7, 3)) * 20
    a = _fk_core.pose_points(origins, axes, cfg, pts)
    b = _fk_py.pose_points(origins, axes, cfg, pts)
    assert a.shape == b.shape == (1000, 7, 3)
    assert np.max(np.abs(a - b)) <= 1e-9


@needs_core
def test_compiled_accepts_non_contiguous(skewed_theta, rng):
    origins, axes = skewed_theta.stage_axes()
    cfg = np.asfortranarray(_configs(rng, 5))
    pts = rng.normal(size=(3, 6))[:, ::2]
    assert np.allclose(_fk_core.pose_points(origins, axes, cfg, pts),
                       _fk_py.pose_points(origins, axes, cfg, pts), atol=1e-12)


@pytest.mark.parametrize("impl", [_fk_py.pose_points] + ([_fk_core.pose_points] if _fk_core else []))
def test_zero_configs_and_points(skewed_theta, impl):
    origins, axes = skewed_theta.stage_axes()
    assert impl(origins, axes, np.zeros((0, 4)), np.zeros((2, 3))).shape == (0, 2, 3)
    pts = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(impl(origins, axes, np.zeros((1, 4)), pts)[0], pts)


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("STAGEKIN_PURE_PYTHON", None)
    if env_value is not None:
        env["STAGEKIN_PURE_PYTHON"] = env_value
    out = subprocess.run(
        [sys.executable, "-c", "from stagekin import _kernels; print(_kernels.BACKEND)"],
        capture_output=True, text=True, env=env, check=True,
    )
    return out.stdout.strip()


def test_env_forces_fallback():
    assert _backend_in_subprocess("1") == "python"


def test_default_backend():
    expected = "cython" if _fk_core is not None else "python"
    assert _backend_in_subprocess(None) == expected
    assert _backend_in_subprocess("0") == expected
    assert _kernels.BACKEND in ("cython", "python")
