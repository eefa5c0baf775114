"""Batched stage-posing kernel.

The compiled extension (``_fk_core``) is used when it has been built;
otherwise the numpy implementation in ``_fk_py`` is selected. Set
``STAGEKIN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fk_py

if os.environ.get("STAGEKIN_PURE_PYTHON", "") not in ("", "0"):
    _fk_core = None
else:
    try:
        from . import _fk_core
    except ImportError:  # extension not built
        _fk_core = None

if _fk_core is not None:
    pose_points = _fk_core.pose_points
    BACKEND = "cython"
else:
    pose_points = _fk_py.pose_points
    BACKEND = "python"

__all__ = ["pose_points", "BACKEND"]
