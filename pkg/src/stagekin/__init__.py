"""Ground truth for eye-tracker testing stages.

Calibrates a four-stage (two linear, goniometer, rotation) kinematic model
from fiducial measurements, poses it to produce true corneal-curvature and
eyeball centres in the checkerboard frame, and scores tracker estimates
against that ground truth.
"""

from .dataio import Dataset, ScanRecord, ScanType, StageConfig, load_dataset, save_dataset, to_millimeters
from .fitting import CircleFit, SphereFit, fit_circle_3pt, fit_sphere_lsq, plane_normal
from .geom import ConditioningError, DegenerateInputError
from .model import (
    GroundTruth,
    Theta,
    build_cs_cb,
    calibrate,
    forward_kinematics,
    ground_truth_batch,
    ground_truth_in_cb,
    load_theta,
    save_theta,
    stage_transform,
)

__version__ = "0.1.0"
