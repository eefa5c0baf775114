import dataclasses

import numpy as np
import pytest

from stagekin import simulator as sim
from stagekin.dataio import NEUTRAL, Dataset, StageConfig
from stagekin.geom import (
    DegenerateInputError,
    angle_between_deg,
    check_cs,
    cs_origin,
    cs_x_axis,
)
from stagekin.model import (
    MissingScanGroupError,
    Theta,
    build_cs_cb,
    calibrate,
    forward_kinematics,
    ground_truth_batch,
    ground_truth_in_cb,
    load_theta,
    pose_points_batch,
    save_theta,
    stage_axes_posed,
    stage_transform,
)


def random_configs(rng, n):
    return [
        StageConfig(*rng.uniform(-20, 20, 2), rng.uniform(-20, 20), rng.uniform(-359, 359))
        for _ in range(n)
    ]


def test_stage_transform_examples():
    assert np.array_equal(stage_transform("lin1", 0), np.eye(4))
    T = stage_transform("lin1", 7.5)
    assert np.allclose(T[:3, 3], [7.5, 0, 0]) and np.allclose(T[:3, :3], np.eye(3))
    G = stage_transform("gon", 90.0)
    assert np.allclose(G @ [0, 1, 0, 1], [0, 0, 1, 1], atol=1e-15)
    with pytest.raises(ValueError):
        stage_transform("tilt", 1.0)


def test_calibrate_orthogonal_recovery(ortho_stage, ortho_theta):
    truth_axes = [ortho_stage.lin1_axis, ortho_stage.lin2_axis, ortho_stage.gon_axis, ortho_stage.rot_axis]
    for cs, axis in zip(
        (ortho_theta.cs_lin1, ortho_theta.cs_lin2, ortho_theta.cs_gon, ortho_theta.cs_rot), truth_axes
    ):
        assert np.max(np.abs(cs_x_axis(cs) - axis)) <= 1e-9
    assert np.max(np.abs(ortho_theta.z_c_hat - ortho_stage.cornea_center)) <= 1e-9
    assert np.max(np.abs(ortho_theta.z_e_hat - ortho_stage.eyeball_center)) <= 1e-9
    assert ortho_theta.cornea.radius == pytest.approx(7.8, abs=1e-9)


def test_rotary_origins_on_true_axes(skewed_stage, skewed_theta):
    for cs, point, axis in (
        (skewed_theta.cs_gon, skewed_stage.gon_point, skewed_stage.gon_axis),
        (skewed_theta.cs_rot, skewed_stage.rot_point, skewed_stage.rot_axis),
    ):
        d = cs_origin(cs) - point
        assert np.linalg.norm(d - (d @ axis) * axis) <= 1e-9


def test_calibrate_measured_angles(skewed_theta):
    frames = [skewed_theta.cs_lin1, skewed_theta.cs_lin2, skewed_theta.cs_gon, skewed_theta.cs_rot]
    got = [angle_between_deg(cs_x_axis(a), cs_x_axis(b)) for a, b in zip(frames, frames[1:])]
    assert np.allclose(got, sim.MEASURED_ANGLES, atol=1e-6)


def test_calibrate_logs_flip(skewed_theta):
    # the standard plan's circle normals point against positive dial rotation
    assert skewed_theta.axis_flips == ("gon", "rot")


def _with_scans(ds, replace):
    scans = tuple(replace.get(s.id, s) for s in ds.scans)
    return Dataset(ds.unit, tuple(s for s in scans if s is not None), ds.voxel_size_mm)


def test_collinear_goniometer_scans(skewed_dataset):
    base = skewed_dataset.scan(7).corners
    step = np.array([0.3, -0.2, 0.1])
    ds = _with_scans(skewed_dataset, {
        8: dataclasses.replace(skewed_dataset.scan(8), corners=base + step),
        10: dataclasses.replace(skewed_dataset.scan(10), corners=base + 2 * step),
    })
    with pytest.raises(DegenerateInputError, match="7/8/10"):
        calibrate(ds)


def test_missing_rotation_group(skewed_dataset):
    ds = _with_scans(skewed_dataset, {12: None, 14: None})
    with pytest.raises(MissingScanGroupError, match="rotation stage"):
        calibrate(ds)


def test_missing_linear_group(skewed_dataset):
    ds = _with_scans(skewed_dataset, {5: None})
    with pytest.raises(MissingScanGroupError, match="type-3"):
        calibrate(ds)


def test_calibrate_needs_mm(skewed_dataset):
    from stagekin.dataio import to_voxels

    with pytest.raises(ValueError, match="millimetres"):
        calibrate(to_voxels(skewed_dataset))


def test_fk_neutral_exact(skewed_theta):
    posed = forward_kinematics(skewed_theta, NEUTRAL)
    assert np.array_equal(posed.z_c, skewed_theta.z_c_hat)
    assert np.array_equal(posed.z_e, skewed_theta.z_e_hat)


def test_fk_single_translation(skewed_theta):
    posed = forward_kinematics(skewed_theta, StageConfig(7.5, 0, 0, 0))
    expected = skewed_theta.z_c_hat + 7.5 * cs_x_axis(skewed_theta.cs_lin1)
    assert np.allclose(posed.z_c, expected, atol=1e-12)


def test_fk_rotation_keeps_axis_distance(skewed_stage, skewed_theta):
    cfg = StageConfig(0, 0, 0, 30)
    posed = forward_kinematics(skewed_theta, cfg)
    o, a = cs_origin(skewed_theta.cs_rot), cs_x_axis(skewed_theta.cs_rot)

    def dist(p):
        d = p - o
        return np.linalg.norm(d - (d @ a) * a)

    assert dist(posed.z_c) == pytest.approx(dist(skewed_theta.z_c_hat), abs=1e-12)
    assert np.max(np.abs(posed.z_c - skewed_stage.pose(cfg, skewed_stage.cornea_center))) <= 1e-9


def test_fk_matches_direct_composition(skewed_stage, skewed_theta, rng):
    for cfg in random_configs(rng, 30):
        posed = forward_kinematics(skewed_theta, cfg)
        oracle = skewed_stage.pose(cfg, np.vstack([skewed_stage.cornea_center, skewed_stage.eyeball_center]))
        assert np.max(np.abs(posed.z_c - oracle[0])) <= 1e-9
        assert np.max(np.abs(posed.z_e - oracle[1])) <= 1e-9
        for cs in posed.frames.values():
            check_cs(cs, tol=1e-9)


def test_batch_matches_sequential(skewed_theta, rng):
    configs = random_configs(rng, 25)
    pts = rng.normal(size=(3, 3)) * 10 + skewed_theta.z_c_hat
    batch = pose_points_batch(skewed_theta, configs, pts)
    for cfg, got in zip(configs, batch):
        assert np.allclose(got, forward_kinematics(skewed_theta, cfg, points=pts).points, atol=1e-9, rtol=0)


def test_cs_cb_neutral(skewed_theta):
    cs = build_cs_cb(skewed_theta, NEUTRAL)
    check_cs(cs)
    assert np.array_equal(cs_origin(cs), skewed_theta.neutral_corners[3])
    c1 = skewed_theta.neutral_corners[0]
    assert np.allclose(cs_x_axis(cs), (c1 - cs_origin(cs)) / np.linalg.norm(c1 - cs_origin(cs)))


def test_cs_cb_referencing_pose(skewed_stage, skewed_theta):
    cs = build_cs_cb(skewed_theta, sim.REFERENCING_POSE)
    check_cs(cs, tol=1e-9)
    R_true, t_true = skewed_stage.cs_cb_rt(sim.REFERENCING_POSE)
    assert np.allclose(cs_origin(cs), t_true, atol=1e-9)


def test_ground_truth_neutral_is_basis_change(skewed_theta):
    from stagekin.geom import express_in

    gt = ground_truth_in_cb(skewed_theta, NEUTRAL, NEUTRAL)
    cs = build_cs_cb(skewed_theta, NEUTRAL)
    assert np.allclose(gt.z_c, express_in(cs, skewed_theta.z_c_hat), atol=1e-12)
    assert np.linalg.norm(gt.geometrical_axis) == pytest.approx(1.0)


def test_ground_truth_eval_configs(skewed_stage, skewed_theta):
    truths = ground_truth_batch(skewed_theta, sim.EVAL_CONFIGS, sim.REFERENCING_POSE)
    assert len(truths) == 20
    zs = np.array([t.z_c for t in truths])
    assert np.all(np.isfinite(zs))
    d = np.linalg.norm(zs[:, None] - zs[None], axis=2) + np.eye(20)
    assert d.min() > 1e-3
    for cfg, t in zip(sim.EVAL_CONFIGS, truths):
        single = ground_truth_in_cb(skewed_theta, cfg, sim.REFERENCING_POSE)
        oracle = skewed_stage.ground_truth(cfg, sim.REFERENCING_POSE)
        assert np.allclose(t.z_c, single.z_c, atol=1e-9)
        assert np.allclose(t.z_c, oracle[0], atol=1e-9)
        assert np.allclose(t.geometrical_axis, oracle[2], atol=1e-9)


def test_posed_axes_follow_lower_stages(skewed_theta):
    cfg = StageConfig(0, 0, 12.0, 0)
    axes = stage_axes_posed(skewed_theta, cfg)
    assert np.allclose(axes[:3], stage_axes_posed(skewed_theta, NEUTRAL)[:3])
    gon_rot = angle_between_deg(axes[2], axes[3])
    assert gon_rot == pytest.approx(sim.MEASURED_ANGLES[2], abs=1e-9)


def test_theta_roundtrip(tmp_path, skewed_theta):
    path = tmp_path / "theta.json"
    save_theta(skewed_theta, path)
    back = load_theta(path)
    for name in ("cs_lin1", "cs_lin2", "cs_gon", "cs_rot", "neutral_corners"):
        assert np.array_equal(getattr(back, name), getattr(skewed_theta, name))
    assert back.dataset_checksum == skewed_theta.dataset_checksum
    assert np.array_equal(back.z_c_hat, skewed_theta.z_c_hat)


def test_theta_rejects_bad_frame(skewed_theta):
    bad = skewed_theta.cs_gon.copy()
    bad[:3, 3] = bad[:3, 0] - (bad[:3, 3] - bad[:3, 0])  # flip z
    with pytest.raises(ValueError):
        dataclasses.replace(skewed_theta, cs_gon=bad)


def test_theta_rejects_swapped_spheres(skewed_theta):
    with pytest.raises(ValueError, match="smaller"):
        Theta(skewed_theta.cs_lin1, skewed_theta.cs_lin2, skewed_theta.cs_gon, skewed_theta.cs_rot,
              skewed_theta.eyeball, skewed_theta.cornea, skewed_theta.neutral_corners)
