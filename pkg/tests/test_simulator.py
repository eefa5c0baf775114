import numpy as np
import pytest

from stagekin import simulator as sim
from stagekin.dataio import NEUTRAL, ScanType, StageConfig
from stagekin.evaluation import evaluate_accuracy
from stagekin.model import calibrate


def test_default_stage_orthogonal():
    assert np.allclose(sim.synthesize_stage(seed=3).inter_axis_angles(), 90.0, atol=1e-9)


def test_measured_preset_angles(skewed_stage):
    assert np.allclose(skewed_stage.inter_axis_angles(), (89.5, 90.9, 90.2), atol=1e-9)


def test_same_seed_identical():
    a = sim.synthesize_stage(sim.MEASURED_ANGLES, seed=11)
    b = sim.synthesize_stage(sim.MEASURED_ANGLES, seed=11)
    assert a.to_dict() == b.to_dict()
    assert sim.synthesize_stage(seed=12).to_dict() != a.to_dict()


def test_angles_out_of_range():
    with pytest.raises(ValueError):
        sim.synthesize_stage((90, 90, 120))


def test_truth_roundtrip(skewed_stage):
    back = sim.TruthStage.from_dict(skewed_stage.to_dict())
    assert np.array_equal(back.motion(StageConfig(1, 2, 3, 4)), skewed_stage.motion(StageConfig(1, 2, 3, 4)))


def test_table_plan(skewed_dataset):
    assert [(s.id, s.stage_settings.as_tuple(), tuple(sorted(int(t) for t in s.scan_types)))
            for s in skewed_dataset.scans] == [(i, P, t) for i, P, t in sim.STANDARD_PLAN]
    assert len(sim.STANDARD_PLAN) == 15
    surface = [s.id for s in skewed_dataset.scans if s.cornea_points is not None]
    assert surface == [1, 4, 7, 11, 15]


def test_eval_configs_shape():
    cfgs = sim.EVAL_CONFIGS
    assert len(cfgs) == 20
    # five positions per stage, one stage at a time
    assert [c.P1 for c in cfgs[:5]] == [7.5, 10.0, 12.5, 15.0, 17.5]
    assert [c.P2 for c in cfgs[5:10]] == [7.5, 10.0, 12.5, 15.0, 17.5]
    assert [c.P3 for c in cfgs[10:15]] == [-10.0, -5.0, 0.0, 5.0, 10.0]
    assert [c.P4 for c in cfgs[15:]] == [290.0, 298.0, 307.0, 316.0, 324.0]
    assert all(len(c.moved_axes()) <= 1 for c in cfgs)


def test_noise_free_roundtrip(skewed_stage):
    ds = sim.generate_dataset(skewed_stage)
    theta = calibrate(ds)
    assert np.max(np.abs(theta.z_c_hat - skewed_stage.cornea_center)) <= 1e-9


def test_corner_noise_statistics(skewed_stage):
    clean = sim.generate_dataset(skewed_stage, noise=sim.NoiseSpec(seed=5))
    noisy = sim.generate_dataset(skewed_stage, noise=sim.NoiseSpec(corner_sigma_mm=0.025, seed=5))
    d = np.concatenate([(a.corners - b.corners).ravel() for a, b in zip(noisy.scans, clean.scans)])
    assert d.size == 180
    assert abs(d.std() - 0.025) <= 0.1 * 0.025
    # surfaces untouched by corner noise
    assert np.array_equal(noisy.scan(1).cornea_points, clean.scan(1).cornea_points)


def test_voxel_output(skewed_stage):
    vox = sim.generate_dataset(skewed_stage, unit="voxel", voxel_size_mm=0.025)
    mm = sim.generate_dataset(skewed_stage)
    assert vox.unit == "voxel"
    assert np.allclose(vox.scan(3).corners * 0.025, mm.scan(3).corners, atol=1e-12)


def test_tracker_exact_without_noise(skewed_stage):
    est = sim.simulate_tracker(skewed_stage, sim.EVAL_CONFIGS, sim.REFERENCING_POSE)
    for e in est:
        z_c, _, axis = skewed_stage.ground_truth(e.config, sim.REFERENCING_POSE)
        assert np.array_equal(e.z_c_star, z_c)
        assert np.array_equal(e.axis_star, axis)


def test_tracker_bias_only(skewed_stage):
    bias = (0.32, -0.09, -0.54)
    noise = sim.NoiseSpec(tracker_bias_mm=bias)
    est = sim.simulate_tracker(skewed_stage, sim.EVAL_CONFIGS, sim.REFERENCING_POSE, noise)
    truths = [skewed_stage.ground_truth(e.config, sim.REFERENCING_POSE)[0] for e in est]
    rep = evaluate_accuracy([e.z_c_star for e in est], truths)
    assert np.allclose(rep.mean_axis, bias, atol=1e-12)
    assert rep.mean_relative == pytest.approx(0.0, abs=1e-12)


def test_tracker_tuned_mean_over_many_samples(skewed_stage):
    # 500 runs of 20 measurements = 10k samples
    vals = []
    for seed in range(500):
        est = sim.simulate_tracker(skewed_stage, sim.EVAL_CONFIGS, sim.REFERENCING_POSE,
                                   sim.NoiseSpec.tuned_tracker(seed))
        truths = [skewed_stage.ground_truth(e.config, sim.REFERENCING_POSE)[0] for e in est]
        vals.append(evaluate_accuracy([e.z_c_star for e in est], truths).mean_abs)
    assert np.mean(vals) == pytest.approx(0.68, abs=0.02)


def test_tracker_noise_anisotropy():
    noise = sim.NoiseSpec.tuned_tracker(0)
    draws = sim.tracker_noise(np.random.default_rng(1), noise, 200_000)
    u = np.asarray(sim.TRACKER_BIAS_MM) / np.linalg.norm(sim.TRACKER_BIAS_MM)
    centred = draws - noise.tracker_bias_mm
    along = centred @ u
    across = centred - along[:, None] * u
    assert along.std() == pytest.approx(sim.TRACKER_SIGMA_ALONG_BIAS_MM, rel=0.01)
    assert np.sqrt(np.mean(np.sum(across**2, axis=1)) / 2) == pytest.approx(sim.TRACKER_SIGMA_MM, rel=0.01)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        sim.NoiseSpec(corner_sigma_mm=-1)
    with pytest.raises(ValueError):
        sim.NoiseSpec(tracker_sigma_along_bias_mm=0.1)


def test_estimates_roundtrip(skewed_stage):
    est = sim.simulate_tracker(skewed_stage, sim.EVAL_CONFIGS[:3], NEUTRAL, sim.NoiseSpec.tuned_tracker(2))
    ref, back = sim.estimates_from_dict(sim.estimates_to_dict(est, sim.REFERENCING_POSE))
    assert ref == sim.REFERENCING_POSE
    for a, b in zip(est, back):
        assert a.config == b.config
        assert np.array_equal(a.z_c_star, b.z_c_star)
        assert np.allclose(a.axis_star, b.axis_star, atol=1e-15)


def test_estimates_bad_entry():
    with pytest.raises(ValueError, match="estimate 0"):
        sim.estimates_from_dict({"referencing_P": [0, 0, 0, 0], "estimates": [{"P": [0, 0, 0, 0]}]})


def test_surface_types_in_plan():
    for sid, _, types in sim.STANDARD_PLAN:
        assert set(types) <= {int(t) for t in ScanType}
