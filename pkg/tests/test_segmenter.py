import numpy as np
import pytest

from faith import (
    BorderSeedError,
    Environment,
    FaithModel,
    FeatureConfig,
    HyperGrid,
    SeedSet,
    SegmentationJob,
    Volume,
    decide_slice,
    extract_environment,
    global_threshold_volume,
    load_volume,
    local_threshold,
    segment,
    train_from_seeds,
)
from helpers import make_phantom

SMALL_GRID = HyperGrid(k_max=3, eps_path=1e-2)


def _model(beta, theta_g=150.0, w_max=255, k=5, features=("linearity", "planarity")):
    return FaithModel(
        theta_g=theta_g,
        w_max=w_max,
        lam=1.0,
        mu=0.5,
        beta=np.asarray(beta, dtype=np.float64),
        feature_config=FeatureConfig(features, k, w_max),
    )


@pytest.fixture(scope="module")
def phantom24():
    return make_phantom(size=24, seed=99)


@pytest.fixture(scope="module")
def phantom_volume(phantom24):
    return Volume.from_array(phantom24["data"])


@pytest.fixture(scope="module")
def trained(phantom_volume, phantom24):
    seeds = SeedSet(phantom24["seeds"], env_size=5)
    cfg = FeatureConfig(("linearity", "planarity"), 5, 255)
    model, _ = train_from_seeds(
        phantom_volume, seeds, cfg, theta_g=150.0, grid=SMALL_GRID, folds=3
    )
    return model


class TestSeedSet:
    def test_needs_one_position(self):
        with pytest.raises(ValueError):
            SeedSet([], env_size=5)

    def test_border_positions_reported(self, phantom_volume):
        seeds = SeedSet([(0, 5, 5), (12, 12, 12), (5, 23, 5)], env_size=5)
        assert seeds.border_positions(phantom_volume) == [(0, 5, 5), (5, 23, 5)]
        with pytest.raises(BorderSeedError) as err:
            seeds.validate(phantom_volume)
        assert (0, 5, 5) in err.value.positions

    def test_excessive_seed_count_warns(self, rng):
        data = rng.integers(0, 255, size=(8, 8, 8)).astype(np.uint8)
        vol = Volume.from_array(data)
        positions = [(x, y, 4) for x in range(2, 6) for y in range(2, 6)]
        with pytest.warns(UserWarning, match="seeds"):
            SeedSet(positions, env_size=3).validate(vol)


class TestTraining:
    def test_skull_configuration(self, rng):
        # theta_g 1541, K=7, 2 features, 54 seeds on a synthetic 16-bit volume
        data = rng.integers(800, 2600, size=(24, 24, 24)).astype(np.uint16)
        vol = Volume.from_array(data)
        interior = rng.integers(3, 21, size=(54, 3))
        seeds = SeedSet([tuple(map(int, p)) for p in interior], env_size=7)
        cfg = FeatureConfig(("linearity", "planarity"), 7, 65535)
        model, report = train_from_seeds(
            vol, seeds, cfg, theta_g=1541.0, grid=SMALL_GRID, folds=3
        )
        assert model.beta.shape == (2,)
        assert model.theta_g == 1541.0
        assert len(model.diagnostics["per_seed_theta_star"]) == 54

    def test_jaw_configuration(self, rng):
        # theta_g 24415, K=5, 166 seeds
        data = rng.integers(20000, 30000, size=(20, 20, 20)).astype(np.uint16)
        vol = Volume.from_array(data)
        pos = {tuple(map(int, p)) for p in rng.integers(2, 18, size=(400, 3))}
        seeds = SeedSet(sorted(pos)[:166], env_size=5)
        cfg = FeatureConfig(("linearity", "planarity"), 5, 65535)
        model, _ = train_from_seeds(
            vol, seeds, cfg, theta_g=24415.0, grid=HyperGrid(k_max=2, eps_path=0.1), folds=2
        )
        assert np.all(np.isfinite(model.beta))

    def test_zero_offsets_give_zero_weights(self):
        # constant 2/8 regions: theta* is identical everywhere; picking
        # theta_g = theta* forces all targets to zero
        base = np.zeros((9, 9, 9), dtype=np.uint8)
        base[::2] = 8
        base[1::2] = 2
        vol = Volume.from_array(base)
        seeds = SeedSet([(4, 4, 4), (3, 4, 4), (4, 3, 4), (3, 3, 4)], env_size=3)
        cfg = FeatureConfig(("linearity", "planarity"), 3, 255)
        env = extract_environment(vol, (4, 4, 4), 3)
        from faith import Histogram, mce_threshold

        theta_star = mce_threshold(Histogram.from_values(env.values))
        model, report = train_from_seeds(vol, seeds, cfg, theta_g=theta_star, folds=2)
        assert np.allclose(model.beta, 0.0)

    def test_border_seed_rejected_with_position(self, phantom_volume):
        seeds = SeedSet([(1, 12, 12)], env_size=5)
        cfg = FeatureConfig(("linearity", "planarity"), 5, 255)
        with pytest.raises(BorderSeedError) as err:
            train_from_seeds(phantom_volume, seeds, cfg, theta_g=150.0)
        assert err.value.positions == [(1, 12, 12)]

    def test_config_volume_mismatch(self, phantom_volume):
        seeds = SeedSet([(12, 12, 12)], env_size=5)
        bad_cfg = FeatureConfig(("linearity",), 5, 65535)
        with pytest.raises(ValueError, match="max_value"):
            train_from_seeds(phantom_volume, seeds, bad_cfg, theta_g=150.0)


class TestLocalThreshold:
    def test_zero_weights_reduce_to_global(self, rng):
        model = _model([0.0, 0.0])
        env = Environment(5, (9, 9, 9), rng.integers(0, 255, size=(5, 5, 5)), True)
        assert local_threshold(model, env) == 150.0

    def test_planar_voxel_lowers_threshold(self):
        model = _model([0.0, -100.0], theta_g=1541.0, w_max=65535, k=7)
        w = np.zeros((7, 7, 7), dtype=np.uint16)
        w[3] = 30000
        env = Environment(7, (9, 9, 9), w, True)
        assert local_threshold(model, env) == pytest.approx(1441.0)

    def test_trained_thresholds_valid_on_seeds(self, phantom_volume, phantom24):
        seeds = SeedSet(phantom24["seeds"], env_size=5)
        cfg = FeatureConfig(("linearity", "planarity"), 5, 255)
        model, _ = train_from_seeds(
            phantom_volume, seeds, cfg, theta_g=150.0, grid=SMALL_GRID, folds=3
        )
        for p in phantom24["seeds"]:
            env = extract_environment(phantom_volume, p, 5)
            theta = local_threshold(model, env)
            assert -1e-6 <= theta <= 255 + 1e-6

    def test_size_mismatch(self, rng):
        model = _model([0.0, 0.0], k=5)
        env = Environment(7, (9, 9, 9), rng.integers(0, 255, size=(7, 7, 7)), True)
        with pytest.raises(ValueError):
            local_threshold(model, env)


class TestSegment:
    def test_zero_weights_match_global_threshold_inside(self, tmp_path, rng):
        data = rng.integers(0, 255, size=(16, 16, 16)).astype(np.uint8)
        vol = Volume.from_array(data)
        model = _model([0.0, 0.0], theta_g=120.0, k=5)
        stats = segment(vol, model, tmp_path / "seg", slab_thickness=4)
        out = load_volume(tmp_path / "seg.raw").data
        h = 2
        interior = (data[h:-h, h:-h, h:-h] >= 120.0).astype(np.uint8)
        assert np.array_equal(out[h:-h, h:-h, h:-h], interior)
        shell = np.array(out, copy=True)
        shell[h:-h, h:-h, h:-h] = 0
        assert not shell.any()
        assert stats["voxels_set"] == int(out.sum())
        assert stats["interior_voxels"] == 12**3

    def test_all_zero_volume_stays_zero(self, tmp_path):
        vol = Volume.from_array(np.zeros((10, 10, 10), dtype=np.uint8))
        model = _model([0.0, 0.0], theta_g=10.0, k=3)
        segment(vol, model, tmp_path / "zero")
        assert not load_volume(tmp_path / "zero.raw").data.any()

    def test_slab_and_worker_invariance(self, tmp_path, phantom_volume):
        model = _model([5.0, -60.0], theta_g=150.0, k=5)
        outputs = []
        for slab, workers in [(1, 1), (5, 1), (24, 1), (5, 4), (24, 4)]:
            path = tmp_path / f"out_{slab}_{workers}"
            segment(vol := phantom_volume, model, path, slab_thickness=slab, workers=workers)
            outputs.append((path.with_suffix(".raw")).read_bytes())
        assert all(o == outputs[0] for o in outputs[1:])

    def test_monotone_in_global_threshold(self, tmp_path, phantom_volume):
        low = _model([0.0, 0.0], theta_g=100.0, k=5)
        high = _model([0.0, 0.0], theta_g=130.0, k=5)
        segment(phantom_volume, low, tmp_path / "low")
        segment(phantom_volume, high, tmp_path / "high")
        a = load_volume(tmp_path / "low.raw").data
        b = load_volume(tmp_path / "high.raw").data
        assert not np.any(b.astype(bool) & ~a.astype(bool))

    def test_out_of_range_thresholds_counted(self, tmp_path, phantom_volume):
        model = _model([0.0, -100000.0], theta_g=150.0, k=5)
        stats = segment(phantom_volume, model, tmp_path / "oor")
        assert stats["out_of_range_thresholds"] > 0
        assert stats["threshold_min"] < 0

    def test_w_mismatch_rejected(self, tmp_path, phantom_volume):
        model = _model([0.0, 0.0], w_max=65535)
        with pytest.raises(ValueError, match="W="):
            segment(phantom_volume, model, tmp_path / "bad")

    def test_stats_fields(self, tmp_path, phantom_volume):
        model = _model([1.0, -20.0], theta_g=150.0, k=5)
        stats = segment(phantom_volume, model, tmp_path / "stats", slab_thickness=6)
        for key in (
            "voxels_set",
            "interior_voxels",
            "border_voxels",
            "out_of_range_thresholds",
            "threshold_min",
            "threshold_max",
            "seconds",
            "max_slab_bytes",
        ):
            assert key in stats
        assert stats["max_slab_bytes"] <= (6 + 5 - 1) * 24 * 24

    def test_global_threshold_volume_plain(self, tmp_path, phantom_volume):
        stats = global_threshold_volume(phantom_volume, 150.0, tmp_path / "plain")
        out = load_volume(tmp_path / "plain.raw").data
        assert np.array_equal(out, (phantom_volume.data >= 150.0).astype(np.uint8))
        assert stats["voxels_set"] == int(out.sum())


class TestDecideSlice:
    def test_z_slice_matches_segmentation(self, tmp_path, phantom_volume, phantom24, trained):
        segment(phantom_volume, trained, tmp_path / "full")
        full = load_volume(tmp_path / "full.raw").data
        z = phantom24["plane_z"]
        faith_mask, global_mask = decide_slice(phantom_volume, trained, "z", z)
        assert np.array_equal(faith_mask, full[z])
        assert np.array_equal(global_mask, (phantom_volume.data[z] >= 150.0).astype(np.uint8))

    def test_all_axes_shapes(self, phantom_volume, trained):
        fy, gy = decide_slice(phantom_volume, trained, "y", 12)
        fx, gx = decide_slice(phantom_volume, trained, "x", 12)
        assert fy.shape == (24, 24) and fx.shape == (24, 24)

    def test_axis_slice_consistency(self, tmp_path, phantom_volume, trained):
        # a y slice of the full segmentation equals the y-axis decision
        segment(phantom_volume, trained, tmp_path / "full2")
        full = load_volume(tmp_path / "full2.raw").data
        faith_mask, _ = decide_slice(phantom_volume, trained, "y", 11)
        assert np.array_equal(faith_mask, full[:, 11, :])

    def test_border_slice_is_empty(self, phantom_volume, trained):
        faith_mask, _ = decide_slice(phantom_volume, trained, "z", 0)
        assert not faith_mask.any()


class TestJob:
    def test_run_to_done(self, tmp_path, phantom_volume):
        model = _model([0.0, -50.0], theta_g=150.0, k=5)
        job = SegmentationJob(phantom_volume, model, tmp_path / "job_out", slab_thickness=4)
        fractions = []
        orig = job._on_progress

        def spy(f):
            fractions.append(f)
            orig(f)

        job._on_progress = spy
        assert job.status == "pending"
        job.run()
        assert job.status == "done"
        assert job.progress == 1.0
        assert job.stats is not None
        assert fractions == sorted(fractions)

    def test_cancel_before_run(self, tmp_path, phantom_volume):
        model = _model([0.0, -50.0], theta_g=150.0, k=5)
        job = SegmentationJob(phantom_volume, model, tmp_path / "cancelled", slab_thickness=1)
        job.cancel()
        job.run()
        assert job.status == "cancelled"
        assert job.progress < 1.0

    def test_job_not_rerunnable(self, tmp_path, phantom_volume):
        model = _model([0.0, 0.0], theta_g=150.0, k=5)
        job = SegmentationJob(phantom_volume, model, tmp_path / "once", slab_thickness=24)
        job.run()
        with pytest.raises(RuntimeError):
            job.run()
