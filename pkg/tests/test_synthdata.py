"""Tests for procedural video generation, motion metrics, and the dataset container."""

import itertools
import json

import numpy as np
import pytest

from rewardflow.latent import ConditionTokens, LatentGeometry
from rewardflow.synthdata import (
    DEFECT_KINDS,
    Dataset,
    DatasetConfig,
    DatasetError,
    Defect,
    LabelThresholds,
    MotionMetrics,
    MotionSpec,
    WorldError,
    blob_centers,
    blob_extents,
    build_dataset,
    generate_sample,
    generate_video,
    label_from_metrics,
    load_dataset,
    motion_metrics,
    pack_record,
    plan_trajectory,
    spec_from_condition,
)
from rewardflow.synthdata.metrics import DegenerateVideoError

GEOM = LatentGeometry()
ROOMY = LatentGeometry(frames=8, height=32, width=32, channels=4)


def brute_centers(video):
    """Independent center-of-mass oracle: explicit per-cell loops."""
    frames, height, width, _ = video.shape
    out = np.zeros((frames, 2))
    for f in range(frames):
        total = 0.0
        acc_y = 0.0
        acc_x = 0.0
        for y in range(height):
            for x in range(width):
                e = max(float(video[f, y, x, 0]), 0.0)
                total += e
                acc_y += e * y
                acc_x += e * x
        out[f] = (acc_y / total, acc_x / total)
    return out


def brute_extents(video):
    """Independent covariance-trace oracle: explicit per-cell loops."""
    centers = brute_centers(video)
    frames, height, width, _ = video.shape
    out = np.zeros(frames)
    for f in range(frames):
        total = 0.0
        acc = 0.0
        for y in range(height):
            for x in range(width):
                e = max(float(video[f, y, x, 0]), 0.0)
                total += e
                acc += e * ((y - centers[f, 0]) ** 2 + (x - centers[f, 1]) ** 2)
        out[f] = acc / total
    return out


def brute_metrics(video):
    """Metrics recomputed from the brute-force center/extent oracles."""
    centers = brute_centers(video)
    extents = brute_extents(video)
    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    second = centers[2:] - 2.0 * centers[1:-1] + centers[:-2]
    return (
        float(steps.mean()),
        float(1.0 / (1.0 + np.linalg.norm(second, axis=1).mean())),
        float(1.0 / (1.0 + np.var(extents))),
    )


class TestGeneration:
    def test_static_video_all_frames_identical(self):
        spec = MotionSpec(
            object_class=0,
            direction=(0.0, 1.0),
            speed_class="slow",
            speed_override=0.0,
        )
        video = generate_video(spec, seed=5, geom=GEOM)
        for f in range(1, GEOM.frames):
            assert np.array_equal(video[f], video[0])

    def test_static_video_metrics_exact(self):
        spec = MotionSpec(
            object_class=1,
            direction=(1.0, 0.0),
            speed_class="medium",
            speed_override=0.0,
        )
        m = motion_metrics(generate_video(spec, seed=3, geom=GEOM))
        assert m.dynamic_degree == 0.0
        assert m.smoothness == 1.0

    @pytest.mark.parametrize("seed", [2, 3, 5])
    def test_constant_velocity_second_differences_tiny(self, seed):
        spec = spec_from_condition(ConditionTokens(1, 3, 1))
        video = generate_video(spec, seed=seed, geom=ROOMY)
        centers = brute_centers(video)
        second = centers[2:] - 2.0 * centers[1:-1] + centers[:-2]
        assert np.abs(second).max() < 1e-6

    @pytest.mark.parametrize("seed", [2, 3, 5])
    def test_constant_velocity_smoothness_near_one(self, seed):
        spec = spec_from_condition(ConditionTokens(0, 6, 2))
        m = motion_metrics(generate_video(spec, seed=seed, geom=ROOMY))
        assert m.smoothness > 1.0 - 1e-6

    def test_channel_signatures_distinguish_classes(self):
        videos = [
            generate_video(spec_from_condition(ConditionTokens(oc, 0, 0)), 4, GEOM)
            for oc in range(4)
        ]
        signs = [tuple(np.sign(v[..., ch]).sum() for ch in (1, 2, 3)) for v in videos]
        assert len(set(signs)) == 4

    def test_blob_sigma_too_large_raises(self):
        spec = MotionSpec(
            object_class=0, direction=(0.0, 1.0), speed_class="slow", blob_sigma=1.7
        )
        with pytest.raises(WorldError):
            generate_video(spec, seed=0, geom=GEOM)

    def test_speed_that_cannot_fit_raises(self):
        spec = MotionSpec(
            object_class=0,
            direction=(0.0, 1.0),
            speed_class="fast",
            speed_override=2.0,
        )
        with pytest.raises(WorldError):
            generate_video(spec, seed=0, geom=GEOM)

    def test_generation_deterministic(self):
        spec = spec_from_condition(
            ConditionTokens(2, 5, 1), defects=(Defect("jitter", 0.7),)
        )
        a = generate_video(spec, seed=11, geom=GEOM)
        b = generate_video(spec, seed=11, geom=GEOM)
        assert np.array_equal(a, b)

    def test_unknown_defect_rejected(self):
        with pytest.raises(ValueError):
            Defect("melt", 0.5)

    def test_severity_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            Defect("jitter", 0.0)
        with pytest.raises(ValueError):
            Defect("jitter", 1.5)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(ValueError):
            MotionSpec(object_class=0, direction=(1.0, 1.0), speed_class="slow")

    def test_defect_free_spec_intends_good(self):
        spec = spec_from_condition(ConditionTokens(0, 0, 0))
        assert spec.intended_label == 1
        bad = spec_from_condition(
            ConditionTokens(0, 0, 0), defects=(Defect("freeze", 0.9),)
        )
        assert bad.intended_label == 0


class TestDefects:
    def test_teleport_single_large_jump_measured(self):
        geom16 = LatentGeometry(frames=8, height=16, width=16, channels=4)
        spec = spec_from_condition(
            ConditionTokens(2, 1, 1), defects=(Defect("teleport", 1.0),)
        )
        video = generate_video(spec, seed=1, geom=geom16)
        steps = np.linalg.norm(np.diff(brute_centers(video), axis=0), axis=1)
        big = steps >= geom16.height / 2
        assert big.sum() == 1
        assert np.all(steps[~big] <= spec.speed + 1e-6)

    def test_teleport_offset_covers_half_grid(self):
        for direction, speed, seed in itertools.product(range(8), range(3), range(6)):
            spec = spec_from_condition(
                ConditionTokens(0, direction, speed),
                defects=(Defect("teleport", 1.0),),
            )
            centers, _ = plan_trajectory(spec, seed, GEOM)
            velocity = spec.speed * np.asarray(spec.direction)
            offsets = np.diff(centers, axis=0) - velocity[None, :]
            assert np.linalg.norm(offsets, axis=1).max() >= min(GEOM.height, GEOM.width) / 2

    def test_teleport_needs_large_enough_grid(self):
        small = LatentGeometry(frames=8, height=6, width=6, channels=4)
        spec = spec_from_condition(
            ConditionTokens(0, 0, 0), defects=(Defect("teleport", 1.0),)
        )
        with pytest.raises(WorldError):
            generate_video(spec, seed=0, geom=small)

    def test_jitter_displaces_every_frame_by_magnitude(self):
        spec = spec_from_condition(
            ConditionTokens(1, 2, 2), defects=(Defect("jitter", 0.5),)
        )
        jittered, _ = plan_trajectory(spec, seed=9, geom=GEOM)
        clean, _ = plan_trajectory(
            spec_from_condition(ConditionTokens(1, 2, 2)), seed=9, geom=GEOM
        )
        offsets = np.linalg.norm(jittered - clean, axis=1)
        assert np.allclose(offsets, 0.5 * spec.speed, atol=1e-12)

    def test_jitter_monotonicity(self):
        severities = np.linspace(0.1, 1.0, 10)
        smooth = []
        for severity in severities:
            spec = spec_from_condition(
                ConditionTokens(1, 4, 0), defects=(Defect("jitter", float(severity)),)
            )
            m = motion_metrics(generate_video(spec, seed=21, geom=GEOM))
            smooth.append(m.smoothness)
        assert all(b <= a + 1e-12 for a, b in zip(smooth, smooth[1:]))

    def test_deform_varies_sigma_within_bounds(self):
        spec = spec_from_condition(
            ConditionTokens(0, 0, 1), defects=(Defect("deform", 0.5),)
        )
        _, sigmas = plan_trajectory(spec, seed=13, geom=GEOM)
        assert sigmas.min() >= 0.5 - 1e-12
        assert sigmas.max() <= 1.5 + 1e-12
        assert sigmas.std() > 0.1

    def test_freeze_repeats_frames_then_jumps(self):
        spec = spec_from_condition(
            ConditionTokens(3, 2, 1), defects=(Defect("freeze", 1.0),)
        )
        video = generate_video(spec, seed=2, geom=GEOM)
        # severity 1 on 8 frames holds 6 frames starting at frame 1
        for f in range(2, 7):
            assert np.array_equal(video[f], video[1])
        assert not np.array_equal(video[0], video[1])
        assert not np.array_equal(video[7], video[6])


class TestMetrics:
    def test_jittered_metrics_match_bruteforce(self):
        spec = spec_from_condition(
            ConditionTokens(2, 7, 1), defects=(Defect("jitter", 0.5),)
        )
        video = generate_video(spec, seed=3, geom=GEOM)
        m = motion_metrics(video)
        dd, smooth, shape = brute_metrics(video)
        assert m.dynamic_degree == pytest.approx(dd, abs=1e-12)
        assert m.smoothness == pytest.approx(smooth, abs=1e-12)
        assert m.shape_consistency == pytest.approx(shape, abs=1e-12)

    def test_centers_match_bruteforce(self):
        spec = spec_from_condition(ConditionTokens(0, 1, 2))
        video = generate_video(spec, seed=8, geom=GEOM)
        assert np.allclose(blob_centers(video), brute_centers(video), atol=1e-12)

    def test_extents_match_bruteforce(self):
        spec = spec_from_condition(
            ConditionTokens(1, 3, 0), defects=(Defect("deform", 0.8),)
        )
        video = generate_video(spec, seed=5, geom=GEOM)
        assert np.allclose(blob_extents(video), brute_extents(video), atol=1e-12)

    def test_zero_energy_frame_raises(self):
        video = np.zeros(GEOM.shape)
        with pytest.raises(DegenerateVideoError):
            motion_metrics(video)

    def test_single_dead_frame_raises(self):
        spec = spec_from_condition(ConditionTokens(0, 0, 0))
        video = generate_video(spec, seed=1, geom=GEOM)
        video[4, :, :, 0] = 0.0
        with pytest.raises(DegenerateVideoError):
            motion_metrics(video)

    def test_metrics_validation(self):
        with pytest.raises(ValueError):
            MotionMetrics(dynamic_degree=-0.1, smoothness=0.9, shape_consistency=0.9)
        with pytest.raises(ValueError):
            MotionMetrics(dynamic_degree=0.5, smoothness=1.2, shape_consistency=0.9)
        with pytest.raises(ValueError):
            MotionMetrics(
                dynamic_degree=float("nan"), smoothness=0.9, shape_consistency=0.9
            )


class TestLabeling:
    def test_perfect_metrics_label_good(self):
        m = MotionMetrics(dynamic_degree=0.45, smoothness=1.0, shape_consistency=1.0)
        assert label_from_metrics(m) == 1

    def test_low_smoothness_labels_bad_regardless(self):
        m = MotionMetrics(dynamic_degree=0.9, smoothness=0.79, shape_consistency=1.0)
        assert label_from_metrics(m) == 0

    def test_low_shape_consistency_labels_bad(self):
        m = MotionMetrics(dynamic_degree=0.5, smoothness=0.99, shape_consistency=0.5)
        assert label_from_metrics(m) == 0

    def test_static_video_labels_bad(self):
        m = MotionMetrics(dynamic_degree=0.01, smoothness=1.0, shape_consistency=1.0)
        assert label_from_metrics(m) == 0

    def test_oracle_agrees_with_intent_across_grid(self):
        thresholds = LabelThresholds()
        for oc, direction, speed, seed in itertools.product(
            range(4), range(8), range(3), range(2)
        ):
            cond = ConditionTokens(oc, direction, speed)
            video = generate_video(spec_from_condition(cond), seed=seed, geom=GEOM)
            assert label_from_metrics(motion_metrics(video), thresholds) == 1
        for kind, severity, direction, speed, seed in itertools.product(
            DEFECT_KINDS, (0.5, 1.0), range(8), range(3), range(2)
        ):
            cond = ConditionTokens(1, direction, speed)
            spec = spec_from_condition(cond, defects=(Defect(kind, severity),))
            video = generate_video(spec, seed=seed, geom=GEOM)
            assert label_from_metrics(motion_metrics(video), thresholds) == 0

    def test_two_hundred_samples_match_intent(self):
        config = DatasetConfig(train_count=150, val_count=20, test_count=30)
        thresholds = LabelThresholds()
        for index in range(200):
            intended = 1 - (index % 2)
            sample = generate_sample(31, index, intended, config, thresholds)
            assert label_from_metrics(sample.metrics, thresholds) == intended
            assert sample.label == intended


class TestDatasetContainer:
    CONFIG = DatasetConfig(train_count=12, val_count=4, test_count=8)

    def test_build_twice_byte_identical(self, tmp_path):
        build_dataset(tmp_path / "a", self.CONFIG, seed=7)
        build_dataset(tmp_path / "b", self.CONFIG, seed=7)
        assert (tmp_path / "a/samples.bin").read_bytes() == (
            tmp_path / "b/samples.bin"
        ).read_bytes()
        assert (tmp_path / "a/manifest.json").read_bytes() == (
            tmp_path / "b/manifest.json"
        ).read_bytes()

    def test_manifest_invariants(self, tmp_path):
        manifest = build_dataset(tmp_path, self.CONFIG, seed=3)
        splits = manifest["splits"]
        total = sum(s["count"] for s in splits.values())
        assert total == manifest["count"] == self.CONFIG.total_count
        spans = sorted((s["start"], s["count"]) for s in splits.values())
        cursor = 0
        for start, count in spans:
            assert start == cursor
            cursor += count
        labels = manifest["labels"]
        test_span = splits["test"]
        test_labels = labels[test_span["start"] : test_span["start"] + test_span["count"]]
        assert abs(sum(test_labels) * 2 - len(test_labels)) <= 2

    def test_label_histogram_balanced(self, tmp_path):
        manifest = build_dataset(tmp_path, self.CONFIG, seed=5)
        positives = manifest["label_counts"]["1"]
        assert abs(positives / manifest["count"] - 0.5) <= 0.01

    def test_roundtrip(self, tmp_path):
        manifest = build_dataset(tmp_path, self.CONFIG, seed=9)
        ds = load_dataset(tmp_path)
        assert isinstance(ds, Dataset)
        assert len(ds) == manifest["count"]
        assert ds.geometry == self.CONFIG.geometry
        assert list(ds.labels()) == manifest["labels"]
        for name in ("train", "val", "test"):
            assert len(ds.split(name)) == manifest["splits"][name]["count"]
        sample = ds.samples[0]
        assert sample.video.shape == self.CONFIG.geometry.shape
        assert np.isfinite(sample.video).all()

    def test_records_are_order_independent(self, tmp_path):
        manifest = build_dataset(tmp_path, self.CONFIG, seed=11)
        blob = (tmp_path / "samples.bin").read_bytes()
        offsets = manifest["offsets"] + [manifest["total_bytes"]]
        thresholds = LabelThresholds(**manifest["thresholds"])
        for index in (0, 5, 13, 23):
            regenerated = generate_sample(
                11, index, manifest["labels"][index], self.CONFIG, thresholds
            )
            assert (
                pack_record(regenerated) == blob[offsets[index] : offsets[index + 1]]
            )

    def test_corrupt_label_detected_at_load(self, tmp_path):
        manifest = build_dataset(tmp_path, self.CONFIG, seed=2)
        path = tmp_path / "samples.bin"
        blob = bytearray(path.read_bytes())
        # label field sits 24 bytes into the record header
        label_at = manifest["offsets"][0] + 24
        blob[label_at] = 1 - blob[label_at]
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_bad_magic_detected(self, tmp_path):
        build_dataset(tmp_path, self.CONFIG, seed=2)
        path = tmp_path / "samples.bin"
        blob = bytearray(path.read_bytes())
        blob[0] = ord("X")
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_truncated_file_detected(self, tmp_path):
        build_dataset(tmp_path, self.CONFIG, seed=2)
        path = tmp_path / "samples.bin"
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_missing_manifest_detected(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_manifest_is_valid_json_with_metadata(self, tmp_path):
        build_dataset(tmp_path, self.CONFIG, seed=4)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 4
        assert len(manifest["config_hash"]) == 16
        assert manifest["geometry"]["frames"] == 8

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            DatasetConfig(train_count=0)
        with pytest.raises(ValueError):
            DatasetConfig(severity_min=0.9, severity_max=0.5)


class TestGeometryAndConditions:
    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            LatentGeometry(frames=1)
        with pytest.raises(ValueError):
            LatentGeometry(height=2)
        with pytest.raises(ValueError):
            LatentGeometry(channels=0)

    def test_condition_token_validation(self):
        with pytest.raises(ValueError):
            ConditionTokens(4, 0, 0)
        with pytest.raises(ValueError):
            ConditionTokens(0, 8, 0)
        with pytest.raises(ValueError):
            ConditionTokens(0, 0, 3)
