import json
import struct

import numpy as np
import pytest
from scipy import stats

from amploco import priors
from amploco.dynamics import FEATURE_DIM, RobotModel, leg_fk, leg_ik
from amploco.errors import CorruptFile, EmptyDataset, InfeasibleThrust, SchemaMismatch, Unreachable
from amploco.priors import (FlightBoundary, MotionClip, MotionDataset, generate_flight_clip,
                            generate_walk_clip, load_dataset, sample_transitions, save_dataset)


@pytest.fixture(scope="module")
def datasets():
    return priors.default_priors(RobotModel(), n_walk=4, n_fly=4, seed=3)


def _clip(n, value=0.0, label="walk"):
    frames = np.full((n, FEATURE_DIM), value, dtype=float)
    frames[:, 17:] = 0.0
    frames[:, 0] = np.arange(n)
    return MotionClip(frames, label)


class TestIk:
    def test_full_extension(self):
        np.testing.assert_allclose(leg_ik([0.0, -0.6], 0.3, 0.3), [0.0, 0.0], atol=1e-7)

    def test_fully_folded(self):
        # the inner edge of the annulus is |l1 - l2|; there the shank folds back onto the thigh
        hip, knee = leg_ik([0.0, -0.1], 0.4, 0.3)
        assert knee == pytest.approx(-np.pi)
        np.testing.assert_allclose(leg_fk([hip, knee], 0.4, 0.3), [0.0, -0.1], atol=1e-12)

    def test_round_trip_thousand_targets(self, rng):
        l1, l2 = 0.3, 0.3
        worst = 0.0
        for _ in range(1000):
            r = rng.uniform(abs(l1 - l2) + 1e-6, l1 + l2)
            a = rng.uniform(-np.pi, np.pi)
            target = np.array([r * np.sin(a), -r * np.cos(a)])
            worst = max(worst, np.linalg.norm(leg_fk(leg_ik(target, l1, l2), l1, l2) - target))
        assert worst < 1e-9

    def test_unreachable(self):
        with pytest.raises(Unreachable):
            leg_ik([0.7, 0.0], 0.3, 0.3)


class TestWalk:
    def test_standing(self, model):
        clip = generate_walk_clip(model, stride=0.0)
        np.testing.assert_allclose(clip.frames, np.repeat(clip.frames[:1], len(clip), axis=0), atol=1e-12)
        assert np.max(np.abs(clip.frames[:, 9:13])) < 1e-9

    def test_mean_velocity(self, model):
        clip = generate_walk_clip(model, stride=0.4, cycle=1.0, n_cycles=2)
        assert np.mean(clip.frames[:, 2]) == pytest.approx(0.4, abs=1e-6)
        x = clip.root[:, 0]
        assert (x[-1] - x[0]) / ((len(clip) - 1) / clip.rate_hz) == pytest.approx(0.4, abs=1e-6)

    def test_zero_thrust(self, datasets):
        walk, _ = datasets
        assert np.all(walk.frames()[:, 17:19] == 0.0)

    @pytest.mark.parametrize("phase", [0.0, 0.3, 0.77])
    def test_stance_feet_planted(self, model, phase):
        clip = generate_walk_clip(model, stride=0.44, n_cycles=2, phase=phase)
        assert priors.stance_foot_drift(model, clip, phase=phase) < 1e-3

    def test_finite_difference_consistency(self, model):
        clip = generate_walk_clip(model, n_cycles=2)
        f = clip.frames
        np.testing.assert_allclose(f[:-1, 9:13], np.diff(f[:, 5:9], axis=0) * clip.rate_hz, atol=1e-6)

    def test_knee_branch(self, datasets):
        walk, _ = datasets
        knees = walk.frames()[:, [6, 8]]
        assert np.all(knees <= 0.0)

    def test_unit_circle(self, datasets):
        for ds in datasets:
            f = ds.frames()
            np.testing.assert_allclose(f[:, 0] ** 2 + f[:, 1] ** 2, 1.0, atol=1e-9)

    def test_out_of_reach(self, model):
        with pytest.raises(Unreachable):
            generate_walk_clip(model, base_height=0.8)

    def test_bad_duty(self, model):
        with pytest.raises(ValueError):
            generate_walk_clip(model, duty=0.4)


class TestFlight:
    def test_hover(self, model):
        clip = generate_flight_clip(model, FlightBoundary((0.0, 2.0)), FlightBoundary((0.0, 2.0)), 2.0)
        np.testing.assert_allclose(clip.frames[:, 17:19], 215.82, rtol=0, atol=1e-9)
        np.testing.assert_allclose(clip.frames[:, 1], 0.0, atol=1e-12)

    def test_boundary_conditions(self, model):
        start = FlightBoundary((0.0, 1.0), (0.5, 0.0), (0.0, 0.2))
        goal = FlightBoundary((3.0, 2.5), (0.0, 0.3), (0.1, 0.0))
        clip = generate_flight_clip(model, start, goal, 3.0)
        pos, vel = clip.root[:, :2], clip.root[:, 2:]
        for k, b in ((0, start), (-1, goal)):
            np.testing.assert_allclose(pos[k], b.position, atol=1e-9)
            np.testing.assert_allclose(vel[k], b.velocity, atol=1e-9)
            np.testing.assert_allclose(clip.acceleration[k], b.acceleration, atol=1e-9)

    def test_acceleration_is_quintic_second_derivative(self, model):
        start, goal, T = FlightBoundary((0.0, 1.0)), FlightBoundary((2.0, 3.0)), 3.0
        clip = generate_flight_clip(model, start, goal, T)
        # rest-to-rest quintic: p(t) = p0 + (p1 - p0) (10 s^3 - 15 s^4 + 6 s^5), s = t / T
        t = np.arange(len(clip)) / clip.rate_hz
        s = t / T
        dd = (60 * s - 180 * s ** 2 + 120 * s ** 3) / T ** 2
        expected = np.outer(dd, np.subtract(goal.position, start.position))
        np.testing.assert_allclose(clip.acceleration[:len(clip)], expected, atol=1e-9)

    def test_thrust_direction_tracks_force(self, model):
        clip = generate_flight_clip(model, FlightBoundary((0.0, 1.0)), FlightBoundary((3.0, 1.5)), 2.5)
        acc = clip.acceleration[:len(clip)]
        force = model.mass * (acc + [0.0, model.gravity])
        up = np.column_stack([-clip.frames[:, 1], clip.frames[:, 0]])
        total = clip.frames[:, 17:19].sum(axis=1)
        np.testing.assert_allclose(up * total[:, None], force, atol=1e-8)

    def test_thrust_in_range(self, datasets):
        _, fly = datasets
        t = fly.frames()[:, 17:19]
        assert np.all(t >= 0) and np.all(t <= 250.0)

    def test_infeasible(self, model):
        with pytest.raises(InfeasibleThrust):
            generate_flight_clip(model, FlightBoundary((0.0, 1.0)), FlightBoundary((10.0, 1.0)), 1.0)

    def test_pitch_rate_matches_angle_derivative(self, model):
        clip = generate_flight_clip(model, FlightBoundary((0.0, 1.0)), FlightBoundary((2.0, 1.2)), 3.0)
        phi = np.arctan2(clip.frames[:, 1], clip.frames[:, 0])
        central = (phi[2:] - phi[:-2]) * clip.rate_hz / 2.0
        np.testing.assert_allclose(clip.frames[1:-1, 4], central, atol=2e-3)


class TestSampling:
    def test_single_pair(self, rng):
        ds = MotionDataset([_clip(2)])
        batch = sample_transitions(ds, 50, rng)
        assert batch.shape == (50, 2, FEATURE_DIM)
        assert np.all(batch[:, 0, 0] == 0) and np.all(batch[:, 1, 0] == 1)

    def test_uniform_over_pairs(self):
        ds = MotionDataset([_clip(10, 1.0), _clip(30, 2.0)])
        batch = sample_transitions(ds, 100_000, np.random.default_rng(0))
        counts = [np.sum(batch[:, 0, 1] == 1.0), np.sum(batch[:, 0, 1] == 2.0)]
        expected = np.array([9, 29]) / 38 * 100_000
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_pairs_are_consecutive(self, datasets, rng):
        walk, _ = datasets
        batch = walk.sample(200, rng)
        starts = walk.pairs[:, 0]
        for pair in batch:
            k = np.flatnonzero(np.all(starts == pair[0], axis=1))[0]
            np.testing.assert_array_equal(walk.pairs[k, 1], pair[1])

    def test_deterministic(self, datasets):
        walk, _ = datasets
        a = sample_transitions(walk, 64, np.random.default_rng(5))
        b = sample_transitions(walk, 64, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empty(self, rng):
        with pytest.raises(EmptyDataset):
            sample_transitions(MotionDataset([]), 4, rng)

    def test_clip_invariants(self):
        with pytest.raises(SchemaMismatch):
            MotionClip(np.zeros((3, 5)))
        with pytest.raises(ValueError):
            MotionClip(np.zeros((1, FEATURE_DIM)))
        bad = np.zeros((3, FEATURE_DIM))
        bad[:, 17] = 1.0
        with pytest.raises(ValueError):
            MotionClip(bad, "walk")


def _raw_file(path, header, body=b""):
    head = json.dumps(header).encode()
    path.write_bytes(b"AMPPRIOR" + struct.pack("<I", len(head)) + head + body)


class TestFiles:
    def test_round_trip(self, datasets, tmp_path):
        walk, fly = datasets
        both = walk + fly
        save_dataset(both, tmp_path / "d.prior")
        back = load_dataset(tmp_path / "d.prior")
        assert [c.label for c in back.clips] == [c.label for c in both.clips]
        for a, b in zip(back.clips, both.clips):
            assert a.frames.tobytes() == b.frames.tobytes()

    def test_byte_identical_regeneration(self, tmp_path):
        for name in ("a", "b"):
            w, _ = priors.default_priors(RobotModel(), 2, 1, seed=11)
            save_dataset(w, tmp_path / name)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_wrong_feature_dim(self, tmp_path):
        header = {"version": 1, "feature_dim": 20, "rate_hz": 60.0, "layout": "x", "n_clips": 1}
        _raw_file(tmp_path / "bad", header)
        with pytest.raises(SchemaMismatch):
            load_dataset(tmp_path / "bad")

    def test_wrong_version(self, tmp_path):
        header = {"version": 99, "feature_dim": 19, "rate_hz": 60.0,
                  "layout": priors.FEATURE_LAYOUT, "n_clips": 1}
        _raw_file(tmp_path / "bad", header)
        with pytest.raises(SchemaMismatch):
            load_dataset(tmp_path / "bad")

    def test_empty(self, tmp_path):
        save_dataset(MotionDataset([]), tmp_path / "empty")
        with pytest.raises(EmptyDataset):
            load_dataset(tmp_path / "empty")

    def test_truncated_and_garbage(self, datasets, tmp_path):
        walk, _ = datasets
        save_dataset(walk, tmp_path / "d")
        data = (tmp_path / "d").read_bytes()
        (tmp_path / "cut").write_bytes(data[:-10])
        with pytest.raises(CorruptFile):
            load_dataset(tmp_path / "cut")
        (tmp_path / "long").write_bytes(data + b"\0")
        with pytest.raises(CorruptFile):
            load_dataset(tmp_path / "long")
        (tmp_path / "junk").write_bytes(b"hello world, not a prior")
        with pytest.raises(CorruptFile):
            load_dataset(tmp_path / "junk")


def test_default_priors_shape():
    walk, fly = priors.default_priors(RobotModel(), n_walk=3, n_fly=2, seed=0)
    assert len(walk) == 3 and len(fly) == 2
    assert all(c.label == "walk" for c in walk.clips) and all(c.label == "fly" for c in fly.clips)
    assert all(c.rate_hz == 60.0 for c in walk.clips + fly.clips)
