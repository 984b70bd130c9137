import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amploco.dynamics import RobotState
from amploco.errors import InvalidSpec
from amploco.terrain import HeightField, TerrainSpec, flat, generate, height_at, sample_heightmap


class TestGenerate:
    @pytest.mark.parametrize("seed", [0, 1, 99])
    def test_flat_is_zero(self, seed):
        assert np.all(generate(TerrainSpec(kind="flat", seed=seed)).samples == 0.0)

    def test_gap_depth(self):
        spec = TerrainSpec(kind="gaps", pit_depth=3.0, gap_width=2.0, ground_length=2.0, flat_start=3.0)
        f = generate(spec)
        # first gap spans (5, 7)
        assert height_at(f, 6.0) == -3.0
        assert height_at(f, 4.0) == 0.0
        assert set(np.unique(f.samples)) == {0.0, -3.0}

    def test_stepping_stones_alternate(self):
        f = generate(TerrainSpec(kind="stepping_stones", stone_width=0.4, gap_width=0.6))
        xs = f.origin + f.spacing * np.arange(f.samples.size)
        ahead = f.samples[xs > 3.2]
        changes = np.count_nonzero(np.diff(ahead != 0))
        assert changes > 100

    def test_rough_determinism_and_amplitude(self):
        spec = TerrainSpec(kind="rough", amplitude=0.1, seed=4)
        a, b = generate(spec), generate(spec)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert np.max(np.abs(a.samples)) == pytest.approx(0.1)
        assert not np.array_equal(a.samples, generate(TerrainSpec(kind="rough", amplitude=0.1, seed=5)).samples)

    @pytest.mark.parametrize("kw", [{"pit_depth": 0.0}, {"gap_width": -1.0}, {"stone_width": 0.0},
                                    {"spacing": 0.0}, {"kind": "lava"}, {"amplitude": -0.1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidSpec):
            generate(TerrainSpec(**kw))


class TestHeightAt:
    def test_interpolation(self):
        f = HeightField(origin=0.0, spacing=1.0, samples=np.array([0.0, 1.0]))
        assert height_at(f, 0.25) == pytest.approx(0.25)

    def test_clamp(self):
        f = HeightField(origin=0.0, spacing=1.0, samples=np.array([0.5, 1.0, 2.0]))
        assert height_at(f, 10.0) == 2.0
        assert height_at(f, -10.0) == 0.5

    def test_pit_fill(self):
        f = HeightField(origin=0.0, spacing=1.0, samples=np.array([0.0, 0.0]), oob=-3.0)
        assert height_at(f, 5.0) == -3.0

    @given(x=st.floats(-100, 300))
    def test_flat_anywhere(self, x):
        assert flat().height_at(x) == 0.0

    def test_vectorised(self):
        f = HeightField(origin=0.0, spacing=0.5, samples=np.array([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(height_at(f, np.array([0.25, 0.5, 0.75])), [0.5, 1.0, 0.5])

    @pytest.mark.parametrize("samples,spacing", [([0.0], 1.0), ([0.0, np.nan], 1.0), ([0.0, 1.0], 0.0)])
    def test_invalid_field(self, samples, spacing):
        with pytest.raises(InvalidSpec):
            HeightField(origin=0.0, spacing=spacing, samples=np.array(samples))


def _step_field():
    xs = np.arange(-5.0, 5.0 + 1e-9, 0.05)
    return HeightField(origin=-5.0, spacing=0.05, samples=np.where(xs >= 0.0, 0.5, 0.0))


class TestScan:
    def test_flat_sign(self):
        np.testing.assert_array_equal(sample_heightmap(flat(), RobotState(z=1.0), 9, 0.3), -np.ones(9))

    def test_step_under_base(self):
        scan = sample_heightmap(_step_field(), RobotState(x=0.0, z=1.0), 9, 0.3)
        # the centre cell sits on the edge itself; only cells off the edge are determined
        np.testing.assert_allclose(scan[5:], -0.5, atol=1e-12)
        np.testing.assert_allclose(scan[:4], -1.0, atol=1e-12)

    def test_single_cell(self):
        f = generate(TerrainSpec(kind="rough", seed=2))
        scan = sample_heightmap(f, RobotState(x=1.3, z=0.8), 1, 0.3)
        assert scan.shape == (1,)
        assert scan[0] == pytest.approx(height_at(f, 1.3) - 0.8)

    @given(dx=st.floats(-2, 2), x=st.floats(-1, 1))
    def test_translation_equivariance(self, dx, x):
        f = _step_field()
        g = HeightField(origin=f.origin + dx, spacing=f.spacing, samples=f.samples)
        a = sample_heightmap(f, (x, 1.0), 9, 0.3)
        b = sample_heightmap(g, (x + dx, 1.0), 9, 0.3)
        np.testing.assert_allclose(a, b, atol=1e-9)

    @given(dz=st.floats(-3, 3))
    def test_raising_base(self, dz):
        f = _step_field()
        a = sample_heightmap(f, (0.1, 1.0), 9, 0.3)
        b = sample_heightmap(f, (0.1, 1.0 + dz), 9, 0.3)
        np.testing.assert_allclose(a - b, dz, atol=1e-12)

    def test_bad_arguments(self):
        with pytest.raises(InvalidSpec):
            sample_heightmap(flat(), (0.0, 0.0), 0, 0.3)


def test_text_export():
    f = HeightField(origin=0.0, spacing=0.5, samples=np.array([0.0, -1.0]))
    rows = np.loadtxt(f.to_text().splitlines())
    np.testing.assert_allclose(rows, [[0.0, 0.0], [0.5, -1.0]])
