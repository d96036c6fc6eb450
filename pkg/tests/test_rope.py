import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tide.numeric import NumericError, Rng
from tide.rope import (
    Axis,
    FrequencyTable,
    RopeMode,
    RopeSpec,
    axial_positions,
    axis_tables,
    base_frequencies,
    interpolate,
    rotate,
)


def spec4(**kw):
    return RopeSpec(head_dim=8, axis_split=(4, 4), **kw)


def rotate_pair_oracle(x, y, angle):
    return x * math.cos(angle) - y * math.sin(angle), x * math.sin(angle) + y * math.cos(angle)


class TestBaseFrequencies:
    def test_d4(self):
        tb = base_frequencies(spec4(), Axis.HEIGHT)
        np.testing.assert_allclose(tb.thetas, [1.0, 0.01], rtol=1e-15)
        np.testing.assert_array_equal(tb.norm_freq, [1.0, 0.0])
        assert tb.pos_scale == 1.0

    @pytest.mark.parametrize("d", [2, 8, 16, 64])
    def test_first_theta_is_one(self, d):
        tb = base_frequencies(RopeSpec(head_dim=2 * d), Axis.WIDTH)
        assert tb.thetas[0] == 1.0
        assert np.all(np.diff(tb.thetas) < 0)

    def test_rank_linear_norm_freq(self):
        tb = base_frequencies(RopeSpec(head_dim=16), Axis.HEIGHT)
        np.testing.assert_allclose(tb.norm_freq, [1.0, 2 / 3, 1 / 3, 0.0])

    def test_odd_axis_rejected(self):
        with pytest.raises(ValueError):
            RopeSpec(head_dim=6, axis_split=(3, 3))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            RopeSpec(head_dim=8, scale_s=0.5)
        with pytest.raises(ValueError):
            RopeSpec(head_dim=8, ramp_low=5, ramp_high=5)

    def test_tables_read_only(self):
        tb = base_frequencies(spec4(), Axis.HEIGHT)
        with pytest.raises(ValueError):
            tb.thetas[0] = 2.0


class TestInterpolate:
    @pytest.mark.parametrize("mode", list(RopeMode))
    def test_identity_scale(self, mode):
        sp = spec4(mode=mode)
        tb = base_frequencies(sp, Axis.HEIGHT)
        assert interpolate(sp, tb) == tb

    def test_pi(self):
        sp = spec4(mode=RopeMode.PI, scale_s=4)
        tb = base_frequencies(sp, Axis.HEIGHT)
        out = interpolate(sp, tb)
        assert out.pos_scale == 4
        np.testing.assert_array_equal(out.thetas, tb.thetas)

    def test_ntk_aware(self):
        sp = spec4(mode=RopeMode.NTK_AWARE, scale_s=4)
        out = interpolate(sp, base_frequencies(sp, Axis.HEIGHT))
        np.testing.assert_allclose(out.thetas, [1.0, 0.0025], rtol=1e-13)
        assert out.pos_scale == 1.0
        np.testing.assert_array_equal(out.norm_freq, [1.0, 0.0])

    def test_ntk_aware_single_pair_noop(self):
        sp = RopeSpec(head_dim=4, mode=RopeMode.NTK_AWARE, scale_s=4)
        tb = base_frequencies(sp, Axis.HEIGHT)
        assert tb.norm_freq.tolist() == [1.0]  # a lone pair counts as the fastest
        np.testing.assert_array_equal(interpolate(sp, tb).thetas, [1.0])

    def test_ntk_by_parts_ramp_between(self):
        sp = RopeSpec(head_dim=16, mode=RopeMode.NTK_BY_PARTS, scale_s=4, context_len=1000)
        tb = base_frequencies(sp, Axis.HEIGHT)
        out = interpolate(sp, tb)
        ratio = out.thetas / tb.thetas
        # rotations over the context: 159, 15.9, 1.59, 0.159
        rot = 1000 * tb.thetas / (2 * math.pi)
        gamma = np.clip((rot - 1) / 31, 0, 1)
        np.testing.assert_allclose(ratio, gamma + (1 - gamma) / 4, rtol=1e-14)
        assert ratio[0] == 1.0 and ratio[-1] == 0.25
        assert np.all(np.diff(out.thetas) < 0)

    @pytest.mark.parametrize("mode", list(RopeMode))
    def test_rejects_s_below_one(self, mode):
        with pytest.raises(ValueError):
            spec4(mode=mode, scale_s=0.5)
        sp = spec4(mode=mode)
        object.__setattr__(sp, "scale_s", 0.5)  # bypass construction checks
        with pytest.raises(ValueError):
            interpolate(sp, base_frequencies(sp, Axis.HEIGHT))

    def test_time_hook_requires_blend(self):
        sp = spec4(mode=RopeMode.PI, scale_s=4)
        tb = base_frequencies(sp, Axis.HEIGHT)
        with pytest.raises(ValueError, match="blend"):
            interpolate(sp, tb, t=0.5)

    def test_time_hook_blend(self):
        sp = spec4(mode=RopeMode.PI, scale_s=4)
        tb = base_frequencies(sp, Axis.HEIGHT)
        assert interpolate(sp, tb, t=0.0, blend=lambda t: t) == tb
        assert interpolate(sp, tb, t=1.0, blend=lambda t: t).pos_scale == 4
        assert interpolate(sp, tb, t=0.5, blend=lambda t: t).pos_scale == 2.5


class TestPositions:
    def test_single(self):
        np.testing.assert_array_equal(axial_positions(1, 1), [[0, 0]])

    def test_two_by_two(self):
        np.testing.assert_array_equal(axial_positions(2, 2), [[0, 0], [0, 1], [1, 0], [1, 1]])

    def test_two_by_three_token4(self):
        assert tuple(axial_positions(2, 3)[4]) == (4 // 3, 4 % 3)


class TestRotate:
    def test_zero_position_identity(self):
        sp = RopeSpec(head_dim=8)
        x = Rng(0).normal_matrix(3, 8)
        out = rotate(x, np.zeros((3, 2), dtype=int), axis_tables(sp))
        np.testing.assert_array_equal(out, x)

    def test_one_radian(self):
        tb = FrequencyTable(np.array([1.0]), np.array([1.0]))
        empty = FrequencyTable(np.zeros(0), np.zeros(0))
        out = rotate([[1.0, 0.0]], [[1, 0]], (tb, empty))
        np.testing.assert_allclose(out[0], [math.cos(1), math.sin(1)], atol=1e-15)

    def test_matches_pair_oracle(self):
        sp = RopeSpec(head_dim=8, base=100.0)
        tables = axis_tables(sp)
        x = Rng(1).normal_matrix(1, 8)[0]
        pos = (3, 5)
        out = rotate([x], [pos], tables)[0]
        expected = []
        for axis, tb in enumerate(tables):
            for j, th in enumerate(tb.thetas):
                off = 4 * axis + 2 * j
                expected += rotate_pair_oracle(x[off], x[off + 1], pos[axis] * th)
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_preserves_pair_norms(self):
        sp = RopeSpec(head_dim=16)
        x = Rng(2).normal_matrix(20, 16)
        pos = axial_positions(4, 5)
        out = rotate(x, pos, axis_tables(sp))
        n_in = np.hypot(x[:, 0::2], x[:, 1::2])
        n_out = np.hypot(out[:, 0::2], out[:, 1::2])
        np.testing.assert_allclose(n_out, n_in, rtol=0, atol=1e-12)

    def test_band_scale(self):
        sp = RopeSpec(head_dim=8)
        x = Rng(3).normal_matrix(4, 8)
        pos = axial_positions(2, 2)
        g = np.array([1.0, 2.0, 3.0, 4.0])
        plain = rotate(x, pos, axis_tables(sp))
        scaled = rotate(x, pos, axis_tables(sp), g)
        np.testing.assert_allclose(scaled, plain * np.repeat(g, 2), rtol=1e-15)

    def test_shape_mismatch(self):
        sp = RopeSpec(head_dim=8)
        with pytest.raises(NumericError):
            rotate(np.zeros((2, 6)), np.zeros((2, 2)), axis_tables(sp))
        with pytest.raises(NumericError):
            rotate(np.zeros((2, 8)), np.zeros((3, 2)), axis_tables(sp))


positions = st.tuples(st.integers(0, 200), st.integers(0, 200))


def dot_rotated(tables, q, k, m, n):
    return float(rotate([q], [m], tables)[0] @ rotate([k], [n], tables)[0])


@settings(max_examples=50, deadline=None)
@given(positions, positions, st.tuples(st.integers(0, 50), st.integers(0, 50)), st.integers(0, 2**32))
def test_relative_position_property(m, n, shift, seed):
    tables = axis_tables(RopeSpec(head_dim=16))
    rng = Rng(seed)
    q, k = rng.normal(16), rng.normal(16)
    m2 = (m[0] + shift[0], m[1] + shift[1])
    n2 = (n[0] + shift[0], n[1] + shift[1])
    assert abs(dot_rotated(tables, q, k, m, n) - dot_rotated(tables, q, k, m2, n2)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(positions, positions, st.sampled_from([2.0, 3.0, 4.0]), st.integers(0, 2**32))
def test_pi_undoes_position_scaling(m, n, s, seed):
    sp = RopeSpec(head_dim=16, mode=RopeMode.PI, scale_s=s)
    plain = axis_tables(replace(sp, mode=RopeMode.DIRECT))
    pi = axis_tables(sp)
    rng = Rng(seed)
    q, k = rng.normal(16), rng.normal(16)
    ms = (m[0] * s, m[1] * s)
    ns = (n[0] * s, n[1] * s)
    assert abs(dot_rotated(pi, q, k, ms, ns) - dot_rotated(plain, q, k, m, n)) < 1e-9


@pytest.mark.parametrize("s", [2.0, 4.0])
def test_ntk_by_parts_limits(s):
    rng = Rng(11)
    x = rng.normal_matrix(12, 16)
    pos = axial_positions(3, 4) * 7
    base = RopeSpec(head_dim=16, scale_s=s)
    full = replace(base, mode=RopeMode.NTK_BY_PARTS, ramp_low=1e9, ramp_high=2e9)
    none = replace(base, mode=RopeMode.NTK_BY_PARTS, ramp_low=1e-12, ramp_high=2e-12)
    pi = replace(base, mode=RopeMode.PI)
    direct = replace(base, mode=RopeMode.DIRECT)
    np.testing.assert_allclose(
        rotate(x, pos, axis_tables(full)), rotate(x, pos, axis_tables(pi)), atol=1e-12
    )
    np.testing.assert_array_equal(
        rotate(x, pos, axis_tables(none)), rotate(x, pos, axis_tables(direct))
    )
