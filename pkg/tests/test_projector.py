import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simkd.errors import ConfigurationError, DimensionError
from simkd.network import param_count
from simkd.numeric import Rng
from simkd.projector import (
    KINDS,
    ProjectorSpec,
    build_projector,
    check_proposition,
    merge_linear_projector,
    projector_layers,
    projector_param_formula,
    spatial_align,
    spatial_align_backward,
)

GRID = [16, 32, 64, 128, 256]


def hand_bottleneck(cs, ct, r):
    """1x1 conv, 3x3 conv, 1x1 conv, each followed by a BN affine pair."""
    m = ct // r
    return cs * m + 2 * m + 9 * m * m + 2 * m + m * ct + 2 * ct


class TestFormula:
    @pytest.mark.parametrize("cs", GRID)
    @pytest.mark.parametrize("ct", GRID)
    @pytest.mark.parametrize("r", [1, 2, 4, 8])
    def test_matches_materialized_and_hand_count(self, cs, ct, r):
        count = param_count(projector_layers(ProjectorSpec(cs, ct, "bottleneck", r)))
        assert projector_param_formula(cs, ct, r) == count == hand_bottleneck(cs, ct, r)

    def test_indivisible_rejected(self):
        with pytest.raises(ConfigurationError):
            projector_param_formula(16, 20, 8)
        with pytest.raises(ConfigurationError):
            ProjectorSpec(16, 20, "bottleneck", 8)

    @given(st.integers(1, 64), st.integers(1, 64), st.sampled_from([1, 2, 4]))
    def test_divisible_sizes(self, cs, m, r):
        assert projector_param_formula(cs, m * r, r) == hand_bottleneck(cs, m * r, r)


class TestKinds:
    @pytest.mark.parametrize(
        "kind, expected",
        [
            ("one_conv", 16 * 32 + 64),
            ("two_conv", 16 * 16 + 32 + 16 * 32 + 64),
            ("bottleneck_dw", 16 * 16 + 32 + 9 * 16 + 32 + 16 * 32 + 64),
            ("bottleneck", 16 * 16 + 32 + 9 * 256 + 32 + 16 * 32 + 64),
            ("linear_vector", 16 * 32 + 32),
        ],
    )
    def test_counts(self, kind, expected):
        assert param_count(projector_layers(ProjectorSpec(16, 32, kind, 2))) == expected

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            ProjectorSpec(4, 4, "mlp")

    @pytest.mark.parametrize("kind", KINDS)
    def test_output_shape(self, kind):
        spec = ProjectorSpec(6, 8, kind, 2)
        proj = build_projector(spec, Rng(0), (4, 4))
        shape = (3, 6) if spec.on_vectors else (3, 6, 4, 4)
        y, _ = proj.forward(Rng(1).normal(shape), train=True)
        assert y.shape[1] == 8 and y.shape[0] == 3


class TestProposition:
    @pytest.mark.parametrize("r", [1, 2, 4, 8])
    def test_grid(self, r):
        for cs in GRID:
            for ct in GRID:
                res = check_proposition(cs, ct, r)
                assert res.left_condition == (9 * ct > 4 * r * r)
                if res.left_condition:
                    assert res.left_holds and res.right_holds

    @given(st.integers(1, 512), st.integers(1, 512), st.integers(1, 16))
    def test_left_iff_condition(self, cs, ct, r):
        res = check_proposition(cs, ct, r)
        assert res.left_holds == res.left_condition
        assert res.right_holds

    def test_left_fails_below_threshold(self):
        # C_t = 4 <= 4 * 4^2 / 9
        res = check_proposition(4, 4, 4)
        assert not res.left_holds and res.right_holds
        assert str(res) == "left: fails, right: holds"

    def test_boundary_is_exact(self):
        # C_t = 4 r^2 / 9 exactly for r = 3: equality, so the strict inequality fails
        assert not check_proposition(10, 4, 3).left_holds
        assert check_proposition(10, 5, 3).left_holds


class TestMerge:
    @given(st.integers(0, 10_000))
    def test_merged_equals_two_stage(self, seed):
        r = Rng(seed)
        W, bt, A, b = r.normal((4, 6)), r.normal(4), r.normal((6, 3)), r.normal(6)
        Wm, bm = merge_linear_projector(W, bt, A, b)
        f = r.normal((10, 3))
        two_stage = (f @ A.T + b) @ W.T + bt
        np.testing.assert_allclose(f @ Wm.T + bm, two_stage, atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            merge_linear_projector(np.zeros((4, 6)), np.zeros(4), np.zeros((5, 3)), np.zeros(5))


class TestSpatialAlign:
    def test_pooling_and_identity(self):
        x = Rng(0).normal((2, 3, 8, 8))
        assert spatial_align(x, (8, 8)) is x
        y = spatial_align(x, (2, 2))
        np.testing.assert_allclose(y[0, 0, 0, 0], x[0, 0, :4, :4].mean())

    def test_backward_is_adjoint(self):
        r = Rng(1)
        x, dy = r.normal((1, 2, 4, 4)), r.normal((1, 2, 2, 2))
        lhs = np.sum(spatial_align(x, (2, 2)) * dy)
        rhs = np.sum(x * spatial_align_backward(dy, (4, 4)))
        assert lhs == pytest.approx(rhs, rel=1e-13)

    @pytest.mark.parametrize("target", [(3, 3), (16, 16), (4, 2)])
    def test_rejects_bad_targets(self, target):
        with pytest.raises(ConfigurationError):
            spatial_align(np.zeros((1, 1, 8, 8)), target)
