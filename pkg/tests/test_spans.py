import math

import pytest
import torch
from hypothesis import given, strategies as st

from diffspan import spans

T = lambda *vals: torch.tensor(vals, dtype=torch.float64)


def cw(start, end):
    return T((start + end) / 2, end - start)


class TestIntervalConversion:
    def test_full_video_span(self):
        assert torch.allclose(spans.to_interval(T(0.5, 1.0)), T(0.0, 1.0))

    def test_direct_arithmetic(self):
        assert torch.allclose(spans.to_interval(T(0.3, 0.2)), T(0.2, 0.4))

    def test_round_trip(self):
        assert torch.allclose(spans.from_interval(T(0.2, 0.4)), T(0.3, 0.2))

    def test_rejects_reversed_interval(self):
        with pytest.raises(ValueError):
            spans.from_interval(T(0.4, 0.2))

    @given(st.floats(0.0, 1.0), st.floats(1e-6, 1.0))
    def test_round_trip_identity(self, c, w):
        s = T(c, w)
        back = spans.from_interval(spans.to_interval(s))
        assert torch.allclose(back, s, atol=1e-12)


class TestScaling:
    def test_midpoint_maps_to_zero(self):
        assert spans.scale_up(T(0.5), 2.0).item() == 0.0

    def test_upper_bound(self):
        assert spans.scale_up(T(1.0), 2.0).item() == 2.0

    def test_quarter(self):
        assert spans.scale_up(T(0.25), 2.0).item() == pytest.approx(-1.0, abs=1e-12)

    def test_down_midpoint(self):
        assert spans.scale_down(T(0.0), 2.0).item() == 0.5

    def test_down_clamps_high(self):
        assert spans.scale_down(T(3.0), 2.0).item() == 1.0

    def test_down_clamps_low(self):
        assert spans.scale_down(T(-2.0), 2.0).item() == 0.0

    @given(st.floats(0.0, 1.0), st.floats(0.1, 10.0))
    def test_round_trip_identity(self, x, lam):
        v = T(x)
        assert abs(spans.scale_down(spans.scale_up(v, lam), lam).item() - x) <= 1e-12


class TestIoU:
    def test_identical(self):
        a = T(0.3, 0.2)
        assert spans.iou(a, a).item() == pytest.approx(1.0, abs=1e-12)

    def test_disjoint(self):
        assert spans.iou(cw(0.0, 0.2), cw(0.8, 1.0)).item() == 0.0

    def test_partial_overlap(self):
        # [0.2, 0.4] vs [0.3, 0.6]: inter 0.1, union 0.4
        assert spans.iou(cw(0.2, 0.4), cw(0.3, 0.6)).item() == pytest.approx(0.25, abs=1e-12)

    @given(
        st.floats(0.0, 1.0), st.floats(1e-3, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 1.0)
    )
    def test_symmetric_and_bounded(self, c1, w1, c2, w2):
        a, b = T(c1, w1), T(c2, w2)
        ab, ba = spans.iou(a, b).item(), spans.iou(b, a).item()
        assert ab == pytest.approx(ba, abs=1e-15)
        assert 0.0 <= ab <= 1.0


class TestGIoULoss:
    def test_identical(self):
        a = T(0.3, 0.2)
        assert spans.giou_loss(a, a).item() == pytest.approx(0.0, abs=1e-12)

    def test_disjoint(self):
        # IoU 0, hull 1.0, union 0.4, gIoU -0.6 -> loss 1.6
        assert spans.giou_loss(cw(0.0, 0.2), cw(0.8, 1.0)).item() == pytest.approx(1.6, abs=1e-12)

    def test_overlapping_equals_one_minus_iou(self):
        # hull == union when spans overlap
        assert spans.giou_loss(cw(0.2, 0.4), cw(0.3, 0.6)).item() == pytest.approx(0.75, abs=1e-12)

    @given(
        st.floats(0.0, 1.0), st.floats(1e-3, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 1.0)
    )
    def test_range_symmetry_and_touching_identity(self, c1, w1, c2, w2):
        a, b = T(c1, w1), T(c2, w2)
        loss = spans.giou_loss(a, b).item()
        assert loss == pytest.approx(spans.giou_loss(b, a).item(), abs=1e-15)
        assert 0.0 <= loss <= 2.0
        inter, union, hull = spans._inter_union_hull(a, b)
        if math.isclose(hull.item(), union.item(), rel_tol=1e-12):
            assert loss == pytest.approx(1.0 - spans.iou(a, b).item(), abs=1e-12)

    def test_endpoint_continuity(self):
        gen = torch.Generator().manual_seed(7)
        delta = 1e-6
        for _ in range(200):
            c = torch.rand(2, generator=gen, dtype=torch.float64)
            w = 0.05 + 0.5 * torch.rand(2, generator=gen, dtype=torch.float64)
            a, b = torch.stack([c[0], w[0]]), torch.stack([c[1], w[1]])
            base = spans.giou_loss(a, b).item()
            shifted = spans.giou_loss(a + torch.tensor([delta, 0.0]), b).item()
            assert abs(shifted - base) <= 200.0 * delta


class TestClampUnit:
    def test_clamps_interval_to_unit(self):
        out = spans.clamp_unit(T(0.0, 0.6))  # interval [-0.3, 0.3] -> [0, 0.3]
        assert torch.allclose(out, T(0.15, 0.3), atol=1e-12)

    def test_inside_untouched(self):
        s = T(0.4, 0.2)
        assert torch.allclose(spans.clamp_unit(s), s, atol=1e-15)

    def test_width_floor(self):
        out = spans.clamp_unit(T(0.5, 0.0))
        assert out[1].item() == spans.WIDTH_EPS


class TestPairwise:
    def test_matches_elementwise(self):
        gen = torch.Generator().manual_seed(3)
        a = torch.rand(4, 2, generator=gen, dtype=torch.float64)
        b = torch.rand(6, 2, generator=gen, dtype=torch.float64)
        mat = spans.pairwise_iou(a, b)
        for i in range(4):
            for j in range(6):
                assert mat[i, j].item() == pytest.approx(spans.iou(a[i], b[j]).item(), abs=1e-15)
