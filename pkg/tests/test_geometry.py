import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locgen.geometry import (
    BBox,
    ZERO_BOX,
    area,
    giou,
    iou,
    iou_hat,
    union_all,
    union_box,
)

from oracles import raster_giou, raster_iou, raster_iou_hat


def boxes(min_side=0.0):
    def build(xs, ys):
        x1, x2 = sorted(xs)
        y1, y2 = sorted(ys)
        return BBox(x1, y1, min(1.0, x2 + min_side), min(1.0, y2 + min_side))

    coord = st.floats(0.0, 1.0, allow_nan=False, allow_infinity=False)
    return st.builds(build, st.tuples(coord, coord), st.tuples(coord, coord))


class TestBBox:
    def test_valid_and_area(self):
        b = BBox(0.1, 0.2, 0.5, 0.4)
        assert b.area == pytest.approx(0.4 * 0.2)
        assert ZERO_BOX.area == 0.0

    def test_rejects_flipped_corners(self):
        with pytest.raises(ValueError):
            BBox(0.5, 0.1, 0.2, 0.3)
        with pytest.raises(ValueError):
            BBox(-0.1, 0.0, 0.5, 0.5)
        with pytest.raises(ValueError):
            BBox(0.0, 0.0, 0.5, 1.5)

    def test_round_trip(self):
        b = BBox(0.1, 0.2, 0.3, 0.4)
        assert BBox.from_seq(b.as_array()) == b


class TestUnionBox:
    def test_examples(self):
        assert union_box([0.1, 0.1, 0.3, 0.3], [0.2, 0.2, 0.5, 0.4]) == BBox(0.1, 0.1, 0.5, 0.4)
        b = BBox(0.2, 0.3, 0.4, 0.5)
        assert union_box(b, b) == b
        assert union_box([0.0, 0.5, 0.2, 0.6], [0.7, 0.1, 0.9, 0.2]) == BBox(0.0, 0.1, 0.9, 0.6)

    @given(boxes(), boxes())
    def test_commutative_and_contains(self, a, b):
        u = union_box(a, b)
        assert u == union_box(b, a)
        for box in (a, b):
            assert u.x1 <= box.x1 and u.y1 <= box.y1
            assert u.x2 >= box.x2 and u.y2 >= box.y2

    @given(boxes(), boxes(), boxes())
    def test_associative(self, a, b, c):
        lhs = union_box(union_box(a, b), c)
        rhs = union_box(a, union_box(b, c))
        assert lhs == rhs

    @given(boxes())
    def test_idempotent(self, a):
        assert union_box(a, a) == a

    def test_union_all(self):
        assert union_all([]) == ZERO_BOX
        got = union_all([BBox(0.1, 0.1, 0.2, 0.2), BBox(0.5, 0.0, 0.6, 0.1), BBox(0.0, 0.4, 0.1, 0.5)])
        assert got == BBox(0.0, 0.0, 0.6, 0.5)


class TestIou:
    def test_examples(self):
        b = BBox(0.2, 0.2, 0.6, 0.7)
        assert iou(b, b) == 1.0
        assert iou([0.0, 0.0, 0.1, 0.1], [0.5, 0.5, 0.6, 0.6]) == 0.0
        assert iou([0.0, 0.0, 0.2, 0.2], [0.1, 0.1, 0.3, 0.3]) == pytest.approx(0.01 / 0.07)

    def test_zero_area_convention(self):
        assert iou(ZERO_BOX, ZERO_BOX) == 0.0

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


class TestGiou:
    def test_examples(self):
        b = BBox(0.3, 0.3, 0.8, 0.9)
        assert giou(b, b) == pytest.approx(1.0)
        assert giou([0.0, 0.0, 0.1, 0.1], [0.9, 0.9, 1.0, 1.0]) == pytest.approx(-0.98)

    def test_union_fills_hull_equals_iou(self):
        # stacked boxes whose union is exactly the enclosing box
        a, b = [0.0, 0.0, 1.0, 0.6], [0.0, 0.4, 1.0, 1.0]
        assert giou(a, b) == pytest.approx(iou(a, b))

    def test_degenerate_warns(self):
        with pytest.warns(RuntimeWarning):
            assert giou(ZERO_BOX, ZERO_BOX) == 0.0

    @given(boxes(min_side=0.01), boxes(min_side=0.01))
    def test_never_exceeds_iou(self, a, b):
        assert giou(a, b) <= iou(a, b) + 1e-12
        assert -1.0 < giou(a, b) <= 1.0


class TestIouHat:
    def test_examples(self):
        assert iou_hat([0.0, 0.0, 1.0, 1.0], [0.2, 0.3, 0.4, 0.5]) == pytest.approx(1.0)
        assert iou_hat([0.0, 0.0, 0.1, 0.1], [0.5, 0.5, 0.6, 0.6]) == 0.0
        assert iou_hat([0.0, 0.0, 0.5, 0.5], [0.4, 0.4, 0.6, 0.6]) == pytest.approx(0.25)

    def test_zero_area_b(self):
        assert iou_hat([0.0, 0.0, 1.0, 1.0], ZERO_BOX) == 0.0

    @given(boxes(min_side=0.01), boxes(min_side=0.01))
    def test_containment_iff_one(self, a, b):
        v = iou_hat(a, b)
        assert 0.0 <= v <= 1.0
        contained = a.x1 <= b.x1 and a.y1 <= b.y1 and a.x2 >= b.x2 and a.y2 >= b.y2
        if contained:
            assert v == pytest.approx(1.0)
        if v == pytest.approx(1.0) and area(b) > 1e-9:
            assert contained or v > 1.0 - 1e-9

    def test_monotone_in_growing_a(self):
        b = [0.4, 0.4, 0.6, 0.6]
        vals = [iou_hat([0.5 - s, 0.5 - s, 0.5 + s, 0.5 + s], b) for s in np.linspace(0.01, 0.5, 25)]
        assert all(x <= y + 1e-12 for x, y in zip(vals, vals[1:]))


@settings(max_examples=60, deadline=None)
@given(boxes(min_side=0.3), boxes(min_side=0.3))
def test_raster_oracle_agrees(a, b):
    # 512x512 grid quantization resolves side>=0.3 boxes to well under 0.01
    assert abs(iou(a, b) - raster_iou(a.as_tuple(), b.as_tuple())) < 0.01
    assert abs(giou(a, b) - raster_giou(a.as_tuple(), b.as_tuple())) < 0.01
    assert abs(iou_hat(a, b) - raster_iou_hat(a.as_tuple(), b.as_tuple())) < 0.01
