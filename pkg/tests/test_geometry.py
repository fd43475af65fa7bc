import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vptk.geometry import (
    BadImage,
    BinaryMask,
    BoxPrompt,
    Degenerate,
    EmptyMask,
    FreeFormPrompt,
    MalformedRle,
    OutOfBounds,
    PointPrompt,
    VisualPromptSet,
    box_iou,
    decode_rle,
    denormalize,
    enclosing_box,
    encode_rle,
    normalize,
    prompt_from_json,
    rasterize_polygon,
)


def test_normalize_point_divides_by_image_size() -> None:
    p = normalize((50, 25), (100, 100), "point")
    assert p == PointPrompt(0.5, 0.25)


def test_normalize_box_identity_span() -> None:
    b = normalize((0, 0, 100, 100), (100, 100), "box")
    assert b == BoxPrompt(0.0, 0.0, 1.0, 1.0)


def test_normalize_rejects_outside_pixels() -> None:
    with pytest.raises(OutOfBounds):
        normalize((101, 10), (100, 100), "point")


def test_normalize_rejects_zero_dimension() -> None:
    with pytest.raises(BadImage):
        normalize((0, 0), (0, 100), "point")


def test_normalize_denormalize_round_trip_within_pixel() -> None:
    size = (640, 480)
    b = normalize((13, 7, 500, 333), size, "box")
    px = denormalize(b, size)
    assert px == pytest.approx((13, 7, 500, 333), abs=1.0)


def test_box_invariants_enforced() -> None:
    with pytest.raises(Degenerate):
        BoxPrompt(0.5, 0.5, 0.5, 0.9)
    with pytest.raises(OutOfBounds):
        BoxPrompt(-0.1, 0.0, 0.5, 0.5)


def test_free_form_needs_three_vertices() -> None:
    with pytest.raises(Degenerate):
        FreeFormPrompt(((0.1, 0.1), (0.5, 0.5)))


def test_free_form_diagonal_collinear_accepted() -> None:
    diag = FreeFormPrompt(((0.1, 0.1), (0.2, 0.2), (0.3, 0.3)))
    assert enclosing_box(diag) == BoxPrompt(0.1, 0.1, 0.3, 0.3)


def test_enclosing_box_of_triangle() -> None:
    tri = FreeFormPrompt(((0.1, 0.1), (0.5, 0.2), (0.3, 0.6)))
    assert enclosing_box(tri) == BoxPrompt(0.1, 0.1, 0.5, 0.6)


def test_enclosing_box_fixed_point_on_rectangle() -> None:
    rect = FreeFormPrompt(((0.2, 0.3), (0.7, 0.3), (0.7, 0.8), (0.2, 0.8)))
    assert enclosing_box(rect) == BoxPrompt(0.2, 0.3, 0.7, 0.8)


def test_zero_width_hull_rejected() -> None:
    # vertices spread in y but not x -> zero-width rectangle
    with pytest.raises(Degenerate):
        FreeFormPrompt(((0.4, 0.1), (0.4, 0.5), (0.4, 0.9)))


@settings(max_examples=200)
@given(
    st.lists(
        st.tuples(
            st.floats(0, 1, allow_nan=False, width=32),
            st.floats(0, 1, allow_nan=False, width=32),
        ),
        min_size=3,
        max_size=12,
    )
)
def test_enclosing_box_is_minimal(verts) -> None:
    try:
        p = FreeFormPrompt(tuple(verts))
        box = enclosing_box(p)
    except Degenerate:
        return
    xs = [x for x, _ in p.vertices]
    ys = [y for _, y in p.vertices]
    for x, y in p.vertices:
        assert box.x1 <= x <= box.x2 and box.y1 <= y <= box.y2
    # shrinking any side excludes some vertex
    assert min(xs) == box.x1 and max(xs) == box.x2
    assert min(ys) == box.y1 and max(ys) == box.y2


def test_box_iou_identical_and_disjoint() -> None:
    a = BoxPrompt(0.1, 0.1, 0.5, 0.5)
    assert box_iou(a, a) == 1.0
    b = BoxPrompt(0.6, 0.6, 0.9, 0.9)
    assert box_iou(a, b) == 0.0


def test_box_iou_hand_computed_overlap() -> None:
    a = BoxPrompt(0.0, 0.0, 0.5, 0.5)
    b = BoxPrompt(0.25, 0.25, 0.75, 0.75)
    # intersection 0.25^2 = 0.0625; union 2*0.25 - 0.0625 = 0.4375
    assert box_iou(a, b) == pytest.approx(0.0625 / 0.4375, abs=1e-12)


@settings(max_examples=200)
@given(
    st.tuples(st.floats(0, 0.45), st.floats(0, 0.45), st.floats(0.5, 1), st.floats(0.5, 1)),
    st.tuples(st.floats(0, 0.45), st.floats(0, 0.45), st.floats(0.5, 1), st.floats(0.5, 1)),
)
def test_box_iou_symmetric_and_bounded(t1, t2) -> None:
    a = BoxPrompt(*t1)
    b = BoxPrompt(*t2)
    iou = box_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == pytest.approx(box_iou(b, a), abs=1e-15)


def test_decode_rle_basic_column_major() -> None:
    mask = decode_rle([4, 3, 2], (3, 3))
    # column-major: first 4 entries of flattened columns are 0, next 3 are 1
    flat = mask.bits.T.reshape(-1)
    assert list(flat.astype(int)) == [0, 0, 0, 0, 1, 1, 1, 0, 0]
    assert mask.count_set() == 3


def test_decode_rle_all_zero_and_all_one() -> None:
    assert decode_rle([9], (3, 3)).count_set() == 0
    assert decode_rle([0, 9], (3, 3)).count_set() == 9


def test_decode_rle_sum_mismatch() -> None:
    with pytest.raises(MalformedRle):
        decode_rle([4, 3], (3, 3))


@settings(max_examples=100)
@given(st.lists(st.booleans(), min_size=1, max_size=48), st.integers(1, 8))
def test_rle_round_trip(bits, width) -> None:
    height = max(1, len(bits) // width)
    arr = np.array(bits[: height * width], dtype=bool)
    if arr.size < height * width:
        arr = np.concatenate([arr, np.zeros(height * width - arr.size, dtype=bool)])
    mask = BinaryMask(width=width, height=height, bits=arr.reshape(height, width))
    counts = encode_rle(mask)
    decoded = decode_rle(counts, (height, width))
    assert np.array_equal(decoded.bits, mask.bits)
    assert encode_rle(decoded) == counts


def test_tight_box_matches_mask_extremes() -> None:
    bits = np.zeros((10, 10), dtype=bool)
    bits[2:5, 3:8] = True
    mask = BinaryMask(width=10, height=10, bits=bits)
    assert mask.tight_box() == BoxPrompt(0.3, 0.2, 0.8, 0.5)


def test_tight_box_on_empty_mask() -> None:
    mask = BinaryMask(width=4, height=4, bits=np.zeros((4, 4), dtype=bool))
    with pytest.raises(EmptyMask):
        mask.tight_box()


def test_rasterize_square_polygon_left_half() -> None:
    # covers columns 0..4 of a 10x10 image
    mask = rasterize_polygon([(0, 0), (5, 0), (5, 10), (0, 10)], (10, 10))
    assert mask.count_set() == 50
    assert mask.tight_box() == BoxPrompt(0.0, 0.0, 0.5, 1.0)


def test_prompt_set_requires_a_prompt_and_keeps_order() -> None:
    with pytest.raises(Exception):
        VisualPromptSet(())
    ps = VisualPromptSet((PointPrompt(0.1, 0.2), BoxPrompt(0.1, 0.1, 0.9, 0.9)))
    assert len(ps) == 2
    assert ps[0].kind == "point"


def test_prompt_json_round_trip() -> None:
    prompts = [
        PointPrompt(0.25, 0.75),
        BoxPrompt(0.1, 0.2, 0.3, 0.4),
        FreeFormPrompt(((0.1, 0.1), (0.5, 0.2), (0.3, 0.6))),
    ]
    for p in prompts:
        assert prompt_from_json(p.to_json()) == p
