"""Tests for silhouette rendering, edge detection, and descriptors.

Oracle values: the r=0.5 sphere covers an analytic disc of radius 64 px
on the 256-px raster over [-1,1]^2, so its area is pi*64^2 = 12868 px
and its circumference 2*pi*64 = 402 px; step edges sit at an exact
column; descriptor robustness thresholds come from the module contract.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivedesk.errors import InsufficientSet, InvalidParams, IoError, UndefinedSimilarity
from drivedesk.geometry import ScalarField3
from drivedesk.imaging import (
    FEATURE_DIM,
    FeatureVec,
    GrayImage,
    canny,
    cosine_similarity,
    diversity_score,
    feature_descriptor,
    make_sketch,
    parse_pgm,
    pgm_bytes,
    read_pgm,
    render_silhouette,
    write_pgm,
)
from drivedesk.shapegen import build_record, sample_params


def sphere_field(radius: float, center=(0.0, 0.0, 0.0)) -> ScalarField3:
    c = np.asarray(center, dtype=np.float64)
    return ScalarField3(
        lambda p: np.linalg.norm(p - c, axis=1) - radius,
        lipschitz_bound=1.0,
        name=f"sphere-{radius}",
    )


def edge_pixels(img: GrayImage) -> np.ndarray:
    return img.pixels == 255


class TestGrayImage:
    def test_shape_and_size(self):
        img = GrayImage(np.zeros((4, 7), dtype=np.uint8))
        assert img.height == 4 and img.width == 7
        assert img.pixels.dtype == np.uint8

    def test_rejects_1d(self):
        with pytest.raises(InvalidParams):
            GrayImage(np.zeros(16, dtype=np.uint8))

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidParams):
            GrayImage(np.full((4, 4), 300))

    def test_coerces_valid_ints(self):
        img = GrayImage(np.full((4, 4), 128))
        assert img.pixels.dtype == np.uint8


class TestRenderSilhouette:
    def test_all_positive_field_is_blank(self):
        empty = ScalarField3(
            lambda p: np.full(len(p), 0.5), lipschitz_bound=1.0, name="empty"
        )
        img = render_silhouette(empty, "side", 64)
        assert (img.pixels == 255).all()

    def test_disc_area_within_3_percent(self):
        img = render_silhouette(sphere_field(0.5), "side", 256)
        foreground = int((img.pixels == 0).sum())
        target = np.pi * 64.0**2  # 12868
        assert abs(foreground - target) / target < 0.03

    def test_translation_along_view_axis_is_invisible(self):
        base = render_silhouette(sphere_field(0.3), "side", 96)
        moved = render_silhouette(sphere_field(0.3, center=(0, 0.4, 0)), "side", 96)
        assert (base.pixels == moved.pixels).all()

    def test_row_zero_is_top(self):
        # A sphere centered above the origin must ink the upper rows of a
        # side view only.
        img = render_silhouette(sphere_field(0.25, center=(0, 0, 0.5)), "side", 96)
        ink_rows = np.nonzero((img.pixels == 0).any(axis=1))[0]
        assert ink_rows.size > 0
        assert ink_rows.max() < 48

    def test_views_see_different_axes(self):
        # A sphere offset along +x shifts right in side/top views but stays
        # centered in the front view.
        f = sphere_field(0.2, center=(0.5, 0, 0))
        side = render_silhouette(f, "side", 96).pixels
        front = render_silhouette(f, "front", 96).pixels
        top = render_silhouette(f, "top", 96).pixels
        assert (np.nonzero((side == 0).any(axis=0))[0] > 48).all()
        assert (np.nonzero((top == 0).any(axis=0))[0] > 48).all()
        front_cols = np.nonzero((front == 0).any(axis=0))[0]
        assert abs(front_cols.mean() - 47.5) < 1.0

    def test_deterministic(self):
        a = render_silhouette(sphere_field(0.4), "top", 64)
        b = render_silhouette(sphere_field(0.4), "top", 64)
        assert (a.pixels == b.pixels).all()

    def test_rejects_bad_view(self):
        with pytest.raises(InvalidParams):
            render_silhouette(sphere_field(0.4), "rear", 64)

    def test_rejects_tiny_resolution(self):
        with pytest.raises(InvalidParams):
            render_silhouette(sphere_field(0.4), "side", 16)


class TestCanny:
    def test_constant_image_has_no_edges(self):
        img = GrayImage(np.full((64, 64), 77, dtype=np.uint8))
        assert (canny(img, 1.4, 40, 90).pixels == 0).all()

    def test_vertical_step_gives_one_line(self):
        step = np.full((64, 64), 255, dtype=np.uint8)
        step[:, 32:] = 0
        edges = edge_pixels(canny(GrayImage(step), 1.4, 40, 90))
        cols = np.unique(np.nonzero(edges)[1])
        assert set(cols.tolist()) <= {31, 32}
        rows_with_edge = edges.any(axis=1).sum()
        assert rows_with_edge >= 60

    def test_horizontal_step_gives_one_line(self):
        step = np.full((64, 64), 255, dtype=np.uint8)
        step[32:, :] = 0
        edges = edge_pixels(canny(GrayImage(step), 1.4, 40, 90))
        rows = np.unique(np.nonzero(edges)[0])
        assert set(rows.tolist()) <= {31, 32}

    @pytest.mark.parametrize("radius,view", [(0.5, "side"), (0.3, "front")])
    def test_circle_edge_count_near_circumference(self, radius, view):
        img = render_silhouette(sphere_field(radius), view, 256)
        count = int(edge_pixels(canny(img, 1.4, 40, 90)).sum())
        target = 2.0 * np.pi * (radius * 128.0)
        assert abs(count - target) / target < 0.15

    def test_output_is_binary(self):
        img = render_silhouette(sphere_field(0.5), "side", 128)
        vals = np.unique(canny(img, 1.4, 40, 90).pixels)
        assert set(vals.tolist()) <= {0, 255}

    def test_every_edge_pixel_traces_to_strong_seed(self):
        # White-box audit of the hysteresis invariant: recompute the
        # suppressed gradient magnitude and BFS the edge set from its
        # strong pixels through 8-connectivity.
        from drivedesk.imaging import _convolve1d, _gaussian_kernel, _nonmax_suppress, _sobel

        img = render_silhouette(sphere_field(0.5), "side", 256)
        sigma, lo, hi = 1.4, 40.0, 90.0
        f = img.pixels.astype(np.float64)
        k = _gaussian_kernel(sigma)
        f = _convolve1d(_convolve1d(f, k, axis=0), k, axis=1)
        gx, gy = _sobel(f)
        mag = np.hypot(gx, gy)
        mag *= 255.0 / mag.max()
        nms = _nonmax_suppress(mag, gx, gy)

        edges = edge_pixels(canny(img, sigma, lo, hi))
        assert (nms[edges] >= lo).all()

        from collections import deque

        seen = np.zeros_like(edges)
        queue = deque()
        for r, c in zip(*np.nonzero((nms >= hi) & edges)):
            seen[r, c] = True
            queue.append((r, c))
        h, w = edges.shape
        while queue:
            r, c = queue.popleft()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and edges[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
        assert (seen == edges).all()

    def test_rejects_bad_thresholds(self):
        img = GrayImage(np.zeros((48, 48), dtype=np.uint8))
        with pytest.raises(InvalidParams):
            canny(img, 1.4, 90, 40)
        with pytest.raises(InvalidParams):
            canny(img, 1.4, 0, 90)


@pytest.fixture(scope="module")
def category_records():
    by_cat = {p.category: p for p in sample_params(1, seed=0)}
    return {
        "E": build_record(by_cat["E"], resolution=32),
        "FS": build_record(by_cat["FS"], resolution=32),
    }


class TestMakeSketch:
    def test_deterministic(self, category_records):
        a = make_sketch(category_records["E"], "side")
        b = make_sketch(category_records["E"], "side")
        assert (a.pixels == b.pixels).all()

    def test_estate_and_fastback_sketches_differ(self, category_records):
        a = make_sketch(category_records["E"], "side")
        b = make_sketch(category_records["FS"], "side")
        assert (a.pixels != b.pixels).mean() >= 0.01

    def test_empty_field_gives_blank_sketch(self, category_records):
        import dataclasses

        empty_field = ScalarField3(
            lambda p: np.full(len(p), 1.0), lipschitz_bound=1.0, name="void"
        )
        record = dataclasses.replace(category_records["E"], field=empty_field)
        sketch = make_sketch(record, "side")
        assert (sketch.pixels == 0).all()


class TestFeatureDescriptor:
    def test_blank_image_gives_zero_vector(self):
        img = GrayImage(np.full((96, 96), 200, dtype=np.uint8))
        vec = feature_descriptor(img)
        assert vec.values.shape == (FEATURE_DIM,)
        assert (vec.values == 0).all()

    def test_dimension_and_range(self):
        img = render_silhouette(sphere_field(0.5), "side", 128)
        vec = feature_descriptor(img)
        assert vec.values.shape == (288,)
        assert (vec.values >= 0).all()
        assert np.isfinite(vec.values).all()

    def test_brightness_offset_invariance(self):
        rng = np.random.default_rng(5)
        base = rng.integers(40, 160, size=(96, 96))
        a = feature_descriptor(GrayImage(base.astype(np.uint8)))
        b = feature_descriptor(GrayImage((base + 60).astype(np.uint8)))
        np.testing.assert_allclose(a.values, b.values, atol=1e-7)

    def test_one_pixel_translation_cosine(self):
        img = render_silhouette(sphere_field(0.5), "side", 256)
        shifted = np.roll(img.pixels, 1, axis=1)
        a = feature_descriptor(img)
        b = feature_descriptor(GrayImage(shifted))
        assert cosine_similarity(a, b) > 0.9

    def test_deterministic(self):
        img = render_silhouette(sphere_field(0.4), "top", 96)
        a = feature_descriptor(img)
        b = feature_descriptor(img)
        assert (a.values == b.values).all()

    def test_rejects_small_image(self):
        with pytest.raises(InvalidParams):
            feature_descriptor(GrayImage(np.zeros((32, 96), dtype=np.uint8)))

    def test_feature_vec_validation(self):
        with pytest.raises(InvalidParams):
            FeatureVec(np.zeros(64))
        bad = np.zeros(FEATURE_DIM)
        bad[3] = -1.0
        with pytest.raises(InvalidParams):
            FeatureVec(bad)


def _vec(values) -> FeatureVec:
    out = np.zeros(FEATURE_DIM)
    out[: len(values)] = values
    return FeatureVec(out)


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        q = _vec([1.0, 2.0, 3.0])
        assert abs(cosine_similarity(q, q) - 1.0) <= 1e-12

    def test_orthogonal_is_zero(self):
        a = _vec([1.0, 0.0])
        b = _vec([0.0, 2.0])
        assert cosine_similarity(a, b) == 0.0

    def test_scale_invariance(self):
        q = _vec([0.3, 1.1, 0.0, 2.0])
        d = _vec([1.0, 0.2, 0.5, 0.7])
        q2 = FeatureVec(2.0 * q.values)
        assert abs(cosine_similarity(q2, d) - cosine_similarity(q, d)) <= 1e-12

    def test_zero_vector_rejected(self):
        z = FeatureVec(np.zeros(FEATURE_DIM))
        q = _vec([1.0])
        with pytest.raises(UndefinedSimilarity):
            cosine_similarity(z, q)
        with pytest.raises(UndefinedSimilarity):
            cosine_similarity(q, z)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a = FeatureVec(rng.random(FEATURE_DIM))
        b = FeatureVec(rng.random(FEATURE_DIM))
        s_ab = cosine_similarity(a, b)
        s_ba = cosine_similarity(b, a)
        assert s_ab == s_ba
        assert abs(s_ab) <= 1.0 + 1e-12


class TestDiversityScore:
    def test_identical_vectors_score_zero(self):
        v = _vec([1.0, 2.0])
        assert diversity_score([v, v, v]) == 0.0

    def test_two_vectors_score_their_distance(self):
        a = _vec([0.0])
        b = _vec([3.0, 4.0])  # distance 5 from the zero vector
        assert abs(diversity_score([FeatureVec(np.zeros(FEATURE_DIM)), b]) - 5.0) <= 1e-12

    def test_requires_two_vectors(self):
        with pytest.raises(InsufficientSet):
            diversity_score([_vec([1.0])])
        with pytest.raises(InsufficientSet):
            diversity_score([])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        feats = [FeatureVec(rng.random(FEATURE_DIM)) for _ in range(14)]
        total, count = 0.0, 0
        for i in range(len(feats)):
            for j in range(i + 1, len(feats)):
                total += float(np.linalg.norm(feats[i].values - feats[j].values))
                count += 1
        assert abs(diversity_score(feats) - total / count) <= 1e-12

    def test_duplicate_never_exceeds_max_pairwise(self):
        rng = np.random.default_rng(7)
        feats = [FeatureVec(rng.random(FEATURE_DIM)) for _ in range(8)]
        max_pair = max(
            float(np.linalg.norm(a.values - b.values))
            for i, a in enumerate(feats)
            for b in feats[i + 1 :]
        )
        with_dup = feats + [FeatureVec(feats[0].values.copy())]
        assert diversity_score(with_dup) <= max_pair


class TestPgmIO:
    def test_round_trip_is_byte_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        img = GrayImage(rng.integers(0, 256, size=(37, 53)).astype(np.uint8))
        path = tmp_path / "img.pgm"
        write_pgm(img, path)
        back = read_pgm(path)
        assert back.width == 53 and back.height == 37
        assert (back.pixels == img.pixels).all()
        assert path.read_bytes() == pgm_bytes(img)

    def test_parses_comments_and_whitespace(self):
        payload = bytes(range(6))
        blob = b"P5 # comment\n# another\n 3\t2 #w h\n255\n" + payload
        img = parse_pgm(blob)
        assert img.width == 3 and img.height == 2
        assert img.pixels.tobytes() == payload

    def test_rejects_bad_magic(self):
        with pytest.raises(IoError):
            parse_pgm(b"P2\n2 2\n255\n" + bytes(4))

    def test_rejects_wrong_maxval(self):
        with pytest.raises(IoError):
            parse_pgm(b"P5\n2 2\n65535\n" + bytes(8))

    def test_rejects_truncated_payload(self):
        with pytest.raises(IoError):
            parse_pgm(b"P5\n4 4\n255\n" + bytes(10))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            read_pgm(tmp_path / "absent.pgm")
