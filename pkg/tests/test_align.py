"""Alignment: centering, template pooling, similarity solve, warping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from primid.align import (
    DEFAULT_CANVAS,
    LandmarkSet,
    LandmarkTemplate,
    SimilarityParams,
    align_crop,
    center_landmarks,
    compute_landmark_template,
    load_template,
    read_landmark_csv,
    save_template,
    solve_similarity,
    warp_image,
    write_landmark_csv,
)
from primid.errors import (
    DegenerateLandmarks,
    EmptyDataset,
    FormatError,
    SingularSystem,
)


def cross2(u, v):
    return float(u[0] * v[1] - u[1] * v[0])


def lm(points, ref="img"):
    return LandmarkSet(left_eye=tuple(points[0]), right_eye=tuple(points[1]),
                       mouth=tuple(points[2]), image_ref=ref)


def transformed(points, s, theta, mx, my):
    """Apply a known similarity transform to (3, 2) points."""
    a, b = s * math.cos(theta), s * math.sin(theta)
    pts = np.asarray(points, dtype=np.float64)
    return np.stack([a * pts[:, 0] - b * pts[:, 1] + mx,
                     b * pts[:, 0] + a * pts[:, 1] + my], axis=1)


def template_for_targets(targets):
    """Template whose anchored points equal the given (3, 2) pixel targets."""
    targets = np.asarray(targets, dtype=np.float64)
    centroid = targets.mean(axis=0)
    centered = targets - centroid
    t = np.concatenate([centered[:, 0], centered[:, 1]])
    return LandmarkTemplate(t=t, canvas=(4096, 4096), anchor_scale=1.0,
                            anchor_offset=(float(centroid[0]), float(centroid[1])))


def residual_sq(src_pts, dst_pts, params):
    mapped = params.apply(src_pts)
    return float(np.sum((mapped - dst_pts) ** 2))


class TestCenterLandmarks:
    def test_hand_computed_case(self):
        # centroid of (1,1),(3,1),(2,4) is (2,2); frozen from that arithmetic
        vec = center_landmarks(lm([(1, 1), (3, 1), (2, 4)])).l
        np.testing.assert_allclose(vec, [-1, 1, 0, -1, -1, 2], atol=1e-12)

    def test_already_centered_is_identity(self):
        pts = [(-1.0, -1.0), (1.0, -1.0), (0.0, 2.0)]
        vec = center_landmarks(lm(pts)).l
        np.testing.assert_allclose(vec, [-1, 1, 0, -1, -1, 2], atol=1e-12)

    def test_component_sums_are_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pts = rng.uniform(-100, 100, size=(3, 2))
            if abs(cross2(pts[1] - pts[0], pts[2] - pts[0])) < 1.0:
                continue
            vec = center_landmarks(lm(pts)).l
            assert abs(vec[:3].sum()) < 1e-9
            assert abs(vec[3:].sum()) < 1e-9

    @given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1, 200),
           st.floats(-200, -1), st.floats(1, 200))
    @settings(max_examples=60, deadline=None)
    def test_zero_sum_property(self, cx, cy, dx, dy, h):
        # triangle with base dx and height h is never collinear
        pts = [(cx, cy), (cx + dx, cy), (cx + dx / 2, cy + h)]
        vec = center_landmarks(lm(pts)).l
        assert abs(vec[:3].sum()) < 1e-9
        assert abs(vec[3:].sum()) < 1e-9
        assert float(dy) or True

    def test_collinear_rejected(self):
        with pytest.raises(DegenerateLandmarks):
            center_landmarks(lm([(0, 0), (1, 1), (2, 2)]))

    def test_duplicate_rejected(self):
        with pytest.raises(DegenerateLandmarks):
            center_landmarks(lm([(1, 2), (1, 2), (5, 9)]))

    def test_nonfinite_rejected(self):
        with pytest.raises(DegenerateLandmarks):
            center_landmarks(lm([(float("nan"), 0), (1, 0), (0, 1)]))


class TestLandmarkTemplate:
    def test_single_element_hand_computed(self):
        # L = [-1,1,0,-1,-1,2], ||L||^2 = 8 -> t = L / 8
        tpl = compute_landmark_template([lm([(1, 1), (3, 1), (2, 4)])])
        np.testing.assert_allclose(
            tpl.t, [-0.125, 0.125, 0.0, -0.125, -0.125, 0.25], atol=1e-12)

    def test_n_copies_equal_single(self):
        base = lm([(1, 1), (3, 1), (2, 4)])
        one = compute_landmark_template([base])
        five = compute_landmark_template([base] * 5)
        np.testing.assert_allclose(five.t, one.t, atol=1e-12)

    def test_two_sets_brute_force_sum(self):
        a = lm([(1, 1), (3, 1), (2, 4)])
        b = lm([(10, 20), (30, 18), (22, 45)])
        tpl = compute_landmark_template([a, b])
        acc = np.zeros(6)
        for s in (a, b):
            v = center_landmarks(s).l
            acc += v / float(v @ v)
        np.testing.assert_allclose(tpl.t, acc / 2, atol=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        sets = [lm(rng.uniform(0, 100, (3, 2)) + [[0, 0], [50, 0], [25, 60]]) for _ in range(6)]
        fwd = compute_landmark_template(sets)
        rev = compute_landmark_template(sets[::-1])
        np.testing.assert_allclose(fwd.t, rev.t, atol=1e-12)

    def test_zero_sum_preserved(self):
        tpl = compute_landmark_template(
            [lm([(5, 5), (40, 8), (20, 50)]), lm([(0, 0), (30, 2), (16, 33)])])
        assert abs(tpl.t[:3].sum()) < 1e-9
        assert abs(tpl.t[3:].sum()) < 1e-9

    def test_anchor_interocular_distance(self):
        tpl = compute_landmark_template([lm([(1, 1), (3, 1), (2, 4)])])
        pts = tpl.anchored_points()
        assert math.hypot(*(pts[1] - pts[0])) == pytest.approx(40.0, abs=1e-9)
        assert tpl.canvas == DEFAULT_CANVAS

    def test_plain_norm_flag(self):
        base = lm([(1, 1), (3, 1), (2, 4)])
        tpl = compute_landmark_template([base], squared_norm=False)
        # ||L|| = sqrt(8); frozen from that arithmetic
        np.testing.assert_allclose(tpl.t, np.array([-1, 1, 0, -1, -1, 2]) / math.sqrt(8),
                                   atol=1e-12)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            compute_landmark_template([])


class TestSolveSimilarity:
    src = [(10.0, 10.0), (50.0, 12.0), (30.0, 45.0)]

    def test_identity_when_targets_equal_source(self):
        tpl = template_for_targets(self.src)
        p = solve_similarity(lm(self.src), tpl)
        assert p.a == pytest.approx(1.0, abs=1e-9)
        assert p.b == pytest.approx(0.0, abs=1e-9)
        assert p.m_x == pytest.approx(0.0, abs=1e-9)
        assert p.m_y == pytest.approx(0.0, abs=1e-9)

    def test_pure_translation(self):
        tpl = template_for_targets(np.asarray(self.src) + [5.0, -3.0])
        p = solve_similarity(lm(self.src), tpl)
        assert p.a == pytest.approx(1.0, abs=1e-9)
        assert p.b == pytest.approx(0.0, abs=1e-9)
        assert p.m_x == pytest.approx(5.0, abs=1e-9)
        assert p.m_y == pytest.approx(-3.0, abs=1e-9)

    def test_rotation_90_scale_2(self):
        targets = transformed(self.src, s=2.0, theta=math.pi / 2, mx=0.0, my=0.0)
        p = solve_similarity(lm(self.src), template_for_targets(targets))
        assert p.s == pytest.approx(2.0, rel=1e-6)
        assert p.theta == pytest.approx(math.pi / 2, rel=1e-6)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            src = rng.uniform(0, 200, (3, 2))
            if abs(cross2(src[1] - src[0], src[2] - src[0])) < 50:
                continue
            targets = rng.uniform(0, 200, (3, 2))
            p = solve_similarity(lm(src), template_for_targets(targets))
            a_mat = np.zeros((6, 4))
            b_vec = np.zeros(6)
            for j in range(3):
                x, y = src[j]
                a_mat[2 * j] = [x, -y, 1, 0]
                a_mat[2 * j + 1] = [y, x, 0, 1]
                b_vec[2 * j], b_vec[2 * j + 1] = targets[j]
            r = a_mat @ np.array([p.a, p.b, p.m_x, p.m_y]) - b_vec
            assert np.max(np.abs(a_mat.T @ r)) < 1e-6

    def test_local_minimum_under_perturbation(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            src = rng.uniform(0, 150, (3, 2))
            if abs(cross2(src[1] - src[0], src[2] - src[0])) < 50:
                continue
            dst = rng.uniform(0, 150, (3, 2))
            p = solve_similarity(lm(src), template_for_targets(dst))
            base = residual_sq(src, dst, p)
            for i in range(4):
                for sign in (-1e-3, 1e-3):
                    vals = [p.a, p.b, p.m_x, p.m_y]
                    vals[i] += sign
                    perturbed = SimilarityParams(*vals)
                    assert base <= residual_sq(src, dst, perturbed) + 1e-12

    def test_synthetic_recovery(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            src = rng.uniform(-80, 80, (3, 2))
            if abs(cross2(src[1] - src[0], src[2] - src[0])) < 100:
                continue
            s = rng.uniform(0.5, 2.0)
            theta = rng.uniform(-math.pi, math.pi)
            mx, my = rng.uniform(-50, 50, 2)
            targets = transformed(src, s, theta, mx, my)
            p = solve_similarity(lm(src), template_for_targets(targets))
            assert p.s == pytest.approx(s, rel=1e-6)
            a, b = s * math.cos(theta), s * math.sin(theta)
            assert p.a == pytest.approx(a, rel=1e-6, abs=1e-9)
            assert p.b == pytest.approx(b, rel=1e-6, abs=1e-9)
            assert p.m_x == pytest.approx(mx, rel=1e-6, abs=1e-6)
            assert p.m_y == pytest.approx(my, rel=1e-6, abs=1e-6)

    def test_collinear_source_rejected(self):
        tpl = template_for_targets(self.src)
        with pytest.raises(DegenerateLandmarks):
            solve_similarity(lm([(0, 0), (1, 1), (2, 2)]), tpl)


class TestWarpImage:
    @staticmethod
    def smooth_image(h, w):
        """Low-frequency test image; bilinear round trips stay within 2/255."""
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        img = (110 + 60 * np.sin(2 * math.pi * xs / 64) * np.cos(2 * math.pi * ys / 64)
               + 0.5 * xs + 0.3 * ys)
        shifted = (110 + 60 * np.sin(2 * math.pi * (xs + 11) / 64)
                   * np.cos(2 * math.pi * ys / 64) + 0.4 * xs)
        rgb = np.stack([img, shifted, img[::-1]], axis=2)
        return np.clip(rgb, 0, 255).astype(np.uint8)

    def test_identity_warp(self):
        img = self.smooth_image(40, 32)
        out = warp_image(img, SimilarityParams(1, 0, 0, 0), canvas=(32, 40))
        np.testing.assert_array_equal(out, img)

    def test_integer_translation(self):
        img = self.smooth_image(40, 48)
        out = warp_image(img, SimilarityParams(1, 0, 10, 0), canvas=(48, 40))
        np.testing.assert_array_equal(out[:, 10:], img[:, :-10])
        assert np.all(out[:, :10] == 0)

    def test_round_trip(self):
        img = self.smooth_image(64, 64)
        theta, s = 0.15, 1.02
        p = SimilarityParams(s * math.cos(theta), s * math.sin(theta), 18.0, 18.0)
        fwd = warp_image(img, p, canvas=(100, 100))
        back = warp_image(fwd, p.inverse(), canvas=(64, 64))
        interior = slice(2, -2)
        diff = np.abs(back[interior, interior].astype(int) - img[interior, interior].astype(int))
        assert diff.max() <= 2

    def test_zero_scale_rejected(self):
        with pytest.raises(SingularSystem):
            warp_image(self.smooth_image(8, 8), SimilarityParams(0, 0, 1, 1))

    def test_align_crop_shape(self):
        img = self.smooth_image(120, 110)
        tpl = compute_landmark_template([lm([(30, 40), (80, 40), (55, 90)])])
        crop, params = align_crop(img, lm([(30, 40), (80, 40), (55, 90)]), tpl)
        assert crop.shape == (112, 96, 3)
        assert params.s > 0

    def test_out_of_bounds_landmarks_rejected(self):
        img = self.smooth_image(50, 50)
        tpl = compute_landmark_template([lm([(10, 10), (40, 10), (25, 40)])])
        with pytest.raises(DegenerateLandmarks):
            align_crop(img, lm([(10, 10), (80, 10), (25, 40)]), tpl)


class TestFileFormats:
    def test_csv_round_trip(self, tmp_path):
        sets = [lm([(1.5, 2.5), (30, 4), (15, 40)], ref="a.png"),
                lm([(9, 9), (50, 10), (30, 44)], ref="b.jpg")]
        path = tmp_path / "landmarks.csv"
        write_landmark_csv(path, sets)
        back = read_landmark_csv(path)
        assert back == sets

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image,x1,y1\nfoo,1,2\n")
        with pytest.raises(FormatError):
            read_landmark_csv(path)

    def test_csv_non_numeric_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image,lx,ly,rx,ry,mx,my\nfoo,1,2,x,4,5,6\n")
        with pytest.raises(DegenerateLandmarks):
            read_landmark_csv(path)

    def test_template_json_round_trip(self, tmp_path):
        tpl = compute_landmark_template([lm([(1, 1), (3, 1), (2, 4)])])
        path = tmp_path / "template.json"
        save_template(tpl, path)
        back = load_template(path)
        np.testing.assert_allclose(back.t, tpl.t)
        assert back.canvas == tpl.canvas
        assert back.anchor_scale == pytest.approx(tpl.anchor_scale)
        assert back.anchor_offset == tpl.anchor_offset

    def test_template_bad_json(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text("{\"t\": [1,2]}")
        with pytest.raises(FormatError):
            load_template(path)
