import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial import Delaunay

from regionface.mesh import LandmarkSet
from regionface.synth import grid_topology, template_landmark_map, uv_landmarks_for
from regionface.texture import (AVERAGE, BLEND, FRAME_C, FRAME_R, DegenerateTriangleError, PartialTexture,
                                TextureAtlas, UvLandmarks, compose_texture, face_skin_mask, feather_alpha,
                                lower_median, median_skin_color, pick_frames, shift_average_texture,
                                skin_reference_mask, uv_to_pixels, warp_to_uv)


def template_uv():
    _, uv, theta, phi = grid_topology()
    return uv_landmarks_for(uv, template_landmark_map(theta, phi))


def frame_at_uv(uv, yaw=0.0, fid="f"):
    """Landmarks sitting exactly on their UV positions (image y down, so v is flipped)."""
    return LandmarkSet(np.column_stack([uv.points[:, 0], 1 - uv.points[:, 1]]), (yaw, 0, 0), fid)


def smooth_image(size, rng):
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    a = rng.uniform(0.5, 3, (3, 2))
    return np.stack([0.5 + 0.4 * np.sin(a[c, 0] * 2 * xx + a[c, 1] * 3 * yy + c) for c in range(3)], axis=2)


def symmetric_landmarks(size=100.0):
    """68 points mirror-symmetric about x = size/2; eyes mirror each other, the inner mouth is symmetric."""
    cx = size / 2
    pts = np.zeros((68, 2))
    jaw = np.radians(np.linspace(200.3, 339.7, 17))
    pts[:17] = np.column_stack([cx + 0.4 * size * np.cos(jaw), 0.5 * size - 0.4 * size * np.sin(jaw)])
    brow = np.radians(np.linspace(157.1, 22.9, 10))
    pts[17:27] = np.column_stack([cx + 0.37 * size * np.cos(brow), 0.5 * size - 0.37 * size * np.sin(brow)])
    pts[27:36] = [cx, 0.5 * size]
    hexa = np.radians(np.arange(6) * 60 + 30)
    left_eye = np.column_stack([0.33 * size + 0.06 * size * np.cos(hexa), 0.4 * size + 0.03 * size * np.sin(hexa)])
    pts[36:42] = left_eye
    pts[42:48] = np.column_stack([size - left_eye[:, 0], left_eye[:, 1]])
    octa = np.radians(np.arange(8) * 45 + 22.5)
    pts[48:60] = [cx, 0.7 * size]
    pts[60:68] = np.column_stack([cx + 0.08 * size * np.cos(octa), 0.7 * size + 0.02 * size * np.sin(octa)])
    return pts / size


class TestPickFrames:
    def lms(self, yaws):
        return [LandmarkSet(np.full((68, 2), 0.5), (y, 0, 0), f"y{y}") for y in yaws]

    def test_exact_three(self):
        assert pick_frames(self.lms([-30, 0, 30])) == ("y-30", "y0", "y30")

    def test_argmin_rule(self):
        assert pick_frames(self.lms([-31, -2, 1, 29])) == ("y-31", "y1", "y29")

    def test_center_only(self):
        assert pick_frames(self.lms([0])) == (None, "y0", None)
        assert pick_frames(self.lms([5, 45])) == (None, "y5", None)

    def test_no_frontal(self):
        with pytest.raises(ValueError, match="near-frontal"):
            pick_frames(self.lms([-30, 30]))


class TestSkinColor:
    def test_lower_median(self):
        np.testing.assert_array_equal(lower_median(np.array([[1.0], [4.0], [2.0], [3.0]])), [2.0])
        np.testing.assert_array_equal(lower_median(np.array([[5.0], [1.0], [3.0]])), [3.0])

    def test_constant_color(self):
        frame = np.ones((100, 100, 3)) * [0.7, 0.5, 0.4]
        np.testing.assert_array_equal(median_skin_color(frame, LandmarkSet(symmetric_landmarks())), [0.7, 0.5, 0.4])

    def test_even_split_lower_median(self):
        a, b = np.array([0.2, 0.3, 0.4]), np.array([0.6, 0.7, 0.9])
        frame = np.empty((100, 100, 3))
        frame[:, :50], frame[:, 50:] = a, b
        lms = LandmarkSet(symmetric_landmarks())
        mask = face_skin_mask((100, 100), lms.points * 100)
        assert mask[:, :50].sum() == mask[:, 50:].sum() > 0
        np.testing.assert_array_equal(median_skin_color(frame, lms), a)

    def test_fully_excluded(self):
        pts = symmetric_landmarks()
        big = np.radians(np.arange(6) * 60)
        pts[36:42] = np.column_stack([0.5 + 0.6 * np.cos(big), 0.5 + 0.6 * np.sin(big)]).clip(0, 1)
        with pytest.raises(ValueError, match="empty"):
            median_skin_color(np.ones((100, 100, 3)) * 0.5, LandmarkSet(pts))


class TestShift:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.uv = template_uv()
        self.avg = TextureAtlas(rng.uniform(0.2, 0.8, (128, 128, 3)))
        self.ref = lower_median(self.avg.pixels[skin_reference_mask(self.uv, 128)])

    def test_own_median_unchanged(self):
        out = shift_average_texture(self.avg, self.ref, self.uv)
        np.testing.assert_array_equal(out.pixels, self.avg.pixels)

    def test_red_shift(self):
        out = shift_average_texture(self.avg, self.ref + [0.1, 0, 0], self.uv)
        free = self.avg.pixels[..., 0] + 0.1 <= 1.0
        np.testing.assert_allclose(out.pixels[..., 0][free], self.avg.pixels[..., 0][free] + 0.1, atol=1e-12)
        np.testing.assert_array_equal(out.pixels[..., 1:], self.avg.pixels[..., 1:])

    def test_clamped(self):
        out = shift_average_texture(self.avg, [0.99, 0.99, 0.99], self.uv)
        assert out.pixels.max() <= 1.0 and (out.pixels == 1.0).any()


class TestWarp:
    def setup_method(self):
        self.uv = template_uv()

    def test_identity(self, rng):
        size = 256
        img = smooth_image(size, rng)
        part = warp_to_uv(img, frame_at_uv(self.uv), self.uv, size)
        assert part.mask.sum() > 0.1 * size * size
        err = np.abs(part.pixels[part.mask] - img[part.mask])
        assert err.max() <= 1 / 255

    def test_translation_composes(self, rng):
        size, shift = 256, (7, -5)  # pixels (x, y)
        img = smooth_image(size + 20, rng)[10:-10, 10:-10]
        moved = np.roll(img, (shift[1], shift[0]), axis=(0, 1))
        lms = frame_at_uv(self.uv)
        moved_lms = LandmarkSet(lms.points + np.array(shift) / size, lms.rotation)
        a = warp_to_uv(img, lms, self.uv, size)
        b = warp_to_uv(moved, moved_lms, self.uv, size)
        both = a.mask & b.mask
        np.testing.assert_allclose(b.pixels[both], a.pixels[both], atol=1e-9)

    def test_degenerate_triangle(self):
        uv_px = uv_to_pixels(np.vstack([self.uv.points, self.uv.anchors]), 256)
        tri = next(t for t in Delaunay(uv_px).simplices if max(t) < 68)
        pts = frame_at_uv(self.uv).points.copy()
        pts[tri[1]] = pts[tri[0]]
        pts[tri[2]] = pts[tri[0]]
        with pytest.raises(DegenerateTriangleError, match="triangle"):
            warp_to_uv(np.zeros((256, 256, 3)), LandmarkSet(pts), self.uv, 256)

    def test_triangle_locality(self):
        size = 256
        uv_px = uv_to_pixels(np.vstack([self.uv.points, self.uv.anchors]), size)
        dt = Delaunay(uv_px)
        t = next(i for i, s in enumerate(dt.simplices) if max(s) < 68)
        # paint one image triangle red; identity correspondence so image triangle == UV triangle
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        inside = dt.find_simplex(np.column_stack([xx.ravel(), yy.ravel()])).reshape(size, size) == t
        img = np.zeros((size, size, 3))
        img[inside] = [1, 0, 0]
        part = warp_to_uv(img, frame_at_uv(self.uv), self.uv, size)
        core = ndimage.binary_erosion(inside, iterations=2)
        far = ~ndimage.binary_dilation(inside, iterations=2)
        red = part.pixels[core & part.mask]
        assert len(red) > 50
        np.testing.assert_allclose(red, np.tile([1.0, 0, 0], (len(red), 1)), atol=1e-9)
        np.testing.assert_allclose(part.pixels[far & part.mask], 0.0, atol=1e-9)


class TestCompose:
    def test_empty_returns_base(self, rng):
        base = TextureAtlas(rng.random((2048, 2048, 3)))
        out = compose_texture([], base)
        assert out.size == 2048
        np.testing.assert_array_equal(out.pixels, base.pixels)

    def test_full_coverage(self, rng):
        base = TextureAtlas(np.zeros((32, 32, 3)))
        part = PartialTexture(rng.random((32, 32, 3)), np.ones((32, 32), bool))
        out = compose_texture([part], base, feather=4)
        np.testing.assert_array_equal(out.pixels, part.pixels)
        assert np.all(out.provenance == FRAME_C)

    def test_hand_feather_16(self):
        base = TextureAtlas(np.full((16, 16, 3), 0.1))
        m_c = np.zeros((16, 16), bool)
        m_c[:, :10] = True
        m_r = np.zeros((16, 16), bool)
        m_r[:, 6:14] = True
        right = PartialTexture(np.full((16, 16, 3), 0.3), m_r, yaw=30.0, tag=FRAME_R)
        center = PartialTexture(np.full((16, 16, 3), 0.8), m_c, yaw=0.0, tag=FRAME_C)
        out = compose_texture([right, center], base, feather=4)
        # union covers columns 0..13; alpha = clip((14 - col) / 4, 0, 1); center wins on 6..9
        cols = np.arange(16)
        alpha = np.clip((14 - cols) / 4, 0, 1)
        merged = np.where(cols < 10, 0.8, np.where(cols < 14, 0.3, 0.0))
        expect = alpha * merged + (1 - alpha) * 0.1
        np.testing.assert_allclose(out.pixels[:, :, 0], np.tile(expect, (16, 1)), atol=1e-12)
        np.testing.assert_array_equal(out.provenance[0], [FRAME_C] * 10 + [FRAME_R] + [BLEND] * 3 + [AVERAGE] * 2)
        # input order does not matter
        again = compose_texture([center, right], base, feather=4)
        np.testing.assert_array_equal(again.pixels, out.pixels)

    def test_feather_alpha_edges(self):
        assert feather_alpha(np.zeros((4, 4), bool)).max() == 0
        assert feather_alpha(np.ones((4, 4), bool)).min() == 1

    def test_mask_size_mismatch(self):
        base = TextureAtlas(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            compose_texture([PartialTexture(np.zeros((4, 4, 3)), np.ones((4, 4), bool))], base)


class TestAtlas:
    def test_png_round_trip(self, tmp_path, rng):
        px = np.round(rng.random((64, 64, 3)) * 255) / 255
        TextureAtlas(px).save(tmp_path / "t.png")
        np.testing.assert_array_equal(TextureAtlas.load(tmp_path / "t.png").pixels, px)

    def test_validation(self):
        with pytest.raises(ValueError):
            TextureAtlas(np.zeros((8, 9, 3)))
        with pytest.raises(ValueError):
            TextureAtlas(np.full((8, 8, 3), 1.5))

    def test_uv_landmarks_round_trip(self, tmp_path):
        uv = template_uv()
        uv.save(tmp_path / "uv.json")
        back = UvLandmarks.load(tmp_path / "uv.json")
        np.testing.assert_array_equal(back.points, uv.points)
        np.testing.assert_array_equal(back.skin_polygon, uv.skin_polygon)
