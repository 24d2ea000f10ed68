import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.lib.stride_tricks import sliding_window_view

from regionface.similarity import (ErrorVector, LbpConfig, load_pca, lbp_codes, lbp_descriptor, pca_fit,
                                   pca_score, region_errors, region_model, save_pca, select_weights, ssim,
                                   uniform_lookup)


def ssim_direct(a, b, k1=0.01, k2=0.03, size=11, sigma=1.5):
    """Windowed SSIM straight from the definition, one weighted sum per window."""
    r = np.arange(size) - size // 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    w /= w.sum()
    A, B = sliding_window_view(a, (size, size)), sliding_window_view(b, (size, size))
    mu_a = np.einsum("ijkl,kl->ij", A, w)
    mu_b = np.einsum("ijkl,kl->ij", B, w)
    da, db = A - mu_a[..., None, None], B - mu_b[..., None, None]
    va = np.einsum("ijkl,kl->ij", da * da, w)
    vb = np.einsum("ijkl,kl->ij", db * db, w)
    cov = np.einsum("ijkl,kl->ij", da * db, w)
    c1, c2 = k1 ** 2, k2 ** 2
    s = (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
    return s.mean()


def lbp_brute(img):
    """P=8, R=1 codes with explicit loops and bilinear neighbor sampling."""
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), dtype=int)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            code = 0
            for p in range(8):
                sy = y - np.sin(2 * np.pi * p / 8)
                sx = x + np.cos(2 * np.pi * p / 8)
                sy, sx = round(sy, 12), round(sx, 12)
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                fy, fx = sy - y0, sx - x0
                v = 0.0
                for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
                    for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                        if wy * wx:
                            v += wy * wx * img[yy, xx]
                if v >= img[y, x] - 1e-9:
                    code += 1 << p
            out[y - 1, x - 1] = code
    return out


class TestPca:
    def test_two_points(self, rng):
        a, b = rng.random((6, 5)), rng.random((6, 5))
        m = pca_fit([a, b])
        d = np.linalg.norm(a - b)
        assert m.retained == 1
        np.testing.assert_allclose(np.sort(m.training_scores[:, 0]), [-d / 2, d / 2], atol=1e-12)

    def test_identical_copies(self, rng):
        a = rng.random((4, 4))
        m = pca_fit([a, a, a])
        assert m.retained == 0 and m.training_scores.shape == (3, 0)
        with pytest.warns(UserWarning, match="clamping"):
            m = pca_fit([a, a, a], retained=2)
        np.testing.assert_array_equal(m.training_scores, 0.0)

    def test_full_rank_reconstruction(self, rng):
        X = rng.random((10, 8, 8))
        m = pca_fit(X, retained=9)
        recon = m.mean + m.training_scores @ m.components
        np.testing.assert_allclose(recon, X.reshape(10, -1), atol=1e-6)

    def test_orthonormal(self, rng):
        m = pca_fit(rng.random((20, 12, 12)), retained=15)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(15), atol=1e-8)
        assert np.all(np.diff(m.explained_variance) <= 0)

    def test_scores(self, rng):
        X = rng.random((8, 6, 6))
        m = pca_fit(X, retained=5)
        np.testing.assert_allclose(pca_score(m, m.mean.reshape(6, 6)), 0.0, atol=1e-12)
        for k in range(8):
            np.testing.assert_allclose(pca_score(m, X[k]), m.training_scores[k], atol=1e-12)
        probe = (m.mean + 2 * m.components[0]).reshape(6, 6)
        np.testing.assert_allclose(pca_score(m, probe), [2, 0, 0, 0, 0], atol=1e-12)

    def test_variance_rule(self, rng):
        base = rng.random((3, 64))
        X = rng.random((30, 3)) @ base * [[10.0], ] + 1e-4 * rng.random((30, 64))
        m = pca_fit(X, variance=0.95, cap=50)
        assert 1 <= m.retained <= 3
        assert pca_fit(X, variance=1.0, cap=2).retained == 2

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            pca_fit([rng.random((3, 3)), rng.random((3, 4))])
        m = pca_fit(rng.random((4, 3, 3)))
        with pytest.raises(ValueError):
            pca_score(m, rng.random((4, 4)))

    def test_save_load(self, tmp_path, rng):
        m = pca_fit(rng.random((7, 5, 4)), retained=4)
        save_pca(m, tmp_path / "f.pca")
        back = load_pca(tmp_path / "f.pca")
        assert back.shape == (5, 4) and back.retained == 4
        for name in ("mean", "components", "training_scores", "explained_variance"):
            np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
        raw = bytearray((tmp_path / "f.pca").read_bytes())
        raw[-3] ^= 0xFF
        (tmp_path / "g.pca").write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            load_pca(tmp_path / "g.pca")


class TestSsim:
    def test_matches_direct_formula(self, rng):
        for _ in range(10):
            a, b = rng.random((40, 33)), rng.random((40, 33))
            assert abs(ssim(a, b) - ssim_direct(a, b)) < 1e-9

    def test_identity(self, rng):
        x = rng.random((32, 32))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constants_symmetric(self):
        a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.8)
        assert ssim(a, b) < 1 and ssim(a, b) == ssim(b, a)
        assert ssim(a, b) == pytest.approx((2 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((20, 20)), np.zeros((20, 21)))
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))


class TestLbp:
    def test_uniform_table(self):
        table = uniform_lookup(8)
        assert table.max() == 58 and LbpConfig().n_bins == 59
        assert len(np.unique(table)) == 59

    def test_constant_image(self):
        d = lbp_descriptor(np.full((48, 48), 0.3)).reshape(64, 59)
        bin_all_ones = uniform_lookup(8)[255]
        np.testing.assert_array_equal(d[:, bin_all_ones], 1.0)
        assert d.sum() == 64

    def test_brightness_shift(self, rng):
        for _ in range(20):
            x = np.round(rng.random((48, 64)) * 0.9 * 255) / 255
            np.testing.assert_array_equal(lbp_descriptor(x), lbp_descriptor(x + 0.1))

    def test_checkerboard_brute_force(self):
        tile = np.kron([[0, 1], [1, 0]], np.ones((2, 2)))
        np.testing.assert_array_equal(lbp_codes(tile), lbp_brute(tile))
        # interior 2x2 pixels of the 4x4 instance: each sits at a tile corner
        d = lbp_descriptor(tile, LbpConfig(grid=(1, 1)))
        expect = np.bincount(uniform_lookup(8)[lbp_brute(tile).ravel()], minlength=59) / 4
        np.testing.assert_array_equal(d, expect)

    def test_random_against_brute_force(self, rng):
        x = rng.random((9, 11))
        np.testing.assert_array_equal(lbp_codes(x), lbp_brute(x))

    def test_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            lbp_descriptor(np.zeros((20, 20)))


class TestRegionErrors:
    def test_self_distance(self, rng):
        db = rng.random((5, 48, 64))
        for method in ("pca", "ssim", "lbp"):
            model = region_model(method, db)
            e = region_errors(method, db, db[3], model)
            assert e.errors[3] == pytest.approx(0.0, abs=1e-9) and np.argmin(e.errors) == 3

    def test_pca_hand_oracle(self):
        db = np.array([[[0, 0], [0, 0]], [[2, 0], [0, 0]], [[0, 2], [0, 0]]], dtype=float)
        probe = np.array([[1, 0], [5, 3]], dtype=float)
        model = region_model("pca", db, retained=2)
        # probe projects to (1, 0) in the plane the models span
        np.testing.assert_allclose(region_errors("pca", db, probe, model).errors, [1, 1, np.sqrt(5)], atol=1e-12)

    def test_ssim_hand_oracle(self):
        db = np.stack([np.full((16, 16), v) for v in (0.5, 0.2, 0.8)])
        e = region_errors("ssim", db, np.full((16, 16), 0.5))
        q = np.array([0.5, 0.2, 0.8])
        np.testing.assert_allclose(e.errors, 1 - (q + 1e-4) / (0.25 + q ** 2 + 1e-4), atol=1e-12)

    def test_permutation_equivariant(self, rng):
        db = rng.random((6, 16, 16))
        perm = rng.permutation(6)
        x = rng.random((16, 16))
        a = region_errors("pca", db, x).errors
        b = region_errors("pca", db[perm], x).errors
        np.testing.assert_allclose(b, a[perm], atol=1e-10)

    def test_mismatches(self, rng):
        db = rng.random((3, 16, 16))
        with pytest.raises(ValueError):
            region_errors("pca", db, rng.random((16, 15)))
        with pytest.raises(ValueError):
            region_errors("ssim", db, db[0], pca_fit(db))
        with pytest.raises(ValueError):
            region_errors("sift", db, db[0])


class TestSelectWeights:
    def test_worked_example(self):
        w = select_weights(ErrorVector([2, 4, 8, 50], "pca"), 3)
        assert w.support == (0, 1, 2)
        np.testing.assert_allclose(w.weights, [4 / 7, 2 / 7, 1 / 7, 0], atol=1e-12)

    def test_top_one(self):
        w = select_weights(np.array([3.0, 1.0, 2.0]), 1)
        np.testing.assert_array_equal(w.weights, [0, 1, 0])

    def test_equal_errors(self):
        for c in (1e-3, 1.0, 7.5):
            w = select_weights(np.array([c, c, c, 100.0]), 3)
            np.testing.assert_allclose(w.weights, [1 / 3, 1 / 3, 1 / 3, 0], atol=1e-15)

    def test_ties_by_model_id(self):
        w = select_weights(np.array([5.0, 1.0, 3.0, 3.0, 3.0]), 3)
        assert w.support == (1, 2, 3)

    def test_zero_error_collapses(self):
        w = select_weights(np.array([0.5, 0.0, 0.2, 0.0]), 3)
        assert w.support == (1,)
        np.testing.assert_array_equal(w.weights, [0, 1, 0, 0])

    def test_infinite(self):
        with pytest.raises(ValueError):
            select_weights(np.array([np.inf, np.inf]))
        w = select_weights(np.array([np.inf, 2.0, np.inf]), 3)
        assert w.support == (1,) and w.weights[1] == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            select_weights(np.array([1.0, 2.0]), 2)
        with pytest.raises(ValueError):
            ErrorVector([1.0, -1.0], "pca")

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=30), st.sampled_from([1, 3]),
           st.sampled_from([1e-6, 1.0, 1e6, 3.0, 0.1]))
    def test_properties(self, errors, top_n, c):
        e = np.array(errors)
        w = select_weights(e, top_n)
        assert abs(w.weights.sum() - 1) <= 1e-12
        assert len(w.support) <= top_n and np.all(w.weights >= 0)
        outside = np.setdiff1d(np.arange(len(e)), w.support)
        assert np.all(w.weights[outside] == 0) and np.all(w.weights[list(w.support)] > 0)
        # a selected model never has a larger error than an unselected one
        if len(outside):
            assert e[list(w.support)].max() <= e[outside].min()
        ws = select_weights(c * e, top_n)
        assert ws.support == w.support
        np.testing.assert_array_equal(ws.weights, w.weights)
