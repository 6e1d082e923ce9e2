import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvsplat.splat import (
    FusionConfig,
    ViewSplat,
    build_pyramid,
    count_zero_texels,
    fuse,
    fuse_backward,
    hole_fill,
    splat_confidence,
    splat_level,
    upsample_adjoint,
    upsample_bilinear,
    _splat_taps,
)
from uvsplat.raster import GBuffer
from uvsplat.synth import default_camera, random_gbuffer


def gbuffer_with(uvs, normals=None, depth=2.0, width=4, height=4):
    """Tiny G-buffer with the given per-pixel uvs packed row-major."""
    gb = GBuffer.empty(width, height)
    uvs = np.asarray(uvs, dtype=float).reshape(-1, 2)
    for p, uv in enumerate(uvs):
        r, c = divmod(p, width)
        gb.mask[r, c] = True
        gb.face_id[r, c] = 0
        gb.uv[r, c] = uv
        gb.normal[r, c] = normals[p] if normals is not None else (0, 0, 1)
        gb.depth[r, c] = depth
        gb.bary[r, c] = (1, 0, 0)
    return gb


class TestSplatLevel:
    def test_texel_center_gets_full_mass(self):
        res = 8
        gb = gbuffer_with([[(3 + 0.5) / res, (5 + 0.5) / res]])
        feat = np.full((4, 4, 2), 7.0)
        u, d = splat_level(gb, feat, res)
        assert d[5, 3] == pytest.approx(1.0)
        assert d.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(u[5, 3], [7, 7])

    def test_midpoint_splits_quarters(self):
        res = 4
        gb = gbuffer_with([[2.0 / res, 2.0 / res]])  # midpoint of 4 texel centers
        u, d = splat_level(gb, np.ones((4, 4, 1)), res)
        np.testing.assert_allclose(d[1:3, 1:3], 0.25)
        assert d.sum() == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        gb = random_gbuffer(rng, 8, 8, coverage=0.8)
        feat = rng.normal(size=(8, 8, 3))
        res = 16
        u, d = splat_level(gb, feat, res)
        u_ref = np.zeros((res, res, 3))
        d_ref = np.zeros((res, res))
        for r in range(8):
            for c in range(8):
                if not gb.mask[r, c]:
                    continue
                x = gb.uv[r, c, 0] * res - 0.5
                y = gb.uv[r, c, 1] * res - 0.5
                i0, j0 = int(np.floor(x)), int(np.floor(y))
                fx, fy = x - i0, y - j0
                for ti, tj, w in ((i0, j0, (1 - fx) * (1 - fy)), (i0 + 1, j0, fx * (1 - fy)),
                                  (i0, j0 + 1, (1 - fx) * fy), (i0 + 1, j0 + 1, fx * fy)):
                    if 0 <= ti < res and 0 <= tj < res:
                        u_ref[tj, ti] += w * feat[r, c]
                        d_ref[tj, ti] += w
        np.testing.assert_allclose(u, u_ref, atol=1e-12)
        np.testing.assert_allclose(d, d_ref, atol=1e-12)

    def test_rejects_nan_features(self):
        gb = gbuffer_with([[0.5, 0.5]])
        feat = np.ones((4, 4, 1))
        feat[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            splat_level(gb, feat, 4)

    def test_rejects_shape_mismatch(self):
        gb = gbuffer_with([[0.5, 0.5]])
        with pytest.raises(ValueError, match="does not match"):
            splat_level(gb, np.ones((5, 4, 1)), 4)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_partition_of_unity(self, seed):
        rng = np.random.default_rng(seed)
        uv = rng.random((40, 2))
        taps = _splat_taps(uv, int(rng.integers(1, 40)))
        np.testing.assert_allclose(taps.weights.sum(axis=1), 1, atol=1e-12)


class TestSplatConfidence:
    def test_head_on_scores_one(self):
        cam = default_camera(4, 4, distance=2.0)
        gb = gbuffer_with([[0.5, 0.5]])
        # normal pointing straight at the camera
        pts, rows, cols = gb.pixel_rays(cam)
        v = cam.center - pts[0]
        gb.normal[rows[0], cols[0]] = v / np.linalg.norm(v)
        conf = splat_confidence(gb, cam, 4)
        assert conf.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("flip", [0.0, -1.0])
    def test_orthogonal_and_backfacing_score_zero(self, flip):
        cam = default_camera(4, 4, distance=2.0)
        gb = gbuffer_with([[0.5, 0.5]])
        pts, rows, cols = gb.pixel_rays(cam)
        v = cam.center - pts[0]
        v /= np.linalg.norm(v)
        if flip == 0.0:
            ortho = np.cross(v, [0, 1, 0])
            gb.normal[rows[0], cols[0]] = ortho / np.linalg.norm(ortho)
        else:
            gb.normal[rows[0], cols[0]] = -v
        conf = splat_confidence(gb, cam, 4)
        assert conf.sum() == 0.0

    def test_monotone_in_alignment(self):
        cam = default_camera(4, 4, distance=2.0)
        gb = gbuffer_with([[0.5, 0.5]])
        pts, rows, cols = gb.pixel_rays(cam)
        v = cam.center - pts[0]
        v /= np.linalg.norm(v)
        ortho = np.cross(v, [0, 1, 0])
        ortho /= np.linalg.norm(ortho)
        prev = -1.0
        for ang in np.linspace(0, np.pi / 2, 7):
            gb.normal[rows[0], cols[0]] = np.cos(ang) * ortho + np.sin(ang) * v
            total = splat_confidence(gb, cam, 4).sum()
            assert total >= prev - 1e-12
            prev = total


class TestBuildPyramid:
    def test_single_level_equals_splat(self):
        rng = np.random.default_rng(1)
        gb = random_gbuffer(rng, 6, 6)
        feat = rng.normal(size=(6, 6, 2))
        cam = default_camera(6, 6)
        config = FusionConfig(gamma=(1.0,), base_res=8, num_levels=1)
        pyr = build_pyramid(gb, feat, config, cam)
        u, d = splat_level(gb, feat, 8)
        assert pyr.num_levels == 1
        np.testing.assert_array_equal(pyr.levels[0].features, u)
        np.testing.assert_array_equal(pyr.levels[0].density, d)

    def test_total_density_identical_across_levels(self):
        rng = np.random.default_rng(2)
        gb = random_gbuffer(rng, 8, 8, uv_margin=0.2)
        cam = default_camera(8, 8)
        config = FusionConfig(gamma=(1.0,), base_res=16, num_levels=3)
        pyr = build_pyramid(gb, np.ones((8, 8, 1)), config, cam)
        totals = [lv.density.sum() for lv in pyr.levels]
        np.testing.assert_allclose(totals, totals[0], atol=1e-9)

    def test_coarse_has_fewer_holes(self):
        rng = np.random.default_rng(3)
        gb = random_gbuffer(rng, 6, 6, coverage=0.5)
        cam = default_camera(6, 6)
        config = FusionConfig(gamma=(1.0,), base_res=32, num_levels=3)
        pyr = build_pyramid(gb, np.ones((6, 6, 1)), config, cam)
        zero_fine = count_zero_texels(pyr.levels[0].density) / 32**2
        zero_coarse = count_zero_texels(pyr.levels[-1].density) / 8**2
        assert zero_coarse < zero_fine

    def test_truncates_when_too_deep(self):
        rng = np.random.default_rng(4)
        gb = random_gbuffer(rng, 4, 4)
        cam = default_camera(4, 4)
        config = FusionConfig(gamma=(1.0,), base_res=2, num_levels=4)
        pyr = build_pyramid(gb, np.ones((4, 4, 1)), config, cam)
        assert pyr.num_levels == 2  # 2, 1

    def test_invariants(self):
        rng = np.random.default_rng(5)
        gb = random_gbuffer(rng, 8, 8)
        cam = default_camera(8, 8)
        config = FusionConfig(gamma=(1.0,), base_res=8, num_levels=2)
        pyr = build_pyramid(gb, rng.normal(size=(8, 8, 2)), config, cam)
        for lv in pyr.levels:
            assert lv.density.min() >= 0
            assert lv.confidence.min() >= 0
            empty = lv.density == 0
            assert np.all(lv.features[empty] == 0)
            assert np.all(lv.confidence[empty] == 0)


class TestUpsample:
    def test_identity_at_same_res(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 5, 2))
        np.testing.assert_array_equal(upsample_bilinear(a, 5), a)

    def test_constant_preserved(self):
        a = np.full((3, 3), 2.5)
        np.testing.assert_allclose(upsample_bilinear(a, 7), 2.5, atol=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        src = int(rng.integers(1, 9))
        dst = int(rng.integers(1, 33))
        a = rng.normal(size=(src, src, 2))
        g = rng.normal(size=(dst, dst, 2))
        lhs = np.vdot(upsample_bilinear(a, dst), g)
        rhs = np.vdot(a, upsample_adjoint(g, src))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


class TestHoleFill:
    def cfg(self, **kw):
        kw.setdefault("gamma", (1.0,))
        kw.setdefault("base_res", 8)
        kw.setdefault("num_levels", 2)
        return FusionConfig(**kw)

    def test_dense_texel_keeps_fine_value(self):
        rng = np.random.default_rng(6)
        config = self.cfg(density_tau=1.0)
        gb = gbuffer_with([[(3 + 0.5) / 8, (3 + 0.5) / 8]] * 3, width=4, height=4)
        feat = np.full((4, 4, 1), 2.0)
        cam = default_camera(4, 4)
        pyr = build_pyramid(gb, feat, config, cam)
        filled, weight = hole_fill(pyr, config)
        # D = 3 >= tau at (3,3): value is the fine normalized feature
        assert filled[3, 3, 0] == pytest.approx(2.0 * 3 / (3 + config.epsilon))
        assert weight[3, 3] == pytest.approx(3.0)

    def test_uncovered_fine_takes_coarse(self):
        config = self.cfg(base_res=8, num_levels=2)
        # single sample at uv (0.3, 0.3): fine taps near texel 1-2, coarse covers broadly
        gb = gbuffer_with([[0.3, 0.3]])
        feat = np.full((4, 4, 1), 4.0)
        pyr = build_pyramid(gb, feat, config, default_camera(4, 4))
        filled, _ = hole_fill(pyr, config)
        fine_d = pyr.levels[0].density
        hole = fine_d == 0
        # texels with zero fine density near the sample still receive the coarse value
        assert np.abs(filled[:4, :4][hole[:4, :4]]).max() > 0

    def test_constant_feature_fills_constant(self):
        rng = np.random.default_rng(7)
        config = self.cfg(base_res=8, num_levels=3)
        gb = random_gbuffer(rng, 8, 8, coverage=0.5)
        feat = np.full((8, 8, 2), 3.0)
        pyr = build_pyramid(gb, feat, config, default_camera(8, 8))
        filled, weight = hole_fill(pyr, config)
        covered = weight > 1e-6
        assert covered.any()
        np.testing.assert_allclose(filled[covered], 3.0, atol=1e-5)

    def test_all_zero_density_warns_and_zeroes(self):
        config = self.cfg()
        gb = GBuffer.empty(4, 4)
        pyr = build_pyramid(gb, np.ones((4, 4, 1)), config, default_camera(4, 4))
        filled, weight = hole_fill(pyr, config)
        assert not filled.any() and not weight.any()

    def test_no_nan_and_zero_outside_coverage(self):
        rng = np.random.default_rng(8)
        config = self.cfg(base_res=16, num_levels=3)
        gb = random_gbuffer(rng, 5, 5, coverage=0.3)
        pyr = build_pyramid(gb, rng.normal(size=(5, 5, 2)), config, default_camera(5, 5))
        filled, weight = hole_fill(pyr, config)
        assert np.isfinite(filled).all() and np.isfinite(weight).all()
        # the support of the recursion: coverage unioned through the upsample chain
        reach = pyr.levels[-1].density > 0
        for lv in pyr.levels[-2::-1]:
            reach = (upsample_bilinear(reach.astype(float), lv.res) > 0) | (lv.density > 0)
        assert np.all(filled[~reach] == 0)


class TestFuse:
    def make_view(self, rng, config, width=6, height=6, gamma=1.0, constant=None, keep=False):
        gb = random_gbuffer(rng, width, height, coverage=0.8)
        feat = (np.full((height, width, 3), constant) if constant is not None
                else rng.normal(size=(height, width, 3)))
        cam = default_camera(width, height)
        pyr = build_pyramid(gb, feat, config, cam, keep_taps=keep)
        return ViewSplat.from_pyramid(pyr, gamma), feat

    def test_single_nonzero_gamma_dominates(self):
        rng = np.random.default_rng(9)
        config = FusionConfig(gamma=(1.0, 0.0), base_res=8, num_levels=2)
        v1, _ = self.make_view(rng, config, gamma=1.0, constant=2.0)
        v2, _ = self.make_view(rng, config, gamma=0.0, constant=9.0)
        fused, den = fuse([v1, v2], config)
        solo, den_solo = fuse([v1], config)
        np.testing.assert_allclose(fused, solo, atol=1e-12)
        np.testing.assert_allclose(den, den_solo, atol=1e-12)

    def test_two_views_same_constant(self):
        rng = np.random.default_rng(10)
        config = FusionConfig(gamma=(1.0, 0.8), base_res=8, num_levels=2, epsilon=1e-12)
        v1, _ = self.make_view(rng, config, gamma=1.0, constant=0.7)
        v2, _ = self.make_view(rng, config, gamma=0.8, constant=0.7)
        fused, den = fuse([v1, v2], config)
        sel = den > 10 * config.epsilon
        np.testing.assert_allclose(fused[sel], 0.7, atol=1e-6)

    def test_zero_weight_texels_output_zero(self):
        rng = np.random.default_rng(11)
        config = FusionConfig(gamma=(1.0,), base_res=16, num_levels=1)
        v, _ = self.make_view(rng, config, width=3, height=3)
        fused, den = fuse([v], config)
        assert np.all(fused[den <= config.epsilon] == 0)

    def test_rejects_mismatched_pyramids(self):
        rng = np.random.default_rng(12)
        c1 = FusionConfig(gamma=(1.0,), base_res=8, num_levels=2)
        c2 = FusionConfig(gamma=(1.0,), base_res=16, num_levels=2)
        v1, _ = self.make_view(rng, c1)
        v2, _ = self.make_view(rng, c2)
        with pytest.raises(ValueError, match="share"):
            fuse([v1, v2], c1)

    def test_linearity_superposition(self):
        rng = np.random.default_rng(13)
        config = FusionConfig(gamma=(1.0, 0.5), base_res=8, num_levels=2)
        gb = random_gbuffer(rng, 6, 6, coverage=0.8)
        cam = default_camera(6, 6)
        f1 = rng.normal(size=(6, 6, 2))
        f2 = rng.normal(size=(6, 6, 2))

        def run(f):
            pyr = build_pyramid(gb, f, config, cam)
            return fuse([ViewSplat.from_pyramid(pyr, 1.0)], config)[0]

        lhs = run(2.0 * f1 - 3.0 * f2)
        rhs = 2.0 * run(f1) - 3.0 * run(f2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestFuseBackward:
    def record(self, rng, config, nview=2):
        views, feats = [], []
        for k in range(nview):
            gb = random_gbuffer(rng, 6, 6, coverage=0.8)
            cam = default_camera(6, 6)
            f = rng.normal(size=(6, 6, 3))
            pyr = build_pyramid(gb, f, config, cam, keep_taps=True)
            views.append(ViewSplat.from_pyramid(pyr, config.gamma[k]))
            feats.append(f)
        fused, den, rec = fuse(views, config, record=True)
        return fused, rec, feats

    def test_zero_grad_gives_zero(self):
        rng = np.random.default_rng(14)
        config = FusionConfig(gamma=(1.0, 0.6), base_res=8, num_levels=2)
        fused, rec, _ = self.record(rng, config)
        grads = fuse_backward(rec, np.zeros_like(fused))
        for g in grads:
            assert not g.any()

    def test_adjoint_identity_50_trials(self):
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            config = FusionConfig(gamma=(1.0, 0.6), base_res=int(rng.integers(4, 17)),
                                  num_levels=int(rng.integers(1, 3)))
            fused, rec, feats = self.record(rng, config)
            g = rng.normal(size=fused.shape)
            grads = fuse_backward(rec, g)
            lhs = np.vdot(fused, g)
            rhs = sum(np.vdot(f, gr) for f, gr in zip(feats, grads))
            fnorm = np.sqrt(sum(np.vdot(f, f) for f in feats))
            gnorm = np.sqrt(np.vdot(g, g))
            worst = max(worst, abs(lhs - rhs) / max(fnorm * gnorm, 1e-30))
        assert worst <= 1e-10

    def test_rejects_wrong_shape(self):
        rng = np.random.default_rng(15)
        config = FusionConfig(gamma=(1.0, 0.6), base_res=8, num_levels=1)
        _, rec, _ = self.record(rng, config)
        with pytest.raises(ValueError, match="shape"):
            fuse_backward(rec, np.zeros((4, 4, 3)))

    def test_requires_recorded_taps(self):
        rng = np.random.default_rng(16)
        config = FusionConfig(gamma=(1.0,), base_res=8, num_levels=1)
        gb = random_gbuffer(rng, 6, 6)
        pyr = build_pyramid(gb, np.ones((6, 6, 1)), config, default_camera(6, 6))
        with pytest.raises(ValueError, match="keep_taps"):
            fuse([ViewSplat.from_pyramid(pyr, 1.0)], config, record=True)
