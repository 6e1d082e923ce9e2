"""Named verification checks: adjoint identities, finite differences, oracles.

Each check builds its own randomized instances from a seed and returns
CheckResult rows; the gradcheck CLI prints them as a pass/fail table and the
acceptance suite asserts on them. Tolerances are fixed here, not tuned per
run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import synth
from .anchor import UVTriangleIndex
from .deform import LandmarkSet, landmark_loss, laplacian_loss, normal_loss, semantic_pixel_mask
from .geometry import look_at_camera, project, six_view_rig
from .raster import rasterize
from .splat import (
    FusionConfig,
    ViewSplat,
    build_pyramid,
    count_zero_texels,
    fuse,
    fuse_backward,
    hole_fill,
    splat_level,
    _splat_taps,
)


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    op: str = "<="  # value op tol must hold
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.value <= self.tol if self.op == "<=" else self.value >= self.tol

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} value={self.value:.3e}  tol {self.op} {self.tol:.1e}  {self.detail}"


def _random_views(rng, num_views, width, height, config, channels=3, keep_taps=False,
                  uv_margin=0.0, features=None):
    views, feats = [], []
    for k in range(num_views):
        gb = synth.random_gbuffer(rng, width, height, coverage=0.7, uv_margin=uv_margin)
        cam = synth.default_camera(width, height, distance=2.0 + 0.5 * k)
        f = rng.normal(size=(height, width, channels)) if features is None else features[k]
        pyr = build_pyramid(gb, f, config, cam, keep_taps=keep_taps)
        gamma = config.gamma[k % len(config.gamma)]
        views.append((ViewSplat.from_pyramid(pyr, gamma), gb, cam, f))
        feats.append(f)
    return views, feats


def check_adjoint(seed: int = 0, trials: int = 50) -> CheckResult:
    """<forward(f), g> == <f, backward(g)> on random fused-splatting instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(trials):
        base = int(rng.integers(8, 65))
        levels = int(rng.integers(1, 4))
        nview = int(rng.integers(2, 4))
        w = int(rng.integers(6, 25))
        h = int(rng.integers(6, 25))
        config = FusionConfig(gamma=(1.0, 0.8, 0.6), base_res=base, num_levels=levels)
        views, feats = _random_views(rng, nview, w, h, config, keep_taps=True)
        fused, _, rec = fuse([v[0] for v in views], config, record=True)
        g = rng.normal(size=fused.shape)
        grads = fuse_backward(rec, g)
        lhs = float(np.vdot(fused, g))
        rhs = float(sum(np.vdot(f, gr) for f, gr in zip(feats, grads)))
        fnorm = np.sqrt(sum(float(np.vdot(f, f)) for f in feats))
        gnorm = np.sqrt(float(np.vdot(g, g)))
        worst = max(worst, abs(lhs - rhs) / max(fnorm * gnorm, 1e-30))
    elapsed = time.perf_counter() - start
    return CheckResult("adjoint-identity", worst, 1e-10,
                       detail=f"{trials} trials in {elapsed:.1f}s")


def check_adjoint_runtime(seed: int = 0, trials: int = 50) -> CheckResult:
    start = time.perf_counter()
    check_adjoint(seed, trials)
    return CheckResult("adjoint-runtime-seconds", time.perf_counter() - start, 30.0)


def check_fd_fused(seed: int = 0, coords: int = 100) -> CheckResult:
    """Central differences through the full splat->fuse chain (linear in features)."""
    rng = np.random.default_rng(seed)
    config = FusionConfig(gamma=(1.0, 0.7), base_res=16, num_levels=2)
    views, feats = _random_views(rng, 2, 10, 10, config, keep_taps=True)
    shapes = [f.shape for f in feats]
    sizes = [f.size for f in feats]

    def split(flat):
        out, at = [], 0
        for shape, size in zip(shapes, sizes):
            out.append(flat[at:at + size].reshape(shape))
            at += size
        return out

    probe = rng.normal(size=(config.base_res, config.base_res, 3))

    def func(flat):
        fs = split(flat)
        vs = []
        for (view, gb, cam, _), f in zip(views, fs):
            pyr = build_pyramid(gb, f, config, cam)
            vs.append(ViewSplat.from_pyramid(pyr, view.gamma))
        fused, _ = fuse(vs, config)
        return float(np.vdot(fused, probe))

    def grad(_flat):
        _, _, rec = fuse([v[0] for v in views], config, record=True)
        return np.concatenate([g.reshape(-1) for g in fuse_backward(rec, probe)])

    flat0 = np.concatenate([f.reshape(-1) for f in feats])
    picks = rng.choice(flat0.size, size=min(coords, flat0.size), replace=False)
    err = synth.oracle_gradcheck(func, grad, flat0, h=1e-4, coords=picks)
    return CheckResult("fd-fused-features", err, 1e-5, detail=f"{len(picks)} coords")


def _fd_scene(rng):
    spec = synth.SceneSpec(shape="icosphere", subdiv=1, uv_layout="spherical")
    mesh, _ = synth.make_scene(spec)
    cams = six_view_rig(3.0, (0, 0, 0), width=48, height=48)[:2]
    tgt_spec = synth.SceneSpec(shape="ellipsoid", subdiv=1, axes=(1.1, 0.9, 1.0))
    targets, _ = synth.analytic_normal_maps(tgt_spec, cams)
    base = mesh.vertices + 0.01 * rng.normal(size=mesh.vertices.shape)
    gbs = [rasterize(mesh, base, cam) for cam in cams]
    masks = [semantic_pixel_mask(gb, mesh) for gb in gbs]
    return mesh, cams, targets, base, gbs, masks


def check_fd_losses(seed: int = 0, coords: int = 20):
    """FD validation of the three deformation loss gradients."""
    rng = np.random.default_rng(seed)
    mesh, cams, targets, base, gbs, masks = _fd_scene(rng)
    n = mesh.num_vertices
    picks = rng.choice(n * 3, size=coords, replace=False)
    results = []

    err = synth.oracle_gradcheck(
        lambda p: normal_loss(gbs, mesh, p.reshape(n, 3), targets, masks)[0],
        lambda p: normal_loss(gbs, mesh, p.reshape(n, 3), targets, masks)[1],
        base, h=1e-6, coords=picks,
    )
    results.append(CheckResult("fd-normal-loss", err, 1e-4, detail=f"{coords} coords"))

    # targets a couple of pixels off the true projections keep the loss small,
    # so central differences stay well-conditioned against the tiny symmetry term
    vids = rng.integers(0, n, 12)
    cids = rng.integers(0, len(cams), 12)
    targets2d = np.array(
        [project(cams[c], base[v])[0] for v, c in zip(vids, cids)]
    ) + rng.normal(scale=2.0, size=(12, 2))
    lmk = LandmarkSet(vids, cids, targets2d)
    err = synth.oracle_gradcheck(
        lambda p: landmark_loss(p.reshape(n, 3), lmk, cams, mesh.mirror, 0.1)[0],
        lambda p: landmark_loss(p.reshape(n, 3), lmk, cams, mesh.mirror, 0.1)[1],
        base, h=1e-5, coords=picks,
    )
    results.append(CheckResult("fd-landmark-loss", err, 1e-5, detail=f"{coords} coords"))

    weights = {"face": 0.3, "hair": 1.2, "boundary": 2.0, "other": 0.7}
    wmesh = mesh.with_lap_weights(weights)
    err = synth.oracle_gradcheck(
        lambda p: laplacian_loss(wmesh, p.reshape(n, 3))[0],
        lambda p: laplacian_loss(wmesh, p.reshape(n, 3))[1],
        base, h=1e-6, coords=picks,
    )
    results.append(CheckResult("fd-laplacian-loss", err, 1e-6, detail=f"{coords} coords"))
    return results


def check_fuse_oracle(seed: int = 0, trials: int = 200) -> CheckResult:
    """fuse equals the scalar-loop literal oracle on tiny random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        base = int(rng.integers(2, synth.ORACLE_MAX_RES + 1))
        levels = int(rng.integers(1, synth.ORACLE_MAX_LEVELS + 1))
        nview = int(rng.integers(1, synth.ORACLE_MAX_VIEWS + 1))
        w = int(rng.integers(3, 9))
        h = int(rng.integers(3, 9))
        config = FusionConfig(gamma=(1.0, 0.8, 0.6), base_res=base, num_levels=levels)
        views, feats = _random_views(rng, nview, w, h, config)
        fused, _ = fuse([v[0] for v in views], config)
        ref = synth.oracle_fuse(
            [v[1] for v in views], feats, [v[2] for v in views],
            [v[0].gamma for v in views], config,
        )
        worst = max(worst, float(np.abs(fused - ref).max()))
    return CheckResult("fuse-vs-oracle", worst, 1e-9, detail=f"{trials} instances")


def check_partition(seed: int = 0, buffers: int = 100):
    """Bilinear partition of unity and splat mass conservation."""
    rng = np.random.default_rng(seed)
    worst_unity = 0.0
    worst_conservation = 0.0
    for _ in range(buffers):
        res = int(rng.integers(4, 33))
        # margin keeps every tap in range, so sum(D) accounts for every covered pixel
        gb = synth.random_gbuffer(rng, int(rng.integers(4, 17)), int(rng.integers(4, 17)),
                                  uv_margin=0.5 / res)
        uv = gb.uv[gb.mask]
        if not len(uv):
            continue
        taps = _splat_taps(uv, res)
        worst_unity = max(worst_unity, float(np.abs(taps.weights.sum(axis=1) - 1).max()))
        _, dens = splat_level(gb, np.ones((gb.height, gb.width, 1)), res)
        n = int(gb.mask.sum())
        worst_conservation = max(worst_conservation, abs(float(dens.sum()) - n) / n)
    return [
        CheckResult("bilinear-partition-of-unity", worst_unity, 1e-12, detail=f"{buffers} buffers"),
        CheckResult("splat-mass-conservation", worst_conservation, 1e-12,
                    detail="relative |sum D - covered pixels|"),
    ]


def check_constant_preservation(seed: int = 0) -> CheckResult:
    """Constant features across six views fuse back to the constant.

    The fused value at a texel is c * sum(W) / (sum(W) + eps), so the
    attainable error floor is eps / weight; epsilon is set small enough
    that the floor sits far below the tolerance even at the weakly
    observed pole texels of the spherical chart.
    """
    spec = synth.SceneSpec(shape="icosphere", subdiv=2, uv_layout="spherical")
    mesh, _ = synth.make_scene(spec)
    cams = six_view_rig(3.5, (0, 0, 0), width=128, height=128)
    config = FusionConfig(base_res=64, num_levels=3, epsilon=1e-12)
    c = np.array([0.25, 0.5, 1.0])
    views = []
    for k, cam in enumerate(cams):
        gb = rasterize(mesh, mesh.vertices, cam)
        feat = np.broadcast_to(c, (gb.height, gb.width, 3)).copy()
        pyr = build_pyramid(gb, feat, config, cam)
        views.append(ViewSplat.from_pyramid(pyr, config.gamma[k]))
    fused, total = fuse(views, config)
    sel = total > 10 * config.epsilon
    err = float(np.abs(fused[sel] - c).max()) if sel.any() else np.inf
    return CheckResult("constant-feature-preservation", err, 1e-6,
                       detail=f"{int(sel.sum())} texels")


def check_grazing_suppression(seed: int = 0) -> CheckResult:
    """Zero-confidence (grazing) observations contribute nothing to fusion."""
    rng = np.random.default_rng(seed)
    w = h = 16
    config = FusionConfig(gamma=(1.0, 1.0), base_res=16, num_levels=2)
    cam_a = synth.default_camera(w, h, distance=2.0)
    cam_b = synth.default_camera(w, h, distance=2.0)
    gb_a = synth.random_gbuffer(rng, w, h, coverage=0.8)
    gb_b = synth.random_gbuffer(rng, w, h, coverage=0.8)
    # View A sees every point at or beyond grazing: n . v <= 0.
    pts, rows, cols = gb_a.pixel_rays(cam_a)
    v = cam_a.center - pts
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    n = gb_a.normal[gb_a.mask]
    dots = np.einsum("pc,pc->p", n, v)
    n = n - np.clip(dots, 0, None)[:, None] * v  # project out the toward-camera part
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
    gb_a.normal[gb_a.mask] = n
    # View B sees every point head-on.
    pts_b, _, _ = gb_b.pixel_rays(cam_b)
    vb = cam_b.center - pts_b
    gb_b.normal[gb_b.mask] = vb / np.linalg.norm(vb, axis=1, keepdims=True)

    feat_a = np.full((h, w, 1), 5.0)
    feat_b = np.full((h, w, 1), 1.0)
    pyr_a = build_pyramid(gb_a, feat_a, config, cam_a)
    pyr_b = build_pyramid(gb_b, feat_b, config, cam_b)
    _, den_a = fuse([ViewSplat.from_pyramid(pyr_a, 1.0)], config)
    fused, den = fuse(
        [ViewSplat.from_pyramid(pyr_a, 1.0), ViewSplat.from_pyramid(pyr_b, 1.0)], config
    )
    sel = den > config.epsilon
    share = 1.0 - den_a[sel] / den[sel]
    return CheckResult("grazing-angle-suppression", float(share.min()), 0.99, op=">=",
                       detail=f"B share over {int(sel.sum())} texels")


def check_hole_filling(seed: int = 0):
    """Hierarchical pyramid fills every chart texel from one sparse 32x32 view."""
    spec = synth.SceneSpec(shape="grid", cells=8, uv_layout="planar", feature_rule="constant",
                           feature_value=1.0)
    mesh, _ = synth.make_scene(spec)
    cam = look_at_camera((0, 0, 2.0), (0, 0, 0), 32, 32, focal=56.0)
    gb = rasterize(mesh, mesh.vertices, cam)
    feat = synth.make_features(spec, gb)

    centers = (np.arange(256) + 0.5) / 256
    uu, vv = np.meshgrid(centers, centers)
    chart_faces, _ = UVTriangleIndex(mesh).query_batch(
        np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    )
    chart = (chart_faces >= 0).reshape(256, 256)

    config4 = FusionConfig(gamma=(1.0,), base_res=256, num_levels=4)
    pyr4 = build_pyramid(gb, feat, config4, cam)
    filled, _ = hole_fill(pyr4, config4)
    zero_filled = int(((np.abs(filled).sum(axis=2) == 0) & chart).sum())

    config1 = FusionConfig(gamma=(1.0,), base_res=256, num_levels=1)
    pyr1 = build_pyramid(gb, feat, config1, cam)
    zero_l1 = count_zero_texels(pyr1.levels[0].density, chart)
    frac_l1 = zero_l1 / max(int(chart.sum()), 1)
    return [
        CheckResult("hole-fill-zero-output-texels", float(zero_filled), 0.0,
                    detail=f"chart={int(chart.sum())} texels, L=4"),
        CheckResult("hole-fill-sparse-at-L1", frac_l1, 0.5, op=">=",
                    detail=f"{zero_l1} zero-density texels at L=1"),
    ]


SUITES = {
    "adjoint": lambda seed: [check_adjoint(seed)],
    "fd": lambda seed: [check_fd_fused(seed)] + check_fd_losses(seed),
    "oracle": lambda seed: [check_fuse_oracle(seed)],
    "conservation": lambda seed: check_partition(seed),
    "fusion": lambda seed: [check_constant_preservation(seed), check_grazing_suppression(seed)]
    + check_hole_filling(seed),
}


def run_suite(name: str, seed: int = 0):
    if name == "all":
        out = []
        for key in SUITES:
            out.extend(SUITES[key](seed))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name](seed)
