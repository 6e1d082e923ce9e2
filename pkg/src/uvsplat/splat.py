"""Multi-view feature splatting into a canonical UV space.

Implements differentiable bilinear splatting of per-pixel features onto UV
texel grids, per-level confidence splatting, a re-splatted multi-resolution
pyramid, coarse-to-fine hole filling gated by a soft density mask, and
visibility-aware fusion across views and levels with exact adjoint gradients
back to the input pixel features.

Conventions: UV maps are square res x res arrays indexed [v_row, u_col];
texel (i, j) has its center at uv = ((i + 0.5)/res, (j + 0.5)/res). A pixel
with uv u is splatted at continuous texel coordinates (u*res - 0.5,
v*res - 0.5) onto its 4 surrounding texel centers; taps falling outside the
grid are dropped, not clamped, so the density map accounts for all retained
mass. All accumulation is float64 in pixel-major order, which makes results
bit-reproducible. Feature maps are plain float64 arrays of shape (H, W, C).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera
from .raster import GBuffer

logger = logging.getLogger("uvsplat")


@dataclass(frozen=True)
class FusionConfig:
    """Knobs for pyramid building, hole filling, and fusion.

    gamma holds one global view weight per view, front view first (the
    default matches the six-view rig order: front, +-60, +-120, back).
    """

    gamma: tuple = (1.0, 0.8, 0.8, 0.6, 0.6, 0.7)
    epsilon: float = 1e-8
    base_res: int = 256
    num_levels: int = 4
    density_tau: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.density_tau <= 0:
            raise ValueError(f"density_tau must be > 0, got {self.density_tau}")
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be >= 1, got {self.num_levels}")
        if self.base_res < 1:
            raise ValueError(f"base_res must be >= 1, got {self.base_res}")
        g = tuple(float(x) for x in self.gamma)
        if any(x < 0 for x in g) or not any(x > 0 for x in g):
            raise ValueError("gamma must be nonnegative with at least one positive entry")
        object.__setattr__(self, "gamma", g)

    def level_resolutions(self):
        """Per-level resolutions base_res // 2^l, truncated before reaching 0."""
        res = [self.base_res // (1 << l) for l in range(self.num_levels)]
        keep = [r for r in res if r >= 1]
        if len(keep) < self.num_levels:
            logger.warning(
                "pyramid truncated to %d levels (coarsest would fall below 1 texel)", len(keep)
            )
        return keep


@dataclass
class TapSet:
    """Bilinear splat taps for one view at one resolution, pixel-major order."""

    res: int
    rows: np.ndarray     # (P, 4) texel row per tap
    cols: np.ndarray     # (P, 4) texel col per tap
    weights: np.ndarray  # (P, 4) bilinear weights, each pixel's row sums to 1
    in_range: np.ndarray  # (P, 4) tap retained


def _splat_taps(uv: np.ndarray, res: int) -> TapSet:
    x = uv[:, 0] * res - 0.5
    y = uv[:, 1] * res - 0.5
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    cols = np.stack([ix, ix + 1, ix, ix + 1], axis=1)
    rows = np.stack([iy, iy, iy + 1, iy + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    ok = (cols >= 0) & (cols < res) & (rows >= 0) & (rows < res)
    return TapSet(res=res, rows=rows, cols=cols, weights=w, in_range=ok)


def _scatter(taps: TapSet, values: np.ndarray):
    """Accumulate per-pixel values (P,) or (P, C) through the taps.

    Returns the (res, res[, C]) sum plus the (res, res) density.
    """
    res = taps.res
    keep = taps.in_range.reshape(-1)
    idx = (taps.rows * res + taps.cols).reshape(-1)[keep]
    w = taps.weights.reshape(-1)[keep]
    dens = np.zeros(res * res)
    np.add.at(dens, idx, w)
    if values.ndim == 1:
        out = np.zeros(res * res)
        vals = np.repeat(values, 4)[keep]
        np.add.at(out, idx, w * vals)
        return out.reshape(res, res), dens.reshape(res, res)
    c = values.shape[1]
    out = np.zeros((res * res, c))
    vals = np.repeat(values, 4, axis=0)[keep]
    np.add.at(out, idx, w[:, None] * vals)
    return out.reshape(res, res, c), dens.reshape(res, res)


def _gather(taps: TapSet, grid: np.ndarray) -> np.ndarray:
    """Adjoint of _scatter's value path: bilinear gather at each pixel's taps."""
    res = taps.res
    flat = grid.reshape(res * res, -1)
    w = np.where(taps.in_range, taps.weights, 0.0)
    idx = np.clip(taps.rows * res + taps.cols, 0, res * res - 1)
    out = np.einsum("pt,ptc->pc", w, flat[idx])
    return out[:, 0] if grid.ndim == 2 else out


def _check_features(gbuffer: GBuffer, features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.shape[:2] != (gbuffer.height, gbuffer.width):
        raise ValueError(
            f"feature map {f.shape[:2]} does not match view {gbuffer.height, gbuffer.width}"
        )
    if not np.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    return f


def splat_level(gbuffer: GBuffer, features, res: int):
    """Bilinear-splat covered pixel features onto a res x res UV grid.

    Returns (U, D): U accumulates weight * feature, D accumulates weight.
    """
    if res < 1:
        raise ValueError(f"res must be >= 1, got {res}")
    f = _check_features(gbuffer, features)
    uv = gbuffer.uv[gbuffer.mask]
    taps = _splat_taps(uv, res)
    return _scatter(taps, f[gbuffer.mask])


def confidence_scores(gbuffer: GBuffer, camera: Camera) -> np.ndarray:
    """Per covered pixel max(0, n . v): how frontally the surface is seen.

    v is the unit direction from the reconstructed surface point to the
    camera center, so grazing and back-facing observations score zero.
    """
    pts, rows, cols = gbuffer.pixel_rays(camera)
    v = camera.center - pts
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-30)
    n = gbuffer.normal[rows, cols]
    return np.maximum(0.0, np.einsum("pc,pc->p", n, v))


def splat_confidence(gbuffer: GBuffer, camera: Camera, res: int) -> np.ndarray:
    """Splat the per-pixel confidence scores with the same bilinear operator."""
    if res < 1:
        raise ValueError(f"res must be >= 1, got {res}")
    uv = gbuffer.uv[gbuffer.mask]
    taps = _splat_taps(uv, res)
    conf, _ = _scatter(taps, confidence_scores(gbuffer, camera))
    return conf


@dataclass
class PyramidLevel:
    res: int
    features: np.ndarray    # (res, res, C) splatted feature sums U
    density: np.ndarray     # (res, res) splatted weight sums D
    confidence: np.ndarray  # (res, res) splatted score sums C
    taps: TapSet = None     # kept only when the pyramid records gradients


@dataclass
class UVPyramid:
    """Per-view pyramid of re-splatted UV maps, finest level first."""

    levels: list
    base_res: int
    channels: int
    image_shape: tuple = None       # (H, W) of the source view
    pixel_mask: np.ndarray = None   # source coverage, kept for gradient recording

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def build_pyramid(gbuffer: GBuffer, features, config: FusionConfig, camera: Camera,
                  keep_taps: bool = False) -> UVPyramid:
    """Splat features and confidence independently at every pyramid level.

    Each level is re-splatted at its own resolution (not downsampled), so
    coarser levels have genuinely denser coverage.
    """
    f = _check_features(gbuffer, features)
    uv = gbuffer.uv[gbuffer.mask]
    fpix = f[gbuffer.mask]
    scores = confidence_scores(gbuffer, camera)
    levels = []
    for res in config.level_resolutions():
        taps = _splat_taps(uv, res)
        u, d = _scatter(taps, fpix)
        c, _ = _scatter(taps, scores)
        levels.append(
            PyramidLevel(res=res, features=u, density=d, confidence=c,
                         taps=taps if keep_taps else None)
        )
    return UVPyramid(
        levels=levels,
        base_res=config.base_res,
        channels=f.shape[2],
        image_shape=(gbuffer.height, gbuffer.width),
        pixel_mask=gbuffer.mask.copy() if keep_taps else None,
    )


def _resize_taps(src: int, dst: int):
    """Per-axis bilinear taps for texel-center-aligned resize with edge clamp."""
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    i0 = np.floor(x).astype(np.int64)
    f = x - i0
    lo = np.clip(i0, 0, src - 1)
    hi = np.clip(i0 + 1, 0, src - 1)
    return lo, hi, f


def upsample_bilinear(arr: np.ndarray, dst: int) -> np.ndarray:
    """Resize a square (S, S[, C]) map to (dst, dst[, C]), texel centers aligned."""
    src = arr.shape[0]
    if src == dst:
        return arr.copy()
    lo, hi, f = _resize_taps(src, dst)
    a = arr if arr.ndim == 3 else arr[:, :, None]
    rows = a[lo] * (1 - f)[:, None, None] + a[hi] * f[:, None, None]
    out = rows[:, lo] * (1 - f)[None, :, None] + rows[:, hi] * f[None, :, None]
    return out if arr.ndim == 3 else out[:, :, 0]


def upsample_adjoint(grad: np.ndarray, src: int) -> np.ndarray:
    """Exact transpose of upsample_bilinear back to (src, src[, C])."""
    dst = grad.shape[0]
    if src == dst:
        return grad.copy()
    lo, hi, f = _resize_taps(src, dst)
    g = grad if grad.ndim == 3 else grad[:, :, None]
    rows = np.zeros((src, dst, g.shape[2]))
    np.add.at(rows, lo, g * (1 - f)[:, None, None])
    np.add.at(rows, hi, g * f[:, None, None])
    out = np.zeros((src, src, g.shape[2]))
    np.add.at(out.transpose(1, 0, 2), lo, rows.transpose(1, 0, 2) * (1 - f)[:, None, None])
    np.add.at(out.transpose(1, 0, 2), hi, rows.transpose(1, 0, 2) * f[:, None, None])
    return out if grad.ndim == 3 else out[:, :, 0]


def _fill_recursive(values, densities, eps, tau, normalize=True):
    """Coarse-to-fine push-pull: alpha * value + (1 - alpha) * upsampled coarse.

    With normalize=True the per-level value is the density-normalized sum
    val/(dens + eps); alpha = min(1, dens/tau) is the soft coverage mask.
    """
    out = None
    for val, dens in zip(values[::-1], densities[::-1]):
        if normalize:
            v = val / (dens + eps)[..., None] if val.ndim == 3 else val / (dens + eps)
        else:
            v = val
        alpha = np.minimum(1.0, dens / tau)
        a = alpha[..., None] if val.ndim == 3 else alpha
        if out is None:
            out = a * v
        else:
            out = a * v + (1 - a) * upsample_bilinear(out, val.shape[0])
    return out


def hole_fill(pyramid: UVPyramid, config: FusionConfig):
    """Fill sparse fine-level texels from coarser levels of the same view.

    Returns (filled, weight): the density-normalized feature map at base
    resolution with holes filled from coarser levels, and the analogously
    filled effective density. Texels with zero coverage at every level in
    their pyramid cone stay zero.
    """
    eps, tau = config.epsilon, config.density_tau
    dens = [lv.density for lv in pyramid.levels]
    if not any(d.any() for d in dens):
        logger.warning("hole_fill: no coverage at any pyramid level")
        r = pyramid.levels[0].res
        return np.zeros((r, r, pyramid.channels)), np.zeros((r, r))
    filled = _fill_recursive([lv.features for lv in pyramid.levels], dens, eps, tau)
    weight = _fill_recursive(dens, dens, eps, tau, normalize=False)
    return filled, weight


def hole_fill_confidence(pyramid: UVPyramid, config: FusionConfig) -> np.ndarray:
    """Hole-filled per-texel mean confidence (C/(D+eps) pushed coarse-to-fine)."""
    return _fill_recursive(
        [lv.confidence for lv in pyramid.levels],
        [lv.density for lv in pyramid.levels],
        config.epsilon,
        config.density_tau,
    )


@dataclass
class ViewSplat:
    """One view's contribution to fusion: its pyramid plus the view weight.

    The hole-filled fields are only needed for mode="filled" fusion and are
    computed on demand by from_pyramid(..., hole_filled=True).
    """

    pyramid: UVPyramid
    gamma: float
    filled_features: np.ndarray = None
    filled_weight: np.ndarray = None
    filled_confidence: np.ndarray = None

    @classmethod
    def from_pyramid(cls, pyramid: UVPyramid, gamma: float, config: FusionConfig = None,
                     hole_filled: bool = False) -> "ViewSplat":
        if not hole_filled:
            return cls(pyramid=pyramid, gamma=float(gamma))
        filled, weight = hole_fill(pyramid, config)
        conf = hole_fill_confidence(pyramid, config)
        return cls(pyramid=pyramid, gamma=float(gamma), filled_features=filled,
                   filled_weight=weight, filled_confidence=conf)


@dataclass
class FuseRecord:
    """Forward state saved by fuse(record=True), consumed by fuse_backward."""

    config: FusionConfig
    channels: int
    base_res: int
    denom: np.ndarray       # (R, R) sum of upsampled weights + epsilon
    zero_mask: np.ndarray   # (R, R) texels forced to zero output
    view_taps: list         # per view: list of TapSet per level
    view_dens: list         # per view: list of (res, res) densities per level
    view_upw: list          # per view: list of (res, res) level weights W_{k,l}
    view_masks: list        # per view: (H, W) source coverage
    image_shapes: list


def fuse(views, config: FusionConfig, mode: str = "levels", record: bool = False):
    """Fuse per-view pyramids into one canonical UV feature map.

    mode="levels" fuses the raw pyramid levels directly: per level,
    W_{k,l} = gamma_k * C_{k,l} * D_{k,l} weights the density-normalized
    features Uhat = U_{k,l}/(D_{k,l}+eps), and
    U = sum up(W .* Uhat) / (sum up(W) + eps) over all views and levels,
    with up() the bilinear upsample to base resolution. Upsampling the
    weighted product (not Uhat alone) keeps the weighted-average structure
    intact across resolutions, so constant inputs fuse back to the constant
    wherever real mass lands. Texels whose total weight is <= eps output
    exactly zero.

    mode="filled" instead fuses each view's hole-filled map with weight
    gamma_k * filled_confidence * filled_weight (per-view push-pull first,
    ablation route; requires views built with hole_filled=True).

    Returns (fused (R, R, C), total_weight (R, R)) and, with record=True,
    a FuseRecord for the exact adjoint (mode="levels" only).
    """
    if not views:
        raise ValueError("fuse needs at least one view")
    base = views[0].pyramid.base_res
    chans = views[0].pyramid.channels
    nlev = views[0].pyramid.num_levels
    for v in views:
        if (v.pyramid.base_res, v.pyramid.channels, v.pyramid.num_levels) != (base, chans, nlev):
            raise ValueError("all view pyramids must share base_res, channels, num_levels")
    eps = config.epsilon
    r = views[0].pyramid.levels[0].res

    num = np.zeros((r, r, chans))
    den = np.zeros((r, r))
    rec_taps, rec_dens, rec_upw, rec_masks, rec_shapes = [], [], [], [], []

    if mode == "levels":
        for v in views:
            taps_l, dens_l, w_l = [], [], []
            for lv in v.pyramid.levels:
                uhat = lv.features / (lv.density + eps)[:, :, None]
                w = v.gamma * lv.confidence * lv.density
                num += upsample_bilinear(w[:, :, None] * uhat, r)
                den += upsample_bilinear(w, r)
                if record:
                    if lv.taps is None:
                        raise ValueError("record=True requires pyramids built with keep_taps=True")
                    taps_l.append(lv.taps)
                    dens_l.append(lv.density)
                    w_l.append(w)
            if record:
                rec_taps.append(taps_l)
                rec_dens.append(dens_l)
                rec_upw.append(w_l)
                rec_masks.append(v.pyramid.pixel_mask)
                rec_shapes.append(v.pyramid.image_shape)
    elif mode == "filled":
        if record:
            raise ValueError("gradient recording is only supported for mode='levels'")
        for v in views:
            if v.filled_features is None:
                raise ValueError("mode='filled' requires views built with hole_filled=True")
            w = v.gamma * v.filled_confidence * v.filled_weight
            num += w[:, :, None] * v.filled_features
            den += w
    else:
        raise ValueError(f"unknown fuse mode {mode!r}")

    zero = den <= eps
    fused = num / (den + eps)[:, :, None]
    fused[zero] = 0.0
    if not record:
        return fused, den
    rec = FuseRecord(
        config=config, channels=chans, base_res=r, denom=den + eps, zero_mask=zero,
        view_taps=rec_taps, view_dens=rec_dens, view_upw=rec_upw,
        view_masks=rec_masks, image_shapes=rec_shapes,
    )
    return fused, den, rec


def fuse_backward(record: FuseRecord, grad_out) -> list:
    """Exact adjoint of fuse w.r.t. each view's input pixel features.

    grad_out is (R, R, C); returns one (H_k, W_k, C) gradient map per view.
    Weights, densities, confidences, and the soft masks are constants with
    respect to the features, so the chain is linear and the adjoint exact.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    r, c = record.base_res, record.channels
    if g.shape != (r, r, c):
        raise ValueError(f"grad_out shape {g.shape} does not match recorded {(r, r, c)}")
    g = g / record.denom[:, :, None]
    g = np.where(record.zero_mask[:, :, None], 0.0, g)
    eps = record.config.epsilon
    grads = []
    for taps_l, dens_l, w_l, mask, shape in zip(
        record.view_taps, record.view_dens, record.view_upw,
        record.view_masks, record.image_shapes,
    ):
        gpix = np.zeros(shape + (c,))
        acc = np.zeros((int(mask.sum()), c))
        for taps, dens, w in zip(taps_l, dens_l, w_l):
            t = upsample_adjoint(g, dens.shape[0])
            t = t * w[:, :, None] / (dens + eps)[:, :, None]
            acc += _gather(taps, t)
        gpix[mask] = acc
        grads.append(gpix)
    return grads


def count_zero_texels(density: np.ndarray, mask: np.ndarray = None) -> int:
    """Coverage counter: zero-density texels, optionally within a chart mask."""
    zero = density == 0
    if mask is not None:
        zero = zero & mask
    return int(zero.sum())
