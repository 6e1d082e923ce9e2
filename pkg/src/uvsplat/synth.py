"""Synthetic scenes and brute-force oracles for desk-scale verification.

Scenes are parametric (icospheres, ellipsoids, planar grids) with UV charts,
latitude-band semantic labels, an x-negation mirror map, and a trivial
axis-scaling blendshape basis. The oracles deliberately re-implement the
splatting/fusion math as scalar loops and the gradients as central finite
differences so library results can be checked against an independent path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .deform import DEFAULT_REGION_WEIGHTS
from .geometry import BlendModel, Camera, MeshError, TriMesh, look_at_camera
from .raster import GBuffer
from .splat import FusionConfig

logger = logging.getLogger("uvsplat")

ORACLE_MAX_RES = 8
ORACLE_MAX_VIEWS = 3
ORACLE_MAX_LEVELS = 2


@dataclass(frozen=True)
class SceneSpec:
    """Parametric scene description.

    shape: icosphere (subdiv), ellipsoid (subdiv, axes), grid (cells).
    uv_layout: spherical | per-face-atlas | planar (planar is the natural
    layout for grids; spherical is rejected for grids).
    Labels: latitude below lat_face_max -> face, above lat_hair_min -> hair,
    between -> boundary; leave both None for all-'other'.
    feature_rule: checkerboard(feature_cells) | normals-as-rgb |
    constant(feature_value), all emitted as 3-channel view images.
    """

    shape: str = "icosphere"
    subdiv: int = 2
    axes: tuple = (1.0, 1.0, 1.0)
    cells: int = 4
    uv_layout: str = "spherical"
    lat_face_max: float = None
    lat_hair_min: float = None
    feature_rule: str = "checkerboard"
    feature_cells: int = 8
    feature_value: float = 1.0
    region_weights: dict = field(default_factory=lambda: dict(DEFAULT_REGION_WEIGHTS))

    def __post_init__(self):
        if self.shape not in ("icosphere", "ellipsoid", "grid"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.subdiv < 0:
            raise ValueError("subdiv must be >= 0")
        if self.cells < 1:
            raise ValueError("cells must be >= 1")
        if any(a <= 0 for a in self.axes):
            raise ValueError("ellipsoid axes must be positive")
        if self.uv_layout not in ("spherical", "per-face-atlas", "planar"):
            raise ValueError(f"unknown uv_layout {self.uv_layout!r}")
        if self.uv_layout == "planar" and self.shape != "grid":
            raise ValueError("planar uv_layout only applies to grids")
        if self.uv_layout == "spherical" and self.shape == "grid":
            raise ValueError("spherical uv_layout does not apply to grids")
        if self.feature_rule not in ("checkerboard", "normals-as-rgb", "constant"):
            raise ValueError(f"unknown feature_rule {self.feature_rule!r}")
        if self.feature_cells < 1:
            raise ValueError("feature_cells must be >= 1")


def _icosahedron():
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
            (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
            (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
            (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
            (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
            (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
        ],
        dtype=np.int64,
    )
    return verts, faces


def icosphere(subdiv: int):
    """Unit icosphere: 10 * 4^s + 2 vertices, 20 * 4^s outward-wound faces."""
    verts, faces = _icosahedron()
    verts = [v for v in verts]
    for _ in range(subdiv):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(new_faces, dtype=np.int64)
    v = np.array(verts)
    # enforce outward winding
    tri = v[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroid = tri.mean(axis=1)
    flip = np.einsum("fc,fc->f", n, centroid) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return v, faces


def grid_mesh(cells: int):
    """Planar (2 * cells^2)-triangle grid in the xy plane, normals toward +z."""
    n = cells
    coords = np.arange(n + 1) / n - 0.5
    xx, yy = np.meshgrid(coords, coords)
    verts = np.stack([xx.reshape(-1), yy.reshape(-1), np.zeros((n + 1) ** 2)], axis=1)
    faces = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            faces += [(v00, v10, v11), (v00, v11, v01)]
    return verts, np.array(faces, dtype=np.int64)


def _spherical_uv(directions: np.ndarray, faces: np.ndarray):
    """Per-corner spherical UVs with the seam unwrapped and clamped at u = 1.

    Returns (uv_corners, seam_mask). Pole corners take the mean u of their
    face's other corners.
    """
    u = 0.5 + np.arctan2(directions[:, 0], directions[:, 2]) / (2 * math.pi)
    v = 0.5 - np.arcsin(np.clip(directions[:, 1], -1, 1)) / math.pi
    uv = np.stack([u[faces], v[faces]], axis=2)
    pole = np.abs(np.abs(directions[:, 1]) - 1.0) < 1e-12
    seam = np.zeros(len(faces), dtype=bool)
    for f in range(len(faces)):
        us = uv[f, :, 0]
        is_pole = pole[faces[f]]
        if is_pole.any():
            other = us[~is_pole]
            if len(other) and other.max() - other.min() > 0.5:  # seam-adjacent pole face
                other = np.where(other < 0.5, other + 1.0, other)
                seam[f] = True
            if len(other):
                us[is_pole] = other.mean()
        if us.max() - us.min() > 0.5:
            us = np.where(us < 0.5, us + 1.0, us)
            seam[f] = True
        uv[f, :, 0] = np.clip(us, 0.0, 1.0)
    return uv, seam


def _atlas_uv(num_faces: int, margin: float = 0.15):
    """Per-face triangle patches packed into a square cell grid."""
    g = math.ceil(math.sqrt(num_faces))
    uv = np.zeros((num_faces, 3, 2))
    tri = np.array([(margin, margin), (1 - margin, margin), (margin, 1 - margin)])
    for f in range(num_faces):
        cell = np.array([f % g, f // g], dtype=np.float64)
        uv[f] = (cell + tri) / g
    return uv


def _mirror_pairing(verts: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Nearest-vertex pairing under x-negation; unmatched vertices map to self."""
    flipped = verts * np.array([-1.0, 1.0, 1.0])
    n = len(verts)
    mirror = np.empty(n, dtype=np.int64)
    block = 512
    for start in range(0, n, block):
        chunk = flipped[start:start + block]
        d2 = ((chunk[:, None, :] - verts[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        dist = np.sqrt(d2[np.arange(len(chunk)), nearest])
        nearest[dist > tol] = -1
        mirror[start:start + block] = nearest
    unmatched = mirror < 0
    if unmatched.any():
        logger.warning("mirror pairing: %d vertices unmatched, mapped to self", int(unmatched.sum()))
        mirror[unmatched] = np.nonzero(unmatched)[0]
    bad = mirror[mirror] != np.arange(n)
    if bad.any():
        logger.warning("mirror pairing: %d non-involutive vertices, mapped to self", int(bad.sum()))
        mirror[bad] = np.nonzero(bad)[0]
    return mirror


def _latitude_labels(verts: np.ndarray, spec: SceneSpec) -> np.ndarray:
    labels = np.full(len(verts), "other", dtype="<U8")
    if spec.lat_face_max is None and spec.lat_hair_min is None:
        return labels
    if spec.shape == "grid":
        y = verts[:, 1]
        span = max(np.abs(y).max(), 1e-12)
        lat = np.arcsin(np.clip(y / span, -1, 1))
    else:
        unit = verts / np.maximum(np.linalg.norm(verts, axis=1, keepdims=True), 1e-30)
        lat = np.arcsin(np.clip(unit[:, 1], -1, 1))
    lo = spec.lat_face_max if spec.lat_face_max is not None else -np.inf
    hi = spec.lat_hair_min if spec.lat_hair_min is not None else np.inf
    labels[lat <= lo] = "face"
    labels[lat >= hi] = "hair"
    labels[(lat > lo) & (lat < hi)] = "boundary"
    return labels


def make_scene(spec: SceneSpec):
    """Build (TriMesh, BlendModel) for the spec; generation is deterministic.

    The blendshape basis holds three per-axis scaling fields, so coefficient
    c_k scales axis k by (1 + c_k).
    """
    if spec.shape == "grid":
        verts, faces = grid_mesh(spec.cells)
        directions = verts
    else:
        directions, faces = icosphere(spec.subdiv)
        verts = directions * np.asarray(spec.axes) if spec.shape == "ellipsoid" else directions

    if spec.uv_layout == "spherical":
        uv, _ = _spherical_uv(directions, faces)
    elif spec.uv_layout == "planar":
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        vt = (verts[:, :2] - lo[:2]) / span[:2]
        uv = vt[faces]
    else:
        uv = _atlas_uv(len(faces))

    labels = _latitude_labels(verts, spec)
    mirror = _mirror_pairing(verts)
    weights = np.array([spec.region_weights.get(lbl, 0.0) for lbl in labels])
    mesh = TriMesh(verts, faces, uv, labels, mirror, weights)

    basis = np.zeros((3, len(verts), 3))
    for k in range(3):
        basis[k, :, k] = verts[:, k]
    return mesh, BlendModel(template=mesh, basis=basis)


def seam_face_mask(mesh: TriMesh) -> np.ndarray:
    """Faces straddling the spherical chart's azimuth wrap at +-180 degrees.

    Detected from vertex positions (the raw per-vertex u spread before the
    seam clamp), so fusion tests can exclude seam texels.
    """
    u_raw = 0.5 + np.arctan2(mesh.vertices[:, 0], mesh.vertices[:, 2]) / (2 * math.pi)
    spread = u_raw[mesh.faces]
    return (spread.max(axis=1) - spread.min(axis=1)) > 0.5


def default_camera(width: int = 32, height: int = 32, distance: float = 2.5,
                   fov_deg: float = 45.0) -> Camera:
    """Frontal camera on the +z axis looking at the origin."""
    focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return look_at_camera((0.0, 0.0, distance), (0.0, 0.0, 0.0), width, height, focal)


def make_features(spec: SceneSpec, gbuffer: GBuffer) -> np.ndarray:
    """3-channel per-view feature image according to the spec's feature rule."""
    h, w = gbuffer.height, gbuffer.width
    if spec.feature_rule == "constant":
        return np.full((h, w, 3), float(spec.feature_value))
    if spec.feature_rule == "normals-as-rgb":
        return (gbuffer.normal + 1.0) / 2.0
    cx = np.floor(np.arange(w) * spec.feature_cells / w).astype(int)
    cy = np.floor(np.arange(h) * spec.feature_cells / h).astype(int)
    px = cx[None, :] % 2
    py = cy[:, None] % 2
    return np.stack(
        [np.broadcast_to((px + py) % 2, (h, w)),
         np.broadcast_to(px, (h, w)),
         np.broadcast_to(py, (h, w))],
        axis=2,
    ).astype(np.float64)


def analytic_normal_maps(spec: SceneSpec, cameras):
    """Exact world-space ellipsoid normals by ray intersection, per camera.

    Returns (maps, masks); rays that miss get normal (0,0,0) and mask 0.
    """
    if spec.shape not in ("ellipsoid", "icosphere"):
        raise ValueError("analytic normal maps require an ellipsoid or sphere spec")
    axes = np.asarray(spec.axes if spec.shape == "ellipsoid" else (1.0, 1.0, 1.0))
    maps, masks = [], []
    for cam in cameras:
        h, w = cam.height, cam.width
        px = (np.arange(w) + 0.5 - cam.cx) / cam.fx
        py = (np.arange(h) + 0.5 - cam.cy) / cam.fy
        gx, gy = np.meshgrid(px, py)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=2)
        d = d_cam @ cam.rotation  # rows of R are camera axes: R^T @ d_cam
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        o = cam.center
        os_, ds = o / axes, d / axes
        a = np.einsum("hwc,hwc->hw", ds, ds)
        b = np.einsum("c,hwc->hw", os_, ds)
        c = float(os_ @ os_) - 1.0
        disc = b * b - a * c
        hit = disc >= 0
        t = np.where(hit, (-b - np.sqrt(np.maximum(disc, 0.0))) / a, np.nan)
        hit &= t > 0
        p = o + t[:, :, None] * d
        n = p / (axes**2)
        norm = np.linalg.norm(n, axis=2, keepdims=True)
        n = np.where(hit[:, :, None], n / np.maximum(norm, 1e-30), 0.0)
        maps.append(n)
        masks.append(hit)
    return maps, masks


def ellipsoid_distance(points, axes) -> np.ndarray:
    """Exact point-to-ellipsoid-surface distance by bisection on the KKT parameter.

    Independent of any mesh machinery: nearest surface point has coordinates
    x_i = a_i^2 p_i / (a_i^2 + t) with t the root of sum (a_i p_i / (a_i^2 + t))^2 = 1.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a2 = np.asarray(axes, dtype=np.float64) ** 2
    out = np.zeros(len(p))
    tiny = np.linalg.norm(p, axis=1) < 1e-12
    out[tiny] = np.sqrt(a2.min())
    rest = ~tiny
    if rest.any():
        q = p[rest]

        def g(t):
            return ((a2 * q * q) / (a2 + t[:, None]) ** 2).sum(axis=1) - 1.0

        lo = np.full(len(q), -a2.min() + 1e-12)
        hi = np.full(len(q), max(float(a2.max()), 1.0))
        for _ in range(200):
            grown = g(hi) > 0
            if not grown.any():
                break
            hi[grown] = hi[grown] * 2 + 1
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            pos = g(mid) > 0
            lo[pos] = mid[pos]
            hi[~pos] = mid[~pos]
        t = 0.5 * (lo + hi)
        x = a2 * q / (a2 + t[:, None])
        out[rest] = np.linalg.norm(x - q, axis=1)
    return out


def landmark_set(mesh: TriMesh, cameras, target_positions, stride: int = 16):
    """Synthetic landmark correspondences: projected target surface points.

    Takes every stride-th vertex and pairs it, per camera, with the pixel
    projection of the corresponding target position (e.g. the parametric
    ellipsoid point for a sphere template). Stands in for an external
    landmark detector; behind-camera entries are dropped.
    """
    from .deform import LandmarkSet
    from .geometry import project_points

    targets = np.asarray(target_positions, dtype=np.float64)
    vids = np.arange(0, mesh.num_vertices, stride)
    ev, ec, et = [], [], []
    for ci, cam in enumerate(cameras):
        pix, _, ok = project_points(cam, targets[vids])
        inside = ok & (pix[:, 0] >= 0) & (pix[:, 0] <= cam.width) \
            & (pix[:, 1] >= 0) & (pix[:, 1] <= cam.height)
        for j, v in enumerate(vids):
            if inside[j]:
                ev.append(v)
                ec.append(ci)
                et.append(pix[j])
    return LandmarkSet(np.array(ev, np.int64), np.array(ec, np.int64),
                       np.array(et, np.float64).reshape(-1, 2))


def random_gbuffer(rng, width: int, height: int, coverage: float = 0.6,
                   uv_margin: float = 0.0, num_faces: int = 32,
                   depth_range=(1.5, 3.0)) -> GBuffer:
    """Synthetic G-buffer with random coverage, uv, unit normals, and depth.

    uv_margin > 0 keeps uvs away from the chart border so every bilinear tap
    stays in range at any target resolution >= 1/(2*uv_margin).
    """
    gb = GBuffer.empty(width, height)
    mask = rng.random((height, width)) < coverage
    m = int(mask.sum())
    if m == 0:
        return gb
    gb.mask = mask
    gb.face_id[mask] = rng.integers(0, num_faces, m)
    gb.uv[mask] = uv_margin + rng.random((m, 2)) * (1 - 2 * uv_margin)
    n = rng.normal(size=(m, 3))
    gb.normal[mask] = n / np.linalg.norm(n, axis=1, keepdims=True)
    gb.depth[mask] = rng.uniform(*depth_range, m)
    gb.bary[mask] = rng.dirichlet(np.ones(3), m)
    return gb


def _scalar_upsample(grid, dst):
    """Scalar bilinear resize of a square nested-list grid, channels optional."""
    src = len(grid)
    has_c = isinstance(grid[0][0], list)
    nc = len(grid[0][0]) if has_c else 1
    out = [[[0.0] * nc for _ in range(dst)] for _ in range(dst)]

    def taps(i):
        x = (i + 0.5) * src / dst - 0.5
        i0 = math.floor(x)
        f = x - i0
        lo = min(max(i0, 0), src - 1)
        hi = min(max(i0 + 1, 0), src - 1)
        return lo, hi, f

    for r in range(dst):
        rlo, rhi, fr = taps(r)
        for ccol in range(dst):
            clo, chi, fc = taps(ccol)
            for k in range(nc):
                def val(rr, cc):
                    return grid[rr][cc][k] if has_c else grid[rr][cc]
                top = val(rlo, clo) * (1 - fc) + val(rlo, chi) * fc
                bot = val(rhi, clo) * (1 - fc) + val(rhi, chi) * fc
                out[r][ccol][k] = top * (1 - fr) + bot * fr
    if not has_c:
        return [[out[r][c][0] for c in range(dst)] for r in range(dst)]
    return out


def oracle_fuse(gbuffers, features, cameras, gammas, config: FusionConfig) -> np.ndarray:
    """Literal scalar-loop evaluation of splatting, confidence, and fusion.

    Restricted to tiny instances (base_res <= 8, <= 3 views, <= 2 levels);
    oversize inputs are rejected. Deliberately shares no code with the
    vectorized implementation.
    """
    if config.base_res > ORACLE_MAX_RES:
        raise ValueError(f"oracle_fuse limited to base_res <= {ORACLE_MAX_RES}")
    if len(gbuffers) > ORACLE_MAX_VIEWS:
        raise ValueError(f"oracle_fuse limited to {ORACLE_MAX_VIEWS} views")
    if config.num_levels > ORACLE_MAX_LEVELS:
        raise ValueError(f"oracle_fuse limited to {ORACLE_MAX_LEVELS} levels")
    eps = config.epsilon
    big = config.base_res
    nc = np.asarray(features[0]).shape[2]
    num = [[[0.0] * nc for _ in range(big)] for _ in range(big)]
    den = [[0.0] * big for _ in range(big)]

    resolutions = [big // (1 << l) for l in range(config.num_levels)]
    resolutions = [r for r in resolutions if r >= 1]

    for gb, feat, cam, gamma in zip(gbuffers, features, cameras, gammas):
        f = np.asarray(feat, dtype=np.float64)
        r33 = cam.rotation
        tvec = cam.translation
        ccx = -(r33[0, 0] * tvec[0] + r33[1, 0] * tvec[1] + r33[2, 0] * tvec[2])
        ccy = -(r33[0, 1] * tvec[0] + r33[1, 1] * tvec[1] + r33[2, 1] * tvec[2])
        ccz = -(r33[0, 2] * tvec[0] + r33[1, 2] * tvec[1] + r33[2, 2] * tvec[2])
        for res in resolutions:
            u_map = [[[0.0] * nc for _ in range(res)] for _ in range(res)]
            d_map = [[0.0] * res for _ in range(res)]
            c_map = [[0.0] * res for _ in range(res)]
            for row in range(gb.height):
                for col in range(gb.width):
                    if not gb.mask[row, col]:
                        continue
                    u, v = float(gb.uv[row, col, 0]), float(gb.uv[row, col, 1])
                    z = float(gb.depth[row, col])
                    xc = (col + 0.5 - cam.cx) / cam.fx * z
                    yc = (row + 0.5 - cam.cy) / cam.fy * z
                    wx = r33[0, 0] * (xc - tvec[0]) + r33[1, 0] * (yc - tvec[1]) + r33[2, 0] * (z - tvec[2])
                    wy = r33[0, 1] * (xc - tvec[0]) + r33[1, 1] * (yc - tvec[1]) + r33[2, 1] * (z - tvec[2])
                    wz = r33[0, 2] * (xc - tvec[0]) + r33[1, 2] * (yc - tvec[1]) + r33[2, 2] * (z - tvec[2])
                    vx, vy, vz = ccx - wx, ccy - wy, ccz - wz
                    vn = math.sqrt(vx * vx + vy * vy + vz * vz) or 1.0
                    score = (gb.normal[row, col, 0] * vx + gb.normal[row, col, 1] * vy
                             + gb.normal[row, col, 2] * vz) / vn
                    score = max(0.0, score)
                    x = u * res - 0.5
                    y = v * res - 0.5
                    i0, j0 = math.floor(x), math.floor(y)
                    fx, fy = x - i0, y - j0
                    for (ti, tj, w) in (
                        (i0, j0, (1 - fx) * (1 - fy)),
                        (i0 + 1, j0, fx * (1 - fy)),
                        (i0, j0 + 1, (1 - fx) * fy),
                        (i0 + 1, j0 + 1, fx * fy),
                    ):
                        if 0 <= ti < res and 0 <= tj < res:
                            for k in range(nc):
                                u_map[tj][ti][k] += w * float(f[row, col, k])
                            d_map[tj][ti] += w
                            c_map[tj][ti] += w * score
            w_map = [[gamma * c_map[r][c] * d_map[r][c] for c in range(res)] for r in range(res)]
            wu_map = [
                [[w_map[r][c] * u_map[r][c][k] / (d_map[r][c] + eps) for k in range(nc)]
                 for c in range(res)]
                for r in range(res)
            ]
            up_wu = _scalar_upsample(wu_map, big)
            up_w = _scalar_upsample(w_map, big)
            for r in range(big):
                for c in range(big):
                    for k in range(nc):
                        num[r][c][k] += up_wu[r][c][k]
                    den[r][c] += up_w[r][c]

    fused = np.zeros((big, big, nc))
    for r in range(big):
        for c in range(big):
            if den[r][c] <= eps:
                continue
            for k in range(nc):
                fused[r, c, k] = num[r][c][k] / (den[r][c] + eps)
    return fused


def oracle_gradcheck(func, grad_func, point, h: float = 1e-6, coords=None) -> float:
    """Max relative error between grad_func and central finite differences.

    coords optionally restricts the check to a list of flat indices of the
    point array. Relative error uses max(|analytic|, |numeric|, 1e-8).
    """
    x0 = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_func(x0)).reshape(-1)
    flat = x0.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        numeric = (func(xp.reshape(x0.shape)) - func(xm.reshape(x0.shape))) / (2 * h)
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
