"""Mesh-anchored splat primitives: anchoring, reposing, and a toy compositor.

Splats bind either to a mesh vertex or to a surface point (face index plus
barycentric coordinates found by inverting the UV atlas). Reposing moves the
underlying mesh and recomputes anchor positions; local offsets ride a
per-anchor tangent frame so rigid mesh motion moves every splat rigidly.
Rendering projects isotropic discs with Gaussian falloff and composites
front to back in strict depth order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import BEHIND_EPS, BlendModel, Camera, MeshError, TriMesh, deformed_vertices

logger = logging.getLogger("uvsplat")

ANCHOR_VERTEX = 0
ANCHOR_SURFACE = 1

NOT_COVERED = None
_BARY_TOL = 1e-12


@dataclass(frozen=True)
class GaussianSet:
    """Anchored isotropic splats.

    kind        (M,) ANCHOR_VERTEX or ANCHOR_SURFACE
    index       (M,) vertex index, or face index for surface anchors
    bary        (M, 3) barycentric coordinates (unused rows are zero)
    frame_face  (M,) face providing the local tangent frame
    offsets     (M, 3) displacement in the local frame (t1, t2, normal)
    scale       (M,) isotropic radius in model units, > 0
    opacity     (M,) alpha in [0, 1]
    color       (M, 3) rgb in [0, 1]
    """

    kind: np.ndarray
    index: np.ndarray
    bary: np.ndarray
    frame_face: np.ndarray
    offsets: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        m = len(self.kind)
        for name, arr, shape in (
            ("kind", self.kind, (m,)),
            ("index", self.index, (m,)),
            ("bary", self.bary, (m, 3)),
            ("frame_face", self.frame_face, (m,)),
            ("offsets", self.offsets, (m, 3)),
            ("scale", self.scale, (m,)),
            ("opacity", self.opacity, (m,)),
            ("color", self.color, (m, 3)),
        ):
            a = np.asarray(arr)
            if a.shape != shape:
                raise MeshError(f"GaussianSet.{name} must have shape {shape}, got {a.shape}")
            object.__setattr__(self, name, a)
        if m == 0:
            return
        surf = self.kind == ANCHOR_SURFACE
        if surf.any():
            b = self.bary[surf]
            if (b < -1e-9).any() or np.abs(b.sum(axis=1) - 1).max() > 1e-6:
                raise MeshError("surface anchor barycentrics must be >= 0 and sum to 1")
        if (self.scale <= 0).any():
            raise MeshError("scale must be positive")
        if (self.opacity < 0).any() or (self.opacity > 1).any():
            raise MeshError("opacity must be in [0, 1]")
        if (self.color < 0).any() or (self.color > 1).any():
            raise MeshError("color must be in [0, 1]")

    def __len__(self):
        return len(self.kind)


class UVTriangleIndex:
    """Point-in-triangle lookup over the mesh's UV atlas.

    Precomputes per-face UV bounding boxes and inverse edge matrices; queries
    test candidate faces in ascending index order, so overlapping charts
    resolve deterministically to the lowest face index.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        uv = mesh.uv_corners
        self.q0 = uv[:, 0]
        e1 = uv[:, 1] - uv[:, 0]
        e2 = uv[:, 2] - uv[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.valid = np.abs(det) > 1e-14
        det_safe = np.where(self.valid, det, 1.0)
        # inverse of [e1 e2] as rows (a, b; c, d): bary1 = a*dx + b*dy, bary2 = c*dx + d*dy
        self.inv = np.stack(
            [
                np.stack([e2[:, 1] / det_safe, -e2[:, 0] / det_safe], axis=1),
                np.stack([-e1[:, 1] / det_safe, e1[:, 0] / det_safe], axis=1),
            ],
            axis=1,
        )
        self.lo = uv.min(axis=1)
        self.hi = uv.max(axis=1)

    def query(self, uv_point):
        """Locate one UV point; returns (face, bary (3,)) or NOT_COVERED."""
        face, bary = self.query_batch(np.asarray(uv_point, dtype=np.float64).reshape(1, 2))
        if face[0] < 0:
            return NOT_COVERED
        return int(face[0]), bary[0]

    def query_batch(self, uvs: np.ndarray):
        """Vectorized lookup; faces are -1 where no chart covers the point."""
        uvs = np.asarray(uvs, dtype=np.float64).reshape(-1, 2)
        faces = np.full(len(uvs), -1, dtype=np.int64)
        bary = np.zeros((len(uvs), 3))
        open_pts = np.arange(len(uvs))
        for f in range(self.mesh.num_faces):
            if not self.valid[f] or not len(open_pts):
                continue
            p = uvs[open_pts]
            inbox = (
                (p[:, 0] >= self.lo[f, 0] - _BARY_TOL)
                & (p[:, 0] <= self.hi[f, 0] + _BARY_TOL)
                & (p[:, 1] >= self.lo[f, 1] - _BARY_TOL)
                & (p[:, 1] <= self.hi[f, 1] + _BARY_TOL)
            )
            if not inbox.any():
                continue
            d = p[inbox] - self.q0[f]
            b12 = d @ self.inv[f].T
            b0 = 1.0 - b12.sum(axis=1)
            inside = (b12[:, 0] >= -_BARY_TOL) & (b12[:, 1] >= -_BARY_TOL) & (b0 >= -_BARY_TOL)
            if not inside.any():
                continue
            hit = open_pts[inbox][inside]
            b = np.concatenate([b0[inside, None], b12[inside]], axis=1)
            b = np.clip(b, 0.0, None)
            b /= b.sum(axis=1, keepdims=True)
            faces[hit] = f
            bary[hit] = b
            open_pts = open_pts[faces[open_pts] < 0]
        return faces, bary


def uv_to_surface(mesh: TriMesh, uv_point, index: UVTriangleIndex = None):
    """Map a UV point to (face index, barycentric) or NOT_COVERED in chart gaps."""
    uv = np.asarray(uv_point, dtype=np.float64).reshape(2)
    if (uv < 0).any() or (uv > 1).any():
        raise MeshError(f"uv point {uv} outside [0, 1]^2")
    index = UVTriangleIndex(mesh) if index is None else index
    return index.query(uv)


def _anchor_frames(mesh: TriMesh, positions: np.ndarray, frame_face: np.ndarray) -> np.ndarray:
    """(M, 3, 3) orthonormal frames (t1, t2, n) of the referenced faces."""
    tri = positions[mesh.faces[frame_face]]
    t1 = tri[:, 1] - tri[:, 0]
    t1 = t1 / np.maximum(np.linalg.norm(t1, axis=1, keepdims=True), 1e-30)
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=1)


def _vertex_frame_faces(mesh: TriMesh) -> np.ndarray:
    """Lowest-index incident face per vertex (deterministic local frames)."""
    out = np.full(mesh.num_vertices, -1, dtype=np.int64)
    for f in range(mesh.num_faces - 1, -1, -1):
        out[mesh.faces[f]] = f
    if (out < 0).any():
        out[out < 0] = 0  # unreferenced vertices fall back to face 0
    return out


def build_gaussians(mesh: TriMesh, positions, uv_attribute_map, vertex_colors=None,
                    vertex_scale: float = None, vertex_opacity: float = 1.0) -> GaussianSet:
    """One splat per mesh vertex plus one per covered UV texel with opacity > 0.

    uv_attribute_map is (R, R, 5): rgb, opacity, scale (model units) sampled at
    texel centers through the UV atlas. Vertex splats take color from
    vertex_colors (gray default) and the given scale/opacity; scale defaults
    to 2% of the bounding-box diagonal. Offsets start at zero.
    """
    v = np.asarray(positions, dtype=np.float64)
    attrs = np.asarray(uv_attribute_map, dtype=np.float64)
    if attrs.ndim != 3 or attrs.shape[0] != attrs.shape[1] or attrs.shape[2] != 5:
        raise MeshError(f"uv_attribute_map must be (R, R, 5), got {attrs.shape}")
    if not np.isfinite(attrs).all():
        raise MeshError("uv_attribute_map contains non-finite values")
    if attrs[:, :, 3].min() < 0 or attrs[:, :, 3].max() > 1:
        raise MeshError("opacity channel must be in [0, 1]")
    res = attrs.shape[0]

    if vertex_scale is None:
        diag = np.linalg.norm(v.max(axis=0) - v.min(axis=0)) if len(v) else 1.0
        vertex_scale = max(0.02 * diag, 1e-6)
    colors = np.full((len(v), 3), 0.5) if vertex_colors is None else np.clip(
        np.asarray(vertex_colors, dtype=np.float64).reshape(len(v), 3), 0.0, 1.0
    )
    vert_frames = _vertex_frame_faces(mesh)

    centers = (np.arange(res) + 0.5) / res
    uu, vv = np.meshgrid(centers, centers)  # row-major texel centers, row = v
    texel_uv = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    index = UVTriangleIndex(mesh)
    faces, bary = index.query_batch(texel_uv)
    flat = attrs.reshape(-1, 5)
    keep = (faces >= 0) & (flat[:, 3] > 0) & (flat[:, 4] > 0)

    n_vert = mesh.num_vertices
    n_surf = int(keep.sum())
    kind = np.concatenate([np.full(n_vert, ANCHOR_VERTEX), np.full(n_surf, ANCHOR_SURFACE)])
    idx = np.concatenate([np.arange(n_vert), faces[keep]])
    b = np.concatenate([np.zeros((n_vert, 3)), bary[keep]])
    frame = np.concatenate([vert_frames, faces[keep]])
    scale = np.concatenate([np.full(n_vert, vertex_scale), flat[keep, 4]])
    opacity = np.concatenate([np.full(n_vert, float(vertex_opacity)), flat[keep, 3]])
    color = np.concatenate([colors, np.clip(flat[keep, :3], 0.0, 1.0)])
    return GaussianSet(
        kind=kind, index=idx, bary=b, frame_face=frame,
        offsets=np.zeros((len(kind), 3)), scale=scale, opacity=opacity, color=color,
    )


def resolve_positions(gaussians: GaussianSet, mesh: TriMesh, positions) -> np.ndarray:
    """World positions of all splats for the given mesh vertex positions."""
    v = np.asarray(positions, dtype=np.float64)
    out = np.zeros((len(gaussians), 3))
    vert = gaussians.kind == ANCHOR_VERTEX
    out[vert] = v[gaussians.index[vert]]
    surf = ~vert
    if surf.any():
        tri = v[mesh.faces[gaussians.index[surf]]]
        out[surf] = np.einsum("pk,pkc->pc", gaussians.bary[surf], tri)
    if gaussians.offsets.any():
        frames = _anchor_frames(mesh, v, gaussians.frame_face)
        out = out + np.einsum("pk,pkc->pc", gaussians.offsets, frames)
    return out


def drive(gaussians: GaussianSet, model: BlendModel, coeffs, offsets):
    """Repose splats by deforming the underlying mesh; attributes unchanged.

    Returns (positions (M, 3), deformed mesh vertex positions).
    """
    v = deformed_vertices(model, coeffs, offsets)
    return resolve_positions(gaussians, model.template, v), v


def render_gaussians(gaussians: GaussianSet, world_positions, camera: Camera) -> np.ndarray:
    """Composite projected splat discs front to back; returns (H, W, 4) RGBA.

    Each splat covers a disc of radius scale * fx / depth pixels with
    Gaussian falloff exp(-d^2 / (2 sigma^2)), sigma = radius / 2. Splats are
    processed in strict depth order with index as the deterministic
    tie-break; behind-camera splats are skipped.
    """
    pos = np.asarray(world_positions, dtype=np.float64).reshape(-1, 3)
    if len(pos) != len(gaussians):
        raise MeshError(f"positions count {len(pos)} != splat count {len(gaussians)}")
    img = np.zeros((camera.height, camera.width, 4))
    if len(pos) == 0:
        return img
    x = pos @ camera.rotation.T + camera.translation
    z = x[:, 2]
    front = z > BEHIND_EPS
    order = np.lexsort((np.arange(len(pos)), z))
    order = order[front[order]]

    transmit = np.ones((camera.height, camera.width))
    for s in order:
        depth = z[s]
        px = camera.fx * x[s, 0] / depth + camera.cx
        py = camera.fy * x[s, 1] / depth + camera.cy
        radius = gaussians.scale[s] * camera.fx / depth
        sigma = radius / 2.0
        x0 = max(int(np.ceil(px - radius - 0.5)), 0)
        x1 = min(int(np.floor(px + radius - 0.5)), camera.width - 1)
        y0 = max(int(np.ceil(py - radius - 0.5)), 0)
        y1 = min(int(np.floor(py + radius - 0.5)), camera.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        gx = np.arange(x0, x1 + 1) + 0.5
        gy = np.arange(y0, y1 + 1) + 0.5
        d2 = (gx[None, :] - px) ** 2 + (gy[:, None] - py) ** 2
        cover = d2 <= radius * radius
        if not cover.any():
            continue
        w = np.zeros_like(d2)
        w[cover] = gaussians.opacity[s] * np.exp(-d2[cover] / (2.0 * sigma * sigma))
        t = transmit[y0:y1 + 1, x0:x1 + 1]
        contrib = t * w
        img[y0:y1 + 1, x0:x1 + 1, :3] += contrib[:, :, None] * gaussians.color[s]
        img[y0:y1 + 1, x0:x1 + 1, 3] += contrib
        transmit[y0:y1 + 1, x0:x1 + 1] = t * (1.0 - w)
    return img
