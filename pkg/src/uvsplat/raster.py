"""Deterministic software rasterizer producing per-pixel G-buffers.

Pixel centers sit at (col + 0.5, row + 0.5). Coverage uses a top-left fill
rule so shared edges are owned by exactly one triangle. Barycentrics are
computed in the projected 2D triangle and perspective-corrected by vertex
depth, so the interpolated 3D point reprojects onto the pixel center.
Per-pixel normals are flat face normals; visibility gradients are not
modeled (frozen-correspondence scheme, see deform).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import BEHIND_EPS, Camera, MeshError, TriMesh, face_normals, project_points

logger = logging.getLogger("uvsplat")

EMPTY = -1


@dataclass
class GBuffer:
    """Per-pixel raster output. Where mask is unset, face_id == EMPTY."""

    width: int
    height: int
    face_id: np.ndarray  # (H, W) int32, EMPTY where uncovered
    bary: np.ndarray     # (H, W, 3) perspective-corrected, >= 0, sums to 1
    uv: np.ndarray       # (H, W, 2) in [0, 1]^2
    normal: np.ndarray   # (H, W, 3) unit face normal
    depth: np.ndarray    # (H, W) camera-space z > 0
    mask: np.ndarray     # (H, W) bool coverage

    @classmethod
    def empty(cls, width: int, height: int) -> "GBuffer":
        return cls(
            width=width,
            height=height,
            face_id=np.full((height, width), EMPTY, dtype=np.int32),
            bary=np.zeros((height, width, 3)),
            uv=np.zeros((height, width, 2)),
            normal=np.zeros((height, width, 3)),
            depth=np.zeros((height, width)),
            mask=np.zeros((height, width), dtype=bool),
        )

    def pixel_rays(self, camera: Camera):
        """World-space surface points reconstructed from depth, covered pixels only.

        Returns (points (M, 3), rows (M,), cols (M,)) in row-major pixel order.
        """
        rows, cols = np.nonzero(self.mask)
        z = self.depth[rows, cols]
        px = cols + 0.5
        py = rows + 0.5
        x_cam = np.stack(
            [(px - camera.cx) / camera.fx * z, (py - camera.cy) / camera.fy * z, z], axis=1
        )
        pts = (x_cam - camera.translation) @ camera.rotation
        return pts, rows, cols


def _top_left(ax, ay, bx, by) -> bool:
    # Edge a->b of a screen-clockwise triangle in y-down pixel coords.
    dy = by - ay
    dx = bx - ax
    return dy < 0 or (dy == 0 and dx > 0)


def rasterize(mesh: TriMesh, positions, camera: Camera) -> GBuffer:
    """Rasterize the mesh; nearest face by depth wins, back faces culled.

    Faces with any vertex behind the camera (z <= 1e-9) are skipped entirely;
    near-plane clipping is not implemented. Degenerate faces are skipped.
    """
    v = np.asarray(positions, dtype=np.float64)
    if v.shape != (mesh.num_vertices, 3):
        raise MeshError(f"positions shape {v.shape} != {(mesh.num_vertices, 3)}")
    gb = GBuffer.empty(camera.width, camera.height)
    if mesh.num_faces == 0:
        return gb

    pix, z, valid = project_points(camera, v)
    normals = face_normals(mesh, v)
    zbuf = np.full((camera.height, camera.width), np.inf)

    for f in range(mesh.num_faces):
        i0, i1, i2 = mesh.faces[f]
        if not (valid[i0] and valid[i1] and valid[i2]):
            continue
        if not normals[f].any():  # degenerate in 3D
            continue
        # Reorder to screen-clockwise (positive doubled area in y-down coords).
        p0, p1, p2 = pix[i0], pix[i1], pix[i2]
        area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if area2 >= 0:  # back-facing or edge-on
            continue
        a, b, c = p0, p2, p1
        area2 = -area2

        xmin = max(int(np.ceil(min(a[0], b[0], c[0]) - 0.5)), 0)
        xmax = min(int(np.floor(max(a[0], b[0], c[0]) - 0.5)), camera.width - 1)
        ymin = max(int(np.ceil(min(a[1], b[1], c[1]) - 0.5)), 0)
        ymax = min(int(np.floor(max(a[1], b[1], c[1]) - 0.5)), camera.height - 1)
        if xmin > xmax or ymin > ymax:
            continue

        px = np.arange(xmin, xmax + 1) + 0.5
        py = np.arange(ymin, ymax + 1) + 0.5
        gx, gy = np.meshgrid(px, py)

        # Edge functions opposite each reordered corner; interior is positive.
        wa = (c[0] - b[0]) * (gy - b[1]) - (c[1] - b[1]) * (gx - b[0])
        wb = (a[0] - c[0]) * (gy - c[1]) - (a[1] - c[1]) * (gx - c[0])
        wc = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])
        inside = (
            ((wa > 0) | ((wa == 0) & _top_left(b[0], b[1], c[0], c[1])))
            & ((wb > 0) | ((wb == 0) & _top_left(c[0], c[1], a[0], a[1])))
            & ((wc > 0) | ((wc == 0) & _top_left(a[0], a[1], b[0], b[1])))
        )
        if not inside.any():
            continue

        rows, cols = np.nonzero(inside)
        # (wa, wc, wb) puts the 2D barycentrics back in face corner order (i0, i1, i2):
        # a = p0, c = p1, b = p2 after the clockwise reorder.
        b2d = np.stack([wa[rows, cols], wc[rows, cols], wb[rows, cols]], axis=1) / area2
        zs = np.array([z[i0], z[i1], z[i2]])
        bz = b2d / zs
        denom = bz.sum(axis=1)
        bary = bz / denom[:, None]
        depth = 1.0 / denom

        yy = rows + ymin
        xx = cols + xmin
        closer = depth < zbuf[yy, xx]
        if not closer.any():
            continue
        yy, xx = yy[closer], xx[closer]
        zbuf[yy, xx] = depth[closer]
        gb.face_id[yy, xx] = f
        gb.bary[yy, xx] = bary[closer]
        gb.uv[yy, xx] = np.einsum("pk,kc->pc", bary[closer], mesh.uv_corners[f])
        gb.normal[yy, xx] = normals[f]
        gb.depth[yy, xx] = depth[closer]
        gb.mask[yy, xx] = True

    return gb


def render_normal_map(gbuffer: GBuffer, mesh: TriMesh, positions) -> np.ndarray:
    """(H, W, 3) world-space flat normals under the buffer's frozen face ids.

    Normals are recomputed from the current positions, so the map is
    differentiable through the cross-product normal while visibility stays
    fixed. Pixels whose frozen face went degenerate render as (0,0,0).
    """
    n = face_normals(mesh, positions)
    out = np.zeros((gbuffer.height, gbuffer.width, 3))
    out[gbuffer.mask] = n[gbuffer.face_id[gbuffer.mask]]
    return out


def render_normal_map_vjp(gbuffer: GBuffer, mesh: TriMesh, positions, grad_image) -> np.ndarray:
    """Vector-Jacobian product of render_normal_map w.r.t. positions.

    grad_image is (H, W, 3); returns (N, 3). Correspondences (face ids) are
    frozen; only the normal values are differentiated. Pixels on degenerate
    faces contribute nothing.
    """
    g = np.asarray(grad_image, dtype=np.float64)
    if g.shape != (gbuffer.height, gbuffer.width, 3):
        raise MeshError(f"grad_image shape {g.shape} != {(gbuffer.height, gbuffer.width, 3)}")
    _, dn = face_normals(mesh, positions, with_grad=True)
    fid = gbuffer.face_id[gbuffer.mask]
    # Per-face accumulated normal cotangents, then one chain-rule contraction.
    gn = np.zeros((mesh.num_faces, 3))
    np.add.at(gn, fid, g[gbuffer.mask])
    gcorner = np.einsum("fc,facj->faj", gn, dn)
    out = np.zeros((mesh.num_vertices, 3))
    np.add.at(out, mesh.faces.reshape(-1), gcorner.reshape(-1, 3))
    return out
