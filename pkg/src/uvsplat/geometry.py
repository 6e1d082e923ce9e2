"""Triangle meshes, linear blendshape deformation, differential operators, cameras.

Positions and displacements are float64 arrays of shape (N, 3) in model units.
Pixel coordinates are continuous, with the center of pixel (row i, col j) at
(j + 0.5, i + 0.5); camera depth is camera-space z, positive in front.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

logger = logging.getLogger("uvsplat")

LABELS = ("face", "hair", "boundary", "other")

BEHIND_EPS = 1e-9
DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Invalid mesh topology, geometry, or attribute data."""


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh with a per-corner UV atlas and per-vertex semantics.

    vertices    (N, 3) float positions
    faces       (F, 3) int vertex indices, distinct per face
    uv_corners  (F, 3, 2) per-face-corner UV in [0, 1]^2
    labels      (N,) semantic tag, one of LABELS
    mirror      (N,) index of the bilateral partner (an involution; self allowed)
    lap_weights (N,) nonnegative smoothing weight w_i
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv_corners: np.ndarray = None
    labels: np.ndarray = None
    mirror: np.ndarray = None
    lap_weights: np.ndarray = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        n = len(v)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

        uv = self.uv_corners
        uv = np.zeros((len(f), 3, 2)) if uv is None else np.asarray(uv, dtype=np.float64)
        if uv.shape != (len(f), 3, 2):
            raise MeshError(f"uv_corners must be (F, 3, 2) = {(len(f), 3, 2)}, got {uv.shape}")
        object.__setattr__(self, "uv_corners", uv)

        labels = self.labels
        labels = np.full(n, "other") if labels is None else np.asarray(labels, dtype="<U8")
        if labels.shape != (n,):
            raise MeshError(f"labels must be ({n},), got {labels.shape}")
        object.__setattr__(self, "labels", labels)

        mirror = self.mirror
        mirror = np.arange(n) if mirror is None else np.asarray(mirror, dtype=np.int64)
        if mirror.shape != (n,):
            raise MeshError(f"mirror must be ({n},), got {mirror.shape}")
        object.__setattr__(self, "mirror", mirror)

        w = self.lap_weights
        w = np.zeros(n) if w is None else np.asarray(w, dtype=np.float64)
        if w.shape != (n,):
            raise MeshError(f"lap_weights must be ({n},), got {w.shape}")
        object.__setattr__(self, "lap_weights", w)

        self.validate()

    def validate(self):
        n = len(self.vertices)
        f = self.faces
        if len(f) and (f.min() < 0 or f.max() >= n):
            raise MeshError(f"face index out of range [0, {n}): min={f.min()}, max={f.max()}")
        if len(f):
            dup = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if dup.any():
                raise MeshError(f"faces with repeated vertices: {np.nonzero(dup)[0][:8].tolist()}")
        if np.nanmin(self.uv_corners, initial=0.0) < -1e-12 or np.nanmax(self.uv_corners, initial=0.0) > 1 + 1e-12:
            raise MeshError("uv_corners outside [0, 1]^2")
        bad = ~np.isin(self.labels, LABELS)
        if bad.any():
            raise MeshError(f"unknown labels: {sorted(set(self.labels[bad]))}")
        m = self.mirror
        if m.min(initial=0) < 0 or m.max(initial=-1) >= n:
            raise MeshError("mirror index out of range")
        if not np.array_equal(m[m], np.arange(n)):
            raise MeshError("mirror map is not an involution")
        if (self.lap_weights < 0).any():
            raise MeshError("lap_weights must be nonnegative")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def adjacency(self):
        """1-ring vertex adjacency as flat (centers, neighbors, degree) arrays.

        centers/neighbors are parallel arrays listing every directed edge once;
        degree[i] is the neighbor count of vertex i (0 for isolated vertices).
        """
        n = self.num_vertices
        if self.num_faces == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.zeros(n, np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        centers = np.concatenate([e[:, 0], e[:, 1]])
        neighbors = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((neighbors, centers))
        centers, neighbors = centers[order], neighbors[order]
        degree = np.bincount(centers, minlength=n)
        return centers, neighbors, degree

    @cached_property
    def isolated_vertices(self) -> np.ndarray:
        """Indices of vertices with no edge neighbors."""
        return np.nonzero(self.adjacency[2] == 0)[0]

    def with_lap_weights(self, region_weights: dict) -> "TriMesh":
        """Copy of the mesh with lap_weights looked up from labels."""
        w = np.array([region_weights.get(lbl, 0.0) for lbl in self.labels])
        return TriMesh(self.vertices, self.faces, self.uv_corners, self.labels, self.mirror, w)


@dataclass(frozen=True)
class VertexOffsets:
    """Per-vertex displacement field, shape (N, 3)."""

    offsets: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=np.float64)
        if o.ndim != 2 or o.shape[1] != 3:
            raise MeshError(f"offsets must be (N, 3), got {o.shape}")
        if not np.isfinite(o).all():
            raise MeshError("offsets contain non-finite values")
        object.__setattr__(self, "offsets", o)

    @classmethod
    def zeros(cls, n: int) -> "VertexOffsets":
        return cls(np.zeros((n, 3)))


def offsets_array(offsets, n: int) -> np.ndarray:
    """Coerce VertexOffsets or array-like to a validated (n, 3) float array."""
    o = offsets.offsets if isinstance(offsets, VertexOffsets) else np.asarray(offsets, dtype=np.float64)
    if o.shape != (n, 3):
        raise MeshError(f"offsets shape {o.shape} does not match vertex count {n} (expected {(n, 3)})")
    return o


@dataclass(frozen=True)
class BlendModel:
    """Template mesh plus a linear displacement basis.

    basis has shape (K, N, 3): K displacement fields over the N template vertices.
    """

    template: TriMesh
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=np.float64)
        if b.ndim == 2 and b.size == 0:
            b = b.reshape(0, self.template.num_vertices, 3)
        if b.ndim != 3 or b.shape[1:] != (self.template.num_vertices, 3):
            raise MeshError(
                f"basis must be (K, {self.template.num_vertices}, 3), got {b.shape}"
            )
        object.__setattr__(self, "basis", b)

    @property
    def coeffs_dim(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera rotation/translation plus intrinsics in pixels.

    Projection: x_cam = R @ p + t; pixel = (fx * x/z + cx, fy * y/z + cy); depth = z.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise MeshError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise MeshError(f"image size must be >= 1, got {self.width}x{self.height}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise MeshError("rotation is not orthonormal within 1e-9")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def deformed_vertices(model: BlendModel, coeffs, offsets) -> np.ndarray:
    """V' = template + sum_j coeffs_j * basis_j + offsets."""
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if c.shape[0] != model.coeffs_dim:
        raise MeshError(f"coeffs length {c.shape[0]} does not match basis count {model.coeffs_dim}")
    o = offsets_array(offsets, model.template.num_vertices)
    out = model.template.vertices + o
    if model.coeffs_dim:
        out = out + np.tensordot(c, model.basis, axes=1)
    return out


def vertex_laplacian(mesh: TriMesh, positions) -> np.ndarray:
    """Uniform Laplacian coordinates: delta_i = v_i - mean of 1-ring neighbors.

    Isolated vertices get delta = 0 and are listed in mesh.isolated_vertices.
    """
    v = np.asarray(positions, dtype=np.float64)
    if v.shape != (mesh.num_vertices, 3):
        raise MeshError(f"positions shape {v.shape} != {(mesh.num_vertices, 3)}")
    centers, neighbors, degree = mesh.adjacency
    acc = np.zeros_like(v)
    np.add.at(acc, centers, v[neighbors])
    deg = np.maximum(degree, 1)[:, None]
    delta = v - acc / deg
    if len(mesh.isolated_vertices):
        logger.warning("vertex_laplacian: %d isolated vertices set to zero", len(mesh.isolated_vertices))
        delta[mesh.isolated_vertices] = 0.0
    return delta


def _skew(a: np.ndarray) -> np.ndarray:
    """(..., 3) -> (..., 3, 3) with skew(a) @ x = a cross x."""
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., 0, 1] = -a[..., 2]
    out[..., 0, 2] = a[..., 1]
    out[..., 1, 0] = a[..., 2]
    out[..., 1, 2] = -a[..., 0]
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def face_normals(mesh: TriMesh, positions, with_grad: bool = False):
    """Unit face normals by the right-hand rule over face winding.

    Degenerate faces (area <= 1e-12) get normal (0,0,0) and zero gradient.
    With with_grad=True also returns grad of shape (F, 3, 3, 3) where
    grad[f, k, c, j] = d normal_c / d vertex_k_coord_j for corner k of face f.
    """
    v = np.asarray(positions, dtype=np.float64)
    tri = v[mesh.faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    m = np.cross(e1, e2)
    norm = np.linalg.norm(m, axis=1)
    ok = norm > 2.0 * DEGENERATE_AREA
    if not ok.all():
        logger.warning("face_normals: %d degenerate faces", int((~ok).sum()))
    safe = np.where(ok, norm, 1.0)
    n = m / safe[:, None]
    n[~ok] = 0.0
    if not with_grad:
        return n

    # dn/dm = (I - n n^T)/|m|; dm/dv0 = [e2-e1]x, dm/dv1 = -[e2]x, dm/dv2 = [e1]x
    proj = (np.eye(3) - n[:, :, None] * n[:, None, :]) / safe[:, None, None]
    dm = np.stack([_skew(e2 - e1), -_skew(e2), _skew(e1)], axis=1)
    grad = np.einsum("fck,fakj->facj", proj, dm)
    grad[~ok] = 0.0
    return n, grad


def project(camera: Camera, point3):
    """Project a single world point; returns (pixel (2,), depth).

    Behind-camera points (depth <= 1e-9) get pixel (nan, nan); callers exclude
    them from losses.
    """
    p = np.asarray(point3, dtype=np.float64).reshape(3)
    x = camera.rotation @ p + camera.translation
    z = x[2]
    if z <= BEHIND_EPS:
        return np.array([np.nan, np.nan]), z
    return np.array([camera.fx * x[0] / z + camera.cx, camera.fy * x[1] / z + camera.cy]), z


def project_points(camera: Camera, points):
    """Vectorized projection; returns (pixels (M, 2), depths (M,), valid (M,))."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x = p @ camera.rotation.T + camera.translation
    z = x[:, 2]
    valid = z > BEHIND_EPS
    zsafe = np.where(valid, z, 1.0)
    pix = np.stack(
        [camera.fx * x[:, 0] / zsafe + camera.cx, camera.fy * x[:, 1] / zsafe + camera.cy], axis=1
    )
    pix[~valid] = np.nan
    return pix, z, valid


SIX_VIEW_AZIMUTHS_DEG = (0.0, 60.0, -60.0, 120.0, -120.0, 180.0)


def look_at_camera(position, target, width: int, height: int, focal: float, up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at `position` aimed at `target`, x right / y down / z forward."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    x_axis = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x_axis)
    if nx < 1e-12:
        x_axis = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nx = np.linalg.norm(x_axis)
    x_axis = x_axis / nx
    y_axis = np.cross(fwd, x_axis)
    r = np.stack([x_axis, y_axis, fwd])
    return Camera(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=r,
        translation=-r @ position,
        width=width,
        height=height,
    )


def six_view_rig(distance: float, look_at, width: int = 256, height: int = 256, fov_deg: float = 45.0):
    """Six cameras at azimuths {0, +-60, +-120, 180} degrees, elevation 0, aimed at look_at.

    Azimuth 0 places the camera on the +z side looking down -z. The pose layout
    is a convention of this artifact; only the view count is externally fixed.
    """
    if distance <= 0:
        raise MeshError(f"rig distance must be positive, got {distance}")
    target = np.asarray(look_at, dtype=np.float64).reshape(3)
    focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    cams = []
    for az in SIX_VIEW_AZIMUTHS_DEG:
        a = math.radians(az)
        pos = target + distance * np.array([math.sin(a), 0.0, math.cos(a)])
        cams.append(look_at_camera(pos, target, width, height, focal))
    return cams
