"""Semantic-aware normal-guided mesh deformation.

Optimizes per-vertex offsets against multi-view normal maps, landmark
projections with a bilateral symmetry prior, and a spatially-weighted
Laplacian. Visibility is frozen between periodic re-rasterizations, so
gradients flow only through the recomputed normal values (frozen
correspondences); the normal map itself stays differentiable through the
cross-product face normal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BEHIND_EPS,
    BlendModel,
    MeshError,
    TriMesh,
    VertexOffsets,
    deformed_vertices,
    face_normals,
    offsets_array,
    vertex_laplacian,
)
from .raster import GBuffer, rasterize
from .util import parallel_map

logger = logging.getLogger("uvsplat")

DEFAULT_REGION_WEIGHTS = {"face": 0.01, "hair": 1.0, "boundary": 2.0, "other": 0.1}

MIRROR_FLIP = np.array([-1.0, 1.0, 1.0])  # x-negation for the canonical symmetry plane


@dataclass(frozen=True)
class DeformConfig:
    lambda_nml: float = 1.0
    lambda_lmk: float = 0.1
    lambda_lap: float = 0.5
    lr: float = 1e-3
    iters: int = 500
    reraster_every: int = 25
    symmetry_weight: float = 0.1
    region_weights: dict = field(default_factory=lambda: dict(DEFAULT_REGION_WEIGHTS))

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.reraster_every < 1:
            raise ValueError(f"reraster_every must be >= 1, got {self.reraster_every}")
        for name in ("lambda_nml", "lambda_lmk", "lambda_lap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class LandmarkSet:
    """Correspondences (vertex index, camera index, target pixel)."""

    vertex_ids: np.ndarray
    camera_ids: np.ndarray
    targets: np.ndarray  # (L, 2) pixels

    def __post_init__(self):
        v = np.asarray(self.vertex_ids, dtype=np.int64).reshape(-1)
        c = np.asarray(self.camera_ids, dtype=np.int64).reshape(-1)
        t = np.asarray(self.targets, dtype=np.float64).reshape(-1, 2)
        if not (len(v) == len(c) == len(t)):
            raise MeshError("landmark arrays must have equal length")
        object.__setattr__(self, "vertex_ids", v)
        object.__setattr__(self, "camera_ids", c)
        object.__setattr__(self, "targets", t)

    def __len__(self):
        return len(self.vertex_ids)

    @classmethod
    def empty(cls) -> "LandmarkSet":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 2)))

    def validate(self, num_vertices: int, cameras) -> None:
        if len(self) == 0:
            return
        if self.vertex_ids.min() < 0 or self.vertex_ids.max() >= num_vertices:
            raise MeshError("landmark vertex index out of range")
        if self.camera_ids.min() < 0 or self.camera_ids.max() >= len(cameras):
            raise MeshError("landmark camera index out of range")
        for vid, cid, t in zip(self.vertex_ids, self.camera_ids, self.targets):
            cam = cameras[cid]
            if not (0 <= t[0] <= cam.width and 0 <= t[1] <= cam.height):
                raise MeshError(f"landmark target {t} outside {cam.width}x{cam.height} image")


def face_majority_labels(mesh: TriMesh) -> np.ndarray:
    """Deterministic per-face label: the majority corner label, corner 0 on 3-way ties."""
    l0, l1, l2 = (mesh.labels[mesh.faces[:, k]] for k in range(3))
    out = l0.copy()
    out[(l1 == l2) & (l0 != l1)] = l1[(l1 == l2) & (l0 != l1)]
    return out


def semantic_pixel_mask(gbuffer: GBuffer, mesh: TriMesh) -> np.ndarray:
    """True where the frozen face's majority label is not 'face'.

    Restricts normal supervision to non-facial regions; uncovered pixels
    are False.
    """
    maj = face_majority_labels(mesh)
    out = np.zeros((gbuffer.height, gbuffer.width), dtype=bool)
    fid = gbuffer.face_id[gbuffer.mask]
    out[gbuffer.mask] = maj[fid] != "face"
    return out


def _normal_pixel_cache(gbuffers, targets, masks):
    """Flatten per-view pixel data to (face_id, target) pairs under the masks."""
    cache = []
    for gb, target, sem in zip(gbuffers, targets, masks):
        t = np.asarray(target, dtype=np.float64)
        if t.shape != (gb.height, gb.width, 3):
            raise MeshError(f"target map shape {t.shape} != {(gb.height, gb.width, 3)}")
        keep = gb.mask if sem is None else (gb.mask & sem)
        cache.append((gb.face_id[keep], t[keep]))
    return cache


def _normal_loss_from_cache(mesh, positions, cache):
    """Mean squared normal residual over the cached pixels, with gradient.

    Residuals are accumulated per pixel, so an exact fixed point (targets
    equal to the rendered normals) yields bitwise-zero loss and gradient.
    Pixels whose frozen face went degenerate are excluded.
    """
    normals, dn = face_normals(mesh, positions, with_grad=True)
    nondeg = normals.any(axis=1)
    num_faces = mesh.num_faces
    resid_sum = np.zeros((num_faces, 3))
    loss_sum = 0.0
    total = 0
    for fid, t in cache:
        keep = nondeg[fid]
        r = np.where(keep[:, None], normals[fid] - t, 0.0)
        loss_sum += float(np.einsum("pc,pc->", r, r))
        for c in range(3):
            resid_sum[:, c] += np.bincount(fid, weights=r[:, c], minlength=num_faces)
        total += int(keep.sum())
    if total == 0:
        logger.warning("normal_loss: no masked covered pixels; returning zero")
        return 0.0, np.zeros((mesh.num_vertices, 3))
    gcorner = np.einsum("fc,facj->faj", (2.0 / total) * resid_sum, dn)
    grad = np.zeros((mesh.num_vertices, 3))
    np.add.at(grad, mesh.faces.reshape(-1), gcorner.reshape(-1, 3))
    return loss_sum / total, grad


def normal_loss(gbuffers, mesh: TriMesh, positions, targets, masks=None):
    """Mean squared normal error over masked covered pixels, with gradient.

    gbuffers/targets/masks hold one entry per view; masks may be None to
    keep every covered pixel. Rendered normals come from the frozen face
    ids; the gradient flows through the cross-product normals only.
    """
    if masks is None:
        masks = [None] * len(gbuffers)
    v = np.asarray(positions, dtype=np.float64)
    return _normal_loss_from_cache(mesh, v, _normal_pixel_cache(gbuffers, targets, masks))


def _mirror_pairs(mirror: np.ndarray):
    idx = np.arange(len(mirror))
    return idx[idx <= mirror], mirror[idx <= mirror]


def landmark_loss(positions, landmarks: LandmarkSet, cameras, mirror, symmetry_weight: float):
    """Mean squared landmark projection error plus a bilateral symmetry prior.

    The symmetry term averages ||v_i - S v_mirror(i)||^2 over unordered
    mirror pairs (self-pairs included once), S = diag(-1, 1, 1).
    Behind-camera landmarks are excluded with a diagnostic.
    """
    v = np.asarray(positions, dtype=np.float64)
    grad = np.zeros_like(v)
    loss = 0.0

    if len(landmarks):
        pix = np.zeros((len(landmarks), 2))
        jac = np.zeros((len(landmarks), 2, 3))
        ok = np.zeros(len(landmarks), dtype=bool)
        for e, (vid, cid) in enumerate(zip(landmarks.vertex_ids, landmarks.camera_ids)):
            cam = cameras[cid]
            x = cam.rotation @ v[vid] + cam.translation
            if x[2] <= BEHIND_EPS:
                continue
            ok[e] = True
            z = x[2]
            pix[e] = (cam.fx * x[0] / z + cam.cx, cam.fy * x[1] / z + cam.cy)
            jpix = np.array(
                [[cam.fx / z, 0.0, -cam.fx * x[0] / z**2],
                 [0.0, cam.fy / z, -cam.fy * x[1] / z**2]]
            )
            jac[e] = jpix @ cam.rotation
        if not ok.all():
            logger.warning("landmark_loss: %d landmarks behind camera, excluded", int((~ok).sum()))
        m = max(int(ok.sum()), 1)
        resid = np.where(ok[:, None], pix - landmarks.targets, 0.0)
        loss += float(np.einsum("ek,ek->", resid, resid) / m)
        gl = (2.0 / m) * np.einsum("ek,ekj->ej", resid, jac)
        np.add.at(grad, landmarks.vertex_ids, gl)

    if symmetry_weight != 0.0:
        i, j = _mirror_pairs(np.asarray(mirror, dtype=np.int64))
        if len(i):
            d = v[i] - v[j] * MIRROR_FLIP
            sym = float(np.einsum("pk,pk->", d, d) / len(i))
            loss += symmetry_weight * sym
            coeff = 2.0 * symmetry_weight / len(i)
            np.add.at(grad, i, coeff * d)
            np.add.at(grad, j, -coeff * d * MIRROR_FLIP)
    return loss, grad


def lap_weights_from_labels(labels, region_weights: dict) -> np.ndarray:
    return np.array([region_weights.get(lbl, 0.0) for lbl in labels])


def laplacian_loss(mesh: TriMesh, positions, region_weights: dict = None):
    """Sum of w_i ||delta_i||^2 with the exact gradient, neighbor cross-terms included.

    Weights come from region_weights via labels when given, otherwise from
    mesh.lap_weights.
    """
    v = np.asarray(positions, dtype=np.float64)
    w = mesh.lap_weights if region_weights is None else lap_weights_from_labels(mesh.labels, region_weights)
    delta = vertex_laplacian(mesh, v)
    loss = float(np.einsum("i,ik,ik->", w, delta, delta))
    centers, neighbors, degree = mesh.adjacency
    grad = 2.0 * w[:, None] * delta
    if len(centers):
        scale = (2.0 * w / np.maximum(degree, 1))[centers]
        np.add.at(grad, neighbors, -scale[:, None] * delta[centers])
    return loss, grad


def optimize_offsets(model: BlendModel, views, landmarks: LandmarkSet, config: DeformConfig,
                     coeffs=None):
    """Adam descent on per-vertex offsets against normal/landmark/Laplacian losses.

    views is a list of (camera, target_normal_map) pairs; blend coefficients
    are inputs and stay frozen. G-buffers (and with them the semantic pixel
    masks) are refreshed every config.reraster_every iterations. Returns
    (VertexOffsets, trace) where trace rows are (iter, total, nml, lmk, lap).
    Aborts at the last finite state if the loss turns non-finite.
    """
    if not views:
        raise MeshError("optimize_offsets needs at least one view")
    mesh = model.template.with_lap_weights(config.region_weights)
    n = mesh.num_vertices
    coeffs = np.zeros(model.coeffs_dim) if coeffs is None else np.asarray(coeffs, dtype=np.float64)
    landmarks = LandmarkSet.empty() if landmarks is None else landmarks
    cameras = [cam for cam, _ in views]
    targets = [np.asarray(t, dtype=np.float64) for _, t in views]
    landmarks.validate(n, cameras)

    offsets = np.zeros((n, 3))
    m1 = np.zeros_like(offsets)
    m2 = np.zeros_like(offsets)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    trace = []
    cache = None

    for it in range(config.iters):
        positions = deformed_vertices(model, coeffs, offsets)
        if it % config.reraster_every == 0:
            gbuffers = parallel_map(lambda cam: rasterize(mesh, positions, cam), cameras)
            masks = [semantic_pixel_mask(gb, mesh) for gb in gbuffers]
            cache = _normal_pixel_cache(gbuffers, targets, masks)

        l_nml, g_nml = (0.0, 0.0)
        if config.lambda_nml > 0:
            l_nml, g_nml = _normal_loss_from_cache(mesh, positions, cache)
        l_lmk, g_lmk = (0.0, 0.0)
        if config.lambda_lmk > 0:
            l_lmk, g_lmk = landmark_loss(positions, landmarks, cameras, mesh.mirror,
                                         config.symmetry_weight)
        l_lap, g_lap = (0.0, 0.0)
        if config.lambda_lap > 0:
            l_lap, g_lap = laplacian_loss(mesh, positions)

        total = config.lambda_nml * l_nml + config.lambda_lmk * l_lmk + config.lambda_lap * l_lap
        grad = config.lambda_nml * g_nml + config.lambda_lmk * g_lmk + config.lambda_lap * g_lap
        if np.isscalar(grad):  # every lambda zero
            grad = np.zeros_like(offsets)
        if not (np.isfinite(total) and np.isfinite(grad).all()):
            logger.error("optimize_offsets: non-finite loss at iteration %d, aborting", it)
            break
        trace.append((it, total, l_nml, l_lmk, l_lap))

        t = it + 1
        m1 = beta1 * m1 + (1 - beta1) * grad
        m2 = beta2 * m2 + (1 - beta2) * grad * grad
        mhat = m1 / (1 - beta1**t)
        vhat = m2 / (1 - beta2**t)
        offsets = offsets - config.lr * mhat / (np.sqrt(vhat) + adam_eps)

    return VertexOffsets(offsets), np.array(trace, dtype=np.float64).reshape(-1, 5)
