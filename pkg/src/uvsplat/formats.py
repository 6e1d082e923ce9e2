"""File formats: UVT tensors, PFM float maps, OBJ meshes, sidecars, previews.

UVT is the project's little-endian tensor container: magic "UVT1", a u32
dimension count, u32 dims, then float32 payload in row-major order with the
last dimension fastest. Loaders reject bad magic, truncated payloads, and
non-finite values, reporting the byte or line offset of the problem.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .anchor import GaussianSet
from .deform import DeformConfig, LandmarkSet
from .geometry import LABELS, Camera, TriMesh
from .raster import EMPTY, GBuffer
from .splat import FusionConfig

UVT_MAGIC = b"UVT1"


class FormatError(ValueError):
    """Malformed file; message carries the path and byte/line offset."""

    def __init__(self, path, message, byte=None, line=None):
        where = f"{path}"
        if byte is not None:
            where += f" (byte {byte})"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.byte = byte
        self.line = line


# ---------------------------------------------------------------- UVT tensors

def save_uvt(path, array) -> None:
    arr = np.asarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(UVT_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_uvt(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(path, "truncated header", byte=len(data))
    if data[:4] != UVT_MAGIC:
        raise FormatError(path, f"bad magic {data[:4]!r}, expected {UVT_MAGIC!r}", byte=0)
    (ndim,) = struct.unpack_from("<I", data, 4)
    if ndim > 16:
        raise FormatError(path, f"implausible ndim {ndim}", byte=4)
    head = 8 + 4 * ndim
    if len(data) < head:
        raise FormatError(path, "truncated dims", byte=len(data))
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expect = head + 4 * count
    if len(data) != expect:
        raise FormatError(path, f"payload is {len(data) - head} bytes, expected {4 * count}",
                          byte=min(len(data), expect))
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=head).reshape(dims)
    bad = ~np.isfinite(arr)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise FormatError(path, "non-finite payload value", byte=head + 4 * first)
    return arr.astype(np.float64)


# ------------------------------------------------------------------ PFM maps

def save_pfm(path, array) -> None:
    """Store a (H, W) or (H, W, 3) float map as little-endian PFM (bottom-up rows)."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM stores (H, W) or (H, W, 3), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def load_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise FormatError(path, "truncated header", byte=len(data))
    kind, dims, scale, payload = parts
    if kind not in (b"PF", b"Pf"):
        raise FormatError(path, f"bad magic {kind!r}", byte=0)
    try:
        w, h = (int(x) for x in dims.split())
        scale_val = float(scale)
    except ValueError as exc:
        raise FormatError(path, f"malformed header: {exc}", line=2) from None
    if scale_val >= 0:
        raise FormatError(path, "big-endian PFM not supported (scale must be negative)", line=3)
    channels = 3 if kind == b"PF" else 1
    count = w * h * channels
    if len(payload) != 4 * count:
        raise FormatError(path, f"payload is {len(payload)} bytes, expected {4 * count}",
                          byte=len(data) - len(payload))
    arr = np.frombuffer(payload, dtype="<f4", count=count)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))[::-1]
    bad = ~np.isfinite(arr)
    if bad.any():
        raise FormatError(path, "non-finite payload value",
                          byte=len(data) - len(payload) + 4 * int(np.flatnonzero(bad)[0]))
    return arr.astype(np.float64)


# ----------------------------------------------------------------- OBJ meshes

def save_obj(path, mesh: TriMesh, positions=None) -> None:
    """Write v/vt/f records; positions override the mesh's stored vertices."""
    v = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in v]
    uv = mesh.uv_corners.reshape(-1, 2)
    lines += [f"vt {u:.9g} {w:.9g}" for u, w in uv]
    for f, tri in enumerate(mesh.faces):
        t = 3 * f
        lines.append(f"f {tri[0] + 1}/{t + 1} {tri[1] + 1}/{t + 2} {tri[2] + 1}/{t + 3}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    verts, uvs, faces, face_uv = [], [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vt":
                uvs.append([float(x) for x in tok[1:3]])
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ValueError("only triangles are supported")
                vi, ti = [], []
                for part in tok[1:]:
                    fields = part.split("/")
                    vi.append(int(fields[0]) - 1)
                    ti.append(int(fields[1]) - 1 if len(fields) > 1 and fields[1] else -1)
                faces.append(vi)
                face_uv.append(ti)
        except (ValueError, IndexError) as exc:
            raise FormatError(path, f"malformed record {line!r}: {exc}", line=lineno) from None
    if not verts:
        raise FormatError(path, "no vertices", line=1)
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    uv_corners = np.zeros((len(faces), 3, 2))
    if uvs:
        uvs = np.asarray(uvs, dtype=np.float64)
        for f, ti in enumerate(face_uv):
            for k, t in enumerate(ti):
                if t >= 0:
                    uv_corners[f, k] = uvs[t]
    return TriMesh(verts, faces, np.clip(uv_corners, 0.0, 1.0))


# ------------------------------------------------------------------ sidecars

def save_labels(path, mesh: TriMesh) -> None:
    """One 'vertex_index label mirror_index weight' line per vertex."""
    lines = [
        f"{i} {mesh.labels[i]} {mesh.mirror[i]} {mesh.lap_weights[i]:.9g}"
        for i in range(mesh.num_vertices)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_labels(path, num_vertices: int):
    labels = np.full(num_vertices, "other", dtype="<U8")
    mirror = np.arange(num_vertices)
    weights = np.zeros(num_vertices)
    seen = np.zeros(num_vertices, dtype=bool)
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            idx = int(tok[0])
            label, mi, w = tok[1], int(tok[2]), float(tok[3])
        except (ValueError, IndexError) as exc:
            raise FormatError(path, f"malformed label line: {exc}", line=lineno) from None
        if not 0 <= idx < num_vertices:
            raise FormatError(path, f"vertex index {idx} out of range [0, {num_vertices})", line=lineno)
        if label not in LABELS:
            raise FormatError(path, f"unknown label {label!r}", line=lineno)
        if not 0 <= mi < num_vertices:
            raise FormatError(path, f"mirror index {mi} out of range", line=lineno)
        if w < 0:
            raise FormatError(path, f"negative weight {w}", line=lineno)
        labels[idx], mirror[idx], weights[idx] = label, mi, w
        seen[idx] = True
    if not seen.all():
        raise FormatError(path, f"{int((~seen).sum())} vertices missing from label file", line=1)
    return labels, mirror, weights


def apply_labels(mesh: TriMesh, path) -> TriMesh:
    labels, mirror, weights = load_labels(path, mesh.num_vertices)
    return TriMesh(mesh.vertices, mesh.faces, mesh.uv_corners, labels, mirror, weights)


def save_landmarks(path, landmarks: LandmarkSet) -> None:
    lines = [
        f"{v} {c} {t[0]:.9g} {t[1]:.9g}"
        for v, c, t in zip(landmarks.vertex_ids, landmarks.camera_ids, landmarks.targets)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_landmarks(path) -> LandmarkSet:
    vids, cids, targets = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            vids.append(int(tok[0]))
            cids.append(int(tok[1]))
            targets.append((float(tok[2]), float(tok[3])))
        except (ValueError, IndexError) as exc:
            raise FormatError(path, f"malformed landmark line: {exc}", line=lineno) from None
    return LandmarkSet(np.array(vids, np.int64), np.array(cids, np.int64),
                       np.array(targets, np.float64).reshape(-1, 2))


# ------------------------------------------------------------------- cameras

_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "width", "height",
                "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
                "tx", "ty", "tz")


def save_camera(path, camera: Camera) -> None:
    r = camera.rotation
    t = camera.translation
    vals = {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        **{f"r{i}{j}": r[i, j] for i in range(3) for j in range(3)},
        "tx": t[0], "ty": t[1], "tz": t[2],
    }
    Path(path).write_text("".join(f"{k} = {vals[k]:.17g}\n" for k in _CAMERA_KEYS))


def load_camera(path) -> Camera:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        vals = json.loads(text)
    else:
        vals = parse_kv_text(text, path)
    missing = [k for k in _CAMERA_KEYS if k not in vals]
    if missing:
        raise FormatError(path, f"missing camera keys {missing}", line=1)
    try:
        return Camera(
            fx=float(vals["fx"]), fy=float(vals["fy"]),
            cx=float(vals["cx"]), cy=float(vals["cy"]),
            rotation=np.array([[float(vals[f"r{i}{j}"]) for j in range(3)] for i in range(3)]),
            translation=np.array([float(vals["tx"]), float(vals["ty"]), float(vals["tz"])]),
            width=int(float(vals["width"])), height=int(float(vals["height"])),
        )
    except ValueError as exc:
        raise FormatError(path, f"invalid camera: {exc}", line=1) from None


# ------------------------------------------------------------------- configs

def parse_kv_text(text: str, path="<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(path, f"expected key = value, got {line!r}", line=lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = val
    return out


def parse_kv(path) -> dict:
    return parse_kv_text(Path(path).read_text(), path)


def _subset(kv: dict, prefix: str) -> dict:
    """Keys under 'prefix.'; falls back to unprefixed keys when none match."""
    picked = {k[len(prefix) + 1:]: v for k, v in kv.items() if k.startswith(prefix + ".")}
    return picked if picked else dict(kv)


def fusion_config_from_kv(kv: dict, prefix: str = None) -> FusionConfig:
    kv = _subset(kv, prefix) if prefix else kv
    kwargs = {}
    if "gamma" in kv:
        kwargs["gamma"] = tuple(float(x) for x in str(kv["gamma"]).split(",") if x.strip())
    for key, cast in (("epsilon", float), ("base_res", int), ("num_levels", int),
                      ("density_tau", float)):
        if key in kv:
            kwargs[key] = cast(kv[key])
    return FusionConfig(**kwargs)


def deform_config_from_kv(kv: dict, prefix: str = None) -> DeformConfig:
    kv = _subset(kv, prefix) if prefix else kv
    kwargs = {}
    for key, cast in (("lambda_nml", float), ("lambda_lmk", float), ("lambda_lap", float),
                      ("lr", float), ("iters", int), ("reraster_every", int),
                      ("symmetry_weight", float)):
        if key in kv:
            kwargs[key] = cast(kv[key])
    region = {
        lbl: float(kv[f"region_weight_{lbl}"]) for lbl in LABELS if f"region_weight_{lbl}" in kv
    }
    if region:
        base = DeformConfig().region_weights
        base.update(region)
        kwargs["region_weights"] = base
    return DeformConfig(**kwargs)


# ------------------------------------------------------------------ previews

def save_png(path, image) -> None:
    """Write a float image in [0, 1] ((H, W), (H, W, 3), or (H, W, 4)) as PNG."""
    arr = np.asarray(image, dtype=np.float64)
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def normal_preview(normal_map) -> np.ndarray:
    return (np.asarray(normal_map) + 1.0) / 2.0


def feature_preview(feature_map) -> np.ndarray:
    """First three channels, min-max normalized over their joint range."""
    arr = np.asarray(feature_map, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    rgb = arr[:, :, : min(3, arr.shape[2])]
    if rgb.shape[2] < 3:
        rgb = np.concatenate([rgb] + [rgb[:, :, -1:]] * (3 - rgb.shape[2]), axis=2)
    lo, hi = rgb.min(), rgb.max()
    if hi - lo < 1e-30:
        return np.zeros_like(rgb)
    return (rgb - lo) / (hi - lo)


# ------------------------------------------------------------------ G-buffers

_GB_CHANNELS = ("face_id", "bary", "uv", "normal", "depth", "mask")


def save_gbuffer(prefix, gbuffer: GBuffer) -> None:
    """One UVT per channel under '<prefix>.<channel>.uvt' plus PNG previews."""
    prefix = str(prefix)
    save_uvt(f"{prefix}.face_id.uvt", gbuffer.face_id.astype(np.float64))
    save_uvt(f"{prefix}.bary.uvt", gbuffer.bary)
    save_uvt(f"{prefix}.uv.uvt", gbuffer.uv)
    save_uvt(f"{prefix}.normal.uvt", gbuffer.normal)
    save_uvt(f"{prefix}.depth.uvt", gbuffer.depth)
    save_uvt(f"{prefix}.mask.uvt", gbuffer.mask.astype(np.float64))
    save_png(f"{prefix}.normal.png", normal_preview(gbuffer.normal))
    save_png(f"{prefix}.mask.png", gbuffer.mask.astype(np.float64))


def load_gbuffer(prefix) -> GBuffer:
    prefix = str(prefix)
    face_id = load_uvt(f"{prefix}.face_id.uvt").astype(np.int32)
    mask = load_uvt(f"{prefix}.mask.uvt") > 0.5
    h, w = mask.shape
    gb = GBuffer(
        width=w, height=h, face_id=face_id,
        bary=load_uvt(f"{prefix}.bary.uvt"),
        uv=np.clip(load_uvt(f"{prefix}.uv.uvt"), 0.0, 1.0),
        normal=load_uvt(f"{prefix}.normal.uvt"),
        depth=load_uvt(f"{prefix}.depth.uvt"),
        mask=mask,
    )
    gb.face_id[~mask] = EMPTY
    return gb


# ------------------------------------------------------------------- splats

def save_gaussians(path, gaussians: GaussianSet, world_positions) -> None:
    """(M, 16) UVT rows: kind, anchor, bary xyz, offset xyz, scale, alpha, rgb, world xyz."""
    pos = np.asarray(world_positions, dtype=np.float64).reshape(len(gaussians), 3)
    rows = np.concatenate(
        [
            gaussians.kind[:, None].astype(np.float64),
            gaussians.index[:, None].astype(np.float64),
            gaussians.bary,
            gaussians.offsets,
            gaussians.scale[:, None],
            gaussians.opacity[:, None],
            gaussians.color,
            pos,
        ],
        axis=1,
    )
    save_uvt(path, rows)


def load_gaussians(path):
    rows = load_uvt(path)
    if rows.ndim != 2 or rows.shape[1] != 16:
        raise FormatError(path, f"splat table must be (M, 16), got {rows.shape}")
    gs = GaussianSet(
        kind=rows[:, 0].astype(np.int64),
        index=rows[:, 1].astype(np.int64),
        bary=rows[:, 2:5],
        frame_face=np.zeros(len(rows), dtype=np.int64),
        offsets=rows[:, 5:8],
        scale=rows[:, 8],
        opacity=np.clip(rows[:, 9], 0.0, 1.0),
        color=np.clip(rows[:, 10:13], 0.0, 1.0),
    )
    return gs, rows[:, 13:16].copy()


# ------------------------------------------------------------- blend basis

def save_basis(path, basis) -> None:
    """Blendshape basis as a (K, N, 3) UVT tensor."""
    b = np.asarray(basis, dtype=np.float64)
    if b.ndim != 3 or b.shape[2] != 3:
        raise ValueError(f"basis must be (K, N, 3), got {b.shape}")
    save_uvt(path, b)


def load_basis(path, num_vertices: int) -> np.ndarray:
    b = load_uvt(path)
    if b.ndim != 3 or b.shape[1:] != (num_vertices, 3):
        raise FormatError(path, f"basis must be (K, {num_vertices}, 3), got {b.shape}")
    return b


# -------------------------------------------------------------------- traces

def save_trace_csv(path, trace) -> None:
    rows = np.asarray(trace, dtype=np.float64).reshape(-1, 5)
    lines = ["iter,total,nml,lmk,lap"]
    lines += [f"{int(r[0])},{r[1]:.9g},{r[2]:.9g},{r[3]:.9g},{r[4]:.9g}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "iter,total,nml,lmk,lap":
        raise FormatError(path, "missing trace header", line=1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            out.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise FormatError(path, f"malformed trace row: {exc}", line=lineno) from None
    return np.asarray(out, dtype=np.float64).reshape(-1, 5)
