"""Command-line surface: synth, deform, splat, anchor, render, gradcheck, pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, formats, report, synth
from .anchor import build_gaussians, drive, render_gaussians, resolve_positions
from .deform import LandmarkSet, optimize_offsets
from .geometry import BlendModel, MeshError, six_view_rig
from .raster import rasterize, render_normal_map
from .splat import FusionConfig, ViewSplat, build_pyramid, fuse
from .util import parallel_map


def _scene_spec_from_kv(kv: dict) -> synth.SceneSpec:
    sub = {k[6:]: v for k, v in kv.items() if k.startswith("synth.")} or dict(kv)
    kwargs = {}
    for key, cast in (("shape", str), ("subdiv", int), ("cells", int), ("uv_layout", str),
                      ("feature_rule", str), ("feature_cells", int), ("feature_value", float),
                      ("lat_face_max", float), ("lat_hair_min", float)):
        if key in sub:
            kwargs[key] = cast(sub[key])
    if "axes" in sub:
        kwargs["axes"] = tuple(float(x) for x in str(sub["axes"]).split(","))
    return synth.SceneSpec(**kwargs)


def _rig_from_kv(kv: dict):
    sub = {k[6:]: v for k, v in kv.items() if k.startswith("synth.")} or dict(kv)
    res = int(sub.get("view_res", 256))
    distance = float(sub.get("cam_distance", 3.5))
    fov = float(sub.get("fov_deg", 45.0))
    return six_view_rig(distance, (0.0, 0.0, 0.0), width=res, height=res, fov_deg=fov)


def _write_scene(spec: synth.SceneSpec, cameras, out_dir: Path) -> dict:
    """Write OBJ, labels, landmarks, cameras, normal PFMs, and feature UVTs.

    For ellipsoid specs the written mesh is the unit-sphere template and the
    normal maps/landmarks describe the ellipsoid target, so a subsequent
    deform stage has real work to do. Other shapes target themselves.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec.shape == "ellipsoid":
        mesh, model = synth.make_scene(replace(spec, shape="icosphere"))
        target_positions = mesh.vertices * np.asarray(spec.axes)
    else:
        mesh, model = synth.make_scene(spec)
        target_positions = mesh.vertices
    formats.save_obj(out_dir / "mesh.obj", mesh)
    formats.save_labels(out_dir / "labels.txt", mesh)

    gbuffers = [rasterize(mesh, mesh.vertices, cam) for cam in cameras]
    if spec.shape in ("ellipsoid", "icosphere"):
        normal_maps, _ = synth.analytic_normal_maps(spec, cameras)
    else:
        normal_maps = [render_normal_map(gb, mesh, mesh.vertices) for gb in gbuffers]
    landmarks = synth.landmark_set(mesh, cameras, target_positions)
    formats.save_landmarks(out_dir / "lmk.txt", landmarks)

    entries = []
    for k, cam in enumerate(cameras):
        cam_path = out_dir / f"cam_{k:03d}.txt"
        nml_path = out_dir / f"normal_{k:03d}.pfm"
        feat_path = out_dir / f"feat_{k:03d}.uvt"
        formats.save_camera(cam_path, cam)
        formats.save_pfm(nml_path, normal_maps[k])
        formats.save_uvt(feat_path, synth.make_features(spec, gbuffers[k]))
        entries.append({"camera": cam_path.name, "normal_map": nml_path.name,
                        "features": feat_path.name})
    (out_dir / "views.json").write_text(json.dumps(entries, indent=2) + "\n")
    return {"mesh": mesh, "model": model, "entries": entries, "dir": out_dir,
            "landmarks": landmarks}


def _cmd_synth(args) -> int:
    kv = formats.parse_kv(args.spec)
    spec = _scene_spec_from_kv(kv)
    cameras = _rig_from_kv(kv)
    _write_scene(spec, cameras, Path(args.out_dir))
    print(f"scene written to {args.out_dir}")
    return 0


def _load_views_json(path: Path):
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list) or not entries:
        raise formats.FormatError(path, "views file must be a non-empty JSON list", line=1)
    return entries, Path(path).parent


def _cmd_deform(args) -> int:
    mesh = formats.load_obj(args.mesh)
    if args.labels:
        mesh = formats.apply_labels(mesh, args.labels)
    entries, base = _load_views_json(args.views)
    views = []
    for e in entries:
        cam = formats.load_camera(base / e["camera"])
        target = formats.load_pfm(base / e["normal_map"])
        if args.camera_space_targets:
            target = target @ cam.rotation  # R^T per pixel: camera-space -> world
        views.append((cam, target))
    landmarks = formats.load_landmarks(args.landmarks) if args.landmarks else LandmarkSet.empty()
    config = formats.deform_config_from_kv(formats.parse_kv(args.config), "deform") \
        if args.config else formats.deform_config_from_kv({})
    model = BlendModel(template=mesh, basis=np.zeros((0, mesh.num_vertices, 3)))
    offsets, trace = optimize_offsets(model, views, landmarks, config)
    formats.save_obj(args.out, mesh, mesh.vertices + offsets.offsets)
    if args.trace:
        formats.save_trace_csv(args.trace, trace)
        report.save_trace_plot(trace, Path(args.trace).with_suffix(".png"))
    print(f"deformed mesh written to {args.out} "
          f"(final loss {trace[-1, 1]:.6g} over {len(trace)} iterations)")
    return 0


def _fuse_views(entries, base, config: FusionConfig, mode: str):
    if len(entries) > len(config.gamma):
        raise ValueError(
            f"{len(entries)} views but only {len(config.gamma)} gamma entries in config"
        )

    def build(item):
        k, e = item
        cam = formats.load_camera(base / e["camera"])
        gb = formats.load_gbuffer(base / e["gbuffer"])
        feat = formats.load_uvt(base / e["features"])
        pyr = build_pyramid(gb, feat, config, cam)
        return ViewSplat.from_pyramid(pyr, config.gamma[k], config,
                                      hole_filled=(mode == "filled"))

    views = parallel_map(build, enumerate(entries))
    return fuse(views, config, mode=mode)


def _cmd_splat(args) -> int:
    config = formats.fusion_config_from_kv(formats.parse_kv(args.config), "fuse") \
        if args.config else FusionConfig()
    entries, base = _load_views_json(args.views)
    fused, weight = _fuse_views(entries, base, config, args.fuse_mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.save_uvt(out / "fused.uvt", fused)
    formats.save_uvt(out / "weight.uvt", weight)
    formats.save_png(out / "fused_preview.png", formats.feature_preview(fused))
    print(f"fused UV map written to {out}")
    return 0


def _cmd_anchor(args) -> int:
    mesh = formats.load_obj(args.mesh)
    attrs = formats.load_uvt(args.uvmap)
    colors = formats.load_uvt(args.vertex_colors) if args.vertex_colors else None
    gaussians = build_gaussians(mesh, mesh.vertices, attrs, vertex_colors=colors)
    positions = resolve_positions(gaussians, mesh, mesh.vertices)
    formats.save_gaussians(args.out, gaussians, positions)
    print(f"{len(gaussians)} splats written to {args.out}")
    return 0


def _cmd_render(args) -> int:
    gaussians, positions = formats.load_gaussians(args.splats)
    camera = formats.load_camera(args.camera)
    img = render_gaussians(gaussians, positions, camera)
    formats.save_png(args.out, img)
    print(f"render written to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = checks.run_suite(args.suite, args.seed)
    for r in results:
        print(r.row())
    ok = all(r.passed for r in results)
    print(f"{'all checks passed' if ok else 'CHECKS FAILED'} "
          f"({sum(r.passed for r in results)}/{len(results)})")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save_check_report(results, out / "gradcheck.csv", out / "gradcheck.png")
    return 0 if ok else 1


def _cmd_pipeline(args) -> int:
    kv = formats.parse_kv(args.spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = _scene_spec_from_kv(kv)
    cameras = _rig_from_kv(kv)
    scene = _write_scene(spec, cameras, out / "scene")
    mesh, model = scene["mesh"], scene["model"]

    # deform against the scene's normal maps and landmarks
    dconf = formats.deform_config_from_kv(kv, "deform")
    base = scene["dir"]
    views = [(formats.load_camera(base / e["camera"]), formats.load_pfm(base / e["normal_map"]))
             for e in scene["entries"]]
    offsets, trace = optimize_offsets(model, views, scene["landmarks"], dconf)
    deformed = mesh.vertices + offsets.offsets
    formats.save_obj(out / "out.obj", mesh, deformed)
    formats.save_trace_csv(out / "trace.csv", trace)
    report.save_trace_plot(trace, out / "trace.png")

    # re-rasterize the deformed mesh, export G-buffers, splat and fuse
    fconf = formats.fusion_config_from_kv(kv, "fuse")
    mode = kv.get("fuse.mode", "filled")

    def splat_view(item):
        k, cam = item
        gb = rasterize(mesh, deformed, cam)
        feat = synth.make_features(spec, gb)
        pyr = build_pyramid(gb, feat, fconf, cam)
        view = ViewSplat.from_pyramid(pyr, fconf.gamma[k % len(fconf.gamma)],
                                      fconf, hole_filled=(mode == "filled"))
        return gb, feat, view

    per_view = parallel_map(splat_view, enumerate(cameras))
    splat_entries = []
    fuse_views = []
    for k, (gb, feat, view) in enumerate(per_view):
        formats.save_gbuffer(out / f"gb_{k:03d}", gb)
        formats.save_uvt(out / f"feat_{k:03d}.uvt", feat)
        splat_entries.append({"camera": f"scene/{scene['entries'][k]['camera']}",
                              "gbuffer": f"gb_{k:03d}", "features": f"feat_{k:03d}.uvt"})
        fuse_views.append(view)
    (out / "splat_views.json").write_text(json.dumps(splat_entries, indent=2) + "\n")
    fused, weight = fuse(fuse_views, fconf, mode=mode)
    formats.save_uvt(out / "fused.uvt", fused)
    formats.save_uvt(out / "weight.uvt", weight)
    formats.save_png(out / "fused_preview.png", formats.feature_preview(fused))

    # anchor splats to the deformed mesh, attributes from the fused map
    diag = float(np.linalg.norm(deformed.max(axis=0) - deformed.min(axis=0)))
    scale = float(kv.get("anchor.scale", 0.02 * diag))
    rgb = formats.feature_preview(fused)
    opacity = (weight > 10 * fconf.epsilon).astype(np.float64)
    attrs = np.concatenate(
        [rgb, opacity[:, :, None], np.full(opacity.shape + (1,), scale)], axis=2
    )
    formats.save_uvt(out / "attrs.uvt", attrs)
    deformed_mesh = type(mesh)(deformed, mesh.faces, mesh.uv_corners, mesh.labels,
                               mesh.mirror, mesh.lap_weights)
    gaussians = build_gaussians(deformed_mesh, deformed, attrs)
    positions = resolve_positions(gaussians, deformed_mesh, deformed)
    formats.save_gaussians(out / "splats.uvt", gaussians, positions)

    # render, optionally reposed by blendshape coefficients
    cam_idx = int(kv.get("render.camera", 0))
    coeffs = [float(x) for x in str(kv.get("render.coeffs", "0,0,0")).split(",")]
    if any(coeffs):
        deformed_model = BlendModel(template=deformed_mesh, basis=model.basis)
        positions, _ = drive(gaussians, deformed_model, coeffs, np.zeros_like(deformed))
    img = render_gaussians(gaussians, positions, cameras[cam_idx])
    formats.save_png(out / "render.png", img)
    print(f"pipeline outputs written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvsplat",
                                     description="UV feature splatting and mesh deformation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("deform", help="optimize per-vertex offsets against normal maps")
    p.add_argument("--mesh", required=True)
    p.add_argument("--labels")
    p.add_argument("--views", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--camera-space-targets", action="store_true",
                   help="interpret target normal maps as camera-space")
    p.set_defaults(func=_cmd_deform)

    p = sub.add_parser("splat", help="fuse per-view features into a canonical UV map")
    p.add_argument("--views", required=True, help="JSON list of camera/gbuffer/features paths")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fuse-mode", choices=("filled", "levels"), default="filled")
    p.set_defaults(func=_cmd_splat)

    p = sub.add_parser("anchor", help="anchor splats to a mesh from a UV attribute map")
    p.add_argument("--mesh", required=True)
    p.add_argument("--uvmap", required=True)
    p.add_argument("--vertex-colors")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_anchor)

    p = sub.add_parser("render", help="render a splat file")
    p.add_argument("--splats", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("gradcheck", help="run the verification suites")
    p.add_argument("--suite", default="all",
                   choices=tuple(checks.SUITES) + ("all",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("pipeline", help="synth -> deform -> splat -> anchor -> render")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (formats.FormatError, MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
