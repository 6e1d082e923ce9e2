import numpy as np
import pytest

from uvsplat.geometry import Camera, TriMesh, project_points
from uvsplat.raster import EMPTY, rasterize, render_normal_map, render_normal_map_vjp
from uvsplat.synth import SceneSpec, default_camera, make_scene


def frontal_cam(width=32, height=32, distance=2.0, focal=32.0):
    r = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])  # +z position looking -z
    return Camera(fx=focal, fy=focal, cx=width / 2, cy=height / 2, rotation=r,
                  translation=-r @ np.array([0.0, 0.0, distance]), width=width, height=height)


def single_triangle(verts):
    return TriMesh(np.asarray(verts, dtype=float), [[0, 1, 2]],
                   uv_corners=[[[0, 0], [1, 0], [0, 1]]])


@pytest.fixture(scope="module")
def sphere():
    mesh, _ = make_scene(SceneSpec(shape="icosphere", subdiv=2, uv_layout="spherical"))
    return mesh


class TestRasterize:
    def test_vertex_projection_hits_one_hot_bary(self):
        cam = frontal_cam()
        # place vertex 0 so it projects exactly onto the center of pixel (8, 8)
        x = (8.5 - cam.cx) * 2.0 / cam.fx
        y = (8.5 - cam.cy) * 2.0 / cam.fy
        # camera at +z looking -z: world x right maps to +px, world y maps to -py;
        # winding chosen so the face normal points at the camera
        mesh = single_triangle([[x, -y, 0], [x, -y - 1, 0], [x + 1, -y, 0]])
        gb = rasterize(mesh, mesh.vertices, cam)
        assert gb.mask[8, 8]
        np.testing.assert_allclose(gb.bary[8, 8], [1, 0, 0], atol=1e-9)

    def test_behind_camera_empty(self):
        cam = frontal_cam()
        mesh = single_triangle([[0, 0, 5], [1, 0, 5], [0, 1, 5]])  # behind the z=2 camera
        gb = rasterize(mesh, mesh.vertices, cam)
        assert not gb.mask.any()
        assert (gb.face_id == EMPTY).all()

    def test_depth_test_nearest_wins(self):
        cam = frontal_cam()
        verts = np.array(
            [[-1, -1, 1], [1, -1, 1], [0, 1, 1],      # depth 1 from camera at z=2
             [-1, -1, 0], [1, -1, 0], [0, 1, 0]],     # depth 2
            dtype=float,
        )
        mesh = TriMesh(verts, [[3, 4, 5], [0, 1, 2]])
        gb = rasterize(mesh, mesh.vertices, cam)
        covered_far = rasterize(TriMesh(verts, [[3, 4, 5]]), verts, cam).mask
        both = gb.mask & covered_far
        assert both.any()
        assert (gb.face_id[both] == 1).all()

    def test_empty_mesh_gives_empty_buffer(self):
        mesh = TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
        gb = rasterize(mesh, mesh.vertices, frontal_cam())
        assert not gb.mask.any()

    def test_backface_culled(self):
        cam = frontal_cam()
        mesh = single_triangle([[0, 0, 0], [0, 1, 0], [1, 0, 0]])  # normal -z, away
        gb = rasterize(mesh, mesh.vertices, cam)
        assert not gb.mask.any()

    def test_gbuffer_invariants(self, sphere):
        cam = default_camera(48, 48, distance=3.0)
        gb = rasterize(sphere, sphere.vertices, cam)
        m = gb.mask
        assert m.any()
        bary = gb.bary[m]
        assert bary.min() >= 0
        np.testing.assert_allclose(bary.sum(axis=1), 1, atol=1e-6)
        assert gb.uv[m].min() >= 0 and gb.uv[m].max() <= 1
        assert (gb.depth[m] > 0).all()
        np.testing.assert_allclose(np.linalg.norm(gb.normal[m], axis=1), 1, atol=1e-6)
        assert (gb.face_id[~m] == EMPTY).all()

    def test_reprojection_within_half_pixel(self, sphere):
        cam = default_camera(40, 40, distance=3.0)
        gb = rasterize(sphere, sphere.vertices, cam)
        rows, cols = np.nonzero(gb.mask)
        tri = sphere.vertices[sphere.faces[gb.face_id[gb.mask]]]
        pts = np.einsum("pk,pkc->pc", gb.bary[gb.mask], tri)
        pix, _, ok = project_points(cam, pts)
        assert ok.all()
        err = np.abs(pix - np.stack([cols + 0.5, rows + 0.5], axis=1)).max()
        assert err <= 0.5

    def test_deterministic(self, sphere):
        cam = default_camera(32, 32, distance=3.0)
        a = rasterize(sphere, sphere.vertices, cam)
        b = rasterize(sphere, sphere.vertices, cam)
        for field in ("face_id", "bary", "uv", "normal", "depth", "mask"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_shared_edge_owned_once(self):
        # two triangles sharing a vertical edge; every covered pixel owned by one face
        cam = frontal_cam()
        verts = np.array([[-1, -1, 0], [0, -1, 0], [0, 1, 0], [-1, 1, 0], [1, -1, 0], [1, 1, 0]],
                         dtype=float)
        quad_left = TriMesh(verts, [[0, 1, 2], [0, 2, 3]])
        quad_right = TriMesh(verts, [[1, 4, 5], [1, 5, 2]])
        both = TriMesh(verts, [[0, 1, 2], [0, 2, 3], [1, 4, 5], [1, 5, 2]])
        gb = rasterize(both, verts, cam)
        left = rasterize(quad_left, verts, cam)
        right = rasterize(quad_right, verts, cam)
        # same total coverage, no double ownership possible by construction
        assert gb.mask.sum() == (left.mask | right.mask).sum()


class TestRenderNormalMap:
    def test_flat_triangle_constant(self):
        cam = frontal_cam()
        mesh = single_triangle([[-1, -1, 0], [1, -1, 0], [0, 1, 0]])
        gb = rasterize(mesh, mesh.vertices, cam)
        img = render_normal_map(gb, mesh, mesh.vertices)
        assert gb.mask.any()
        np.testing.assert_allclose(img[gb.mask], [[0, 0, 1]] * int(gb.mask.sum()), atol=1e-12)

    def test_frozen_correspondences_rotate(self, sphere):
        cam = default_camera(32, 32, distance=3.0)
        gb = rasterize(sphere, sphere.vertices, cam)
        ang = np.pi / 2
        rot = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0], [-np.sin(ang), 0, np.cos(ang)]])
        img0 = render_normal_map(gb, sphere, sphere.vertices)
        img1 = render_normal_map(gb, sphere, sphere.vertices @ rot.T)
        np.testing.assert_allclose(img1[gb.mask], img0[gb.mask] @ rot.T, atol=1e-12)

    def test_vjp_matches_fd(self, sphere):
        rng = np.random.default_rng(2)
        cam = default_camera(24, 24, distance=3.0)
        pos = sphere.vertices.copy()
        gb = rasterize(sphere, pos, cam)
        rows, cols = np.nonzero(gb.mask)
        pick = rng.integers(0, len(rows), 5)
        h = 1e-6
        for p in pick:
            r, c = rows[p], cols[p]
            probe = np.zeros((gb.height, gb.width, 3))
            probe[r, c] = rng.normal(size=3)
            grad = render_normal_map_vjp(gb, sphere, pos, probe)
            vid = sphere.faces[gb.face_id[r, c]][0]
            for j in range(3):
                pp, pm = pos.copy(), pos.copy()
                pp[vid, j] += h
                pm[vid, j] -= h
                fd = (
                    (render_normal_map(gb, sphere, pp)[r, c] - render_normal_map(gb, sphere, pm)[r, c])
                    @ probe[r, c] / (2 * h)
                )
                denom = max(abs(grad[vid, j]), abs(fd), 1e-8)
                assert abs(grad[vid, j] - fd) / denom <= 1e-5
