import io
import math

import numpy as np
import pytest
from PIL import Image

from supershapes.geometry import SuperformulaParams, TriangleMesh, tessellate
from supershapes.render import (
    ImageBuffer,
    RenderConfig,
    ViewAngles,
    camera_matrix,
    encode_png,
    render,
)

BG = (128, 128, 128)


@pytest.fixture(scope="module")
def sphere_mesh():
    identity = SuperformulaParams(m=0.0, a=1.0, b=1.0, n1=2.0, n2=2.0, n3=2.0)
    return tessellate(identity, identity, 64, 64)


def silhouette(image: ImageBuffer) -> np.ndarray:
    return (image.pixels != np.asarray(BG, dtype=np.uint8)).any(axis=2)


class TestViewAngles:
    def test_normalizes_to_half_open_turn(self):
        v = ViewAngles(elevation=3 * math.pi, azimuth=-math.pi, rotation=math.tau)
        assert v.elevation == pytest.approx(math.pi)
        assert v.azimuth == math.pi  # -pi maps to +pi
        assert v.rotation == 0.0

    def test_full_turn_offset_is_bit_exact_for_exact_sums(self):
        # 0.5 and tau are both multiples of 2^-50, so 0.5 + tau is exact and
        # the IEEE remainder recovers 0.5 bit-for-bit.
        for base in (0.5, 0.25, -0.75, 1.0, 0.0):
            assert ViewAngles(0.0, base + math.tau, 0.0).azimuth == base

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ViewAngles(math.nan, 0.0, 0.0)


class TestCameraMatrix:
    def test_zero_view_is_identity(self):
        assert np.array_equal(camera_matrix(ViewAngles(0.0, 0.0, 0.0)), np.eye(3))

    def test_full_turn_azimuth_is_identity(self):
        assert np.array_equal(camera_matrix(ViewAngles(0.0, math.tau, 0.0)), np.eye(3))

    def test_quarter_azimuth_brings_x_axis_in_front(self):
        # hand multiplication of the yaw matrix: world +x -> camera -z
        rot = camera_matrix(ViewAngles(0.0, math.pi / 2, 0.0))
        assert rot @ np.array([1.0, 0.0, 0.0]) == pytest.approx([0, 0, -1], abs=1e-12)

    def test_orthonormal_over_random_views(self):
        rng = np.random.default_rng(20)
        for _ in range(1000):
            v = ViewAngles(*rng.uniform(-math.pi, math.pi, 3))
            rot = camera_matrix(v)
            assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-9


class TestRenderSphere:
    def test_silhouette_is_centered_disc(self, sphere_mesh):
        res = render(sphere_mesh, ViewAngles(0.0, 0.0, 0.0))
        assert not res.degenerate
        sil = silhouette(res.image)
        expected_area = math.pi * (0.45 * 224) ** 2
        assert abs(sil.sum() - expected_area) / expected_area < 0.02
        ys, xs = np.nonzero(sil)
        assert abs(xs.mean() - 111.5) < 1.0
        assert abs(ys.mean() - 111.5) < 1.0

    def test_silhouette_containment(self, sphere_mesh):
        # auto-framing puts every projected point inside the 0.45*min circle,
        # regardless of shape; check the sphere and a spiky supershape
        spiky = tessellate(
            SuperformulaParams(m=7.3, a=1.0, b=1.2, n1=0.8, n2=4.0, n3=13.0),
            SuperformulaParams(m=3.1, a=1.0, b=1.0, n1=2.0, n2=8.0, n3=4.0),
            32,
            32,
        )
        rng = np.random.default_rng(21)
        for mesh in (sphere_mesh, spiky):
            for _ in range(3):
                view = ViewAngles(*rng.uniform(-math.pi, math.pi, 3))
                sil = silhouette(render(mesh, view).image)
                ys, xs = np.nonzero(sil)
                dist = np.hypot(xs + 0.5 - 112.0, ys + 0.5 - 112.0)
                assert dist.max() <= 0.45 * 224 + 1.0

    def test_full_turn_azimuth_renders_byte_identical(self, sphere_mesh):
        base = ViewAngles(0.3, 0.5, -0.2)
        shifted = ViewAngles(0.3, 0.5 + math.tau, -0.2)
        assert shifted.azimuth == base.azimuth
        a = render(sphere_mesh, base).image.tobytes()
        b = render(sphere_mesh, shifted).image.tobytes()
        assert a == b

    def test_rotational_symmetry_is_near_exact(self, sphere_mesh):
        # The continuous sphere is azimuth-invariant; the tessellated one only
        # approximately so (triangulation rotates with the view), so compare
        # with a tolerance instead of byte equality.
        a = render(sphere_mesh, ViewAngles(0.0, 0.0, 0.0)).image.pixels.astype(int)
        b = render(sphere_mesh, ViewAngles(0.0, 0.3, 0.0)).image.pixels.astype(int)
        assert np.abs(a - b).mean() < 1.0

    def test_render_deterministic(self, sphere_mesh):
        view = ViewAngles(0.4, 1.1, 0.2)
        assert (
            render(sphere_mesh, view).image.tobytes()
            == render(sphere_mesh, view).image.tobytes()
        )


class TestDegenerateMeshes:
    def test_no_triangles_renders_background(self):
        mesh = TriangleMesh(
            vertices=np.array([[0.0, 0.0, 0.0]]),
            normals=np.array([[0.0, 0.0, 1.0]]),
            triangles=np.empty((0, 3), dtype=np.int32),
        )
        res = render(mesh, ViewAngles(0.0, 0.0, 0.0))
        assert res.degenerate
        assert not silhouette(res.image).any()

    def test_zero_radius_mesh_flagged(self):
        v = np.zeros((3, 3))
        mesh = TriangleMesh(
            vertices=v,
            normals=np.tile([0.0, 0.0, 1.0], (3, 1)),
            triangles=np.array([[0, 1, 2]], dtype=np.int32),
        )
        res = render(mesh, ViewAngles(0.0, 0.0, 0.0))
        assert res.degenerate
        assert not silhouette(res.image).any()


def occlusion_mesh():
    """Two overlapping triangles: the near one tilted, the far one flat."""
    near_n = np.array([0.6, 0.0, 0.8])
    verts = np.array(
        [
            # near triangle at z = +0.5
            [-0.8, -0.6, 0.5],
            [0.8, -0.6, 0.5],
            [0.0, 0.9, 0.5],
            # far triangle at z = -0.5
            [-0.9, -0.7, -0.5],
            [0.9, -0.7, -0.5],
            [0.0, 1.0, -0.5],
        ]
    )
    normals = np.vstack([np.tile(near_n, (3, 1)), np.tile([0.0, 0.0, 1.0], (3, 1))])
    tris = np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int32)
    return TriangleMesh(vertices=verts, normals=normals, triangles=tris)


class TestDepthCorrectness:
    def test_nearer_triangle_wins_every_overlapped_pixel(self):
        mesh = occlusion_mesh()
        config = RenderConfig(width=96, height=96)
        res = render(mesh, ViewAngles(0.0, 0.0, 0.0), config)

        # Brute-force oracle: project with the documented framing, then test
        # each pixel center against each triangle independently and pick the
        # larger camera z among covering triangles.
        verts = mesh.vertices
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        center = (lo + hi) / 2
        radius = np.linalg.norm(verts - center, axis=1).max()
        cam = (verts - center) / radius
        half = config.fill_fraction * 96 / 2
        sx = 48 + half * cam[:, 0]
        sy = 48 - half * cam[:, 1]

        def coverage(tri_idx, px, py, margin=1e-6):
            i, j, k = mesh.triangles[tri_idx]
            x1, y1, x2, y2, x3, y3 = sx[i], sy[i], sx[j], sy[j], sx[k], sy[k]
            denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
            l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / denom
            l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / denom
            l3 = 1.0 - l1 - l2
            return l1 > margin and l2 > margin and l3 > margin

        near_shade = np.rint(np.array([230, 205, 160]) * 0.8).astype(np.uint8)
        checked = 0
        for py in range(8, 88, 3):
            for px in range(8, 88, 3):
                both = coverage(0, px + 0.5, py + 0.5) and coverage(1, px + 0.5, py + 0.5)
                if both:
                    assert np.array_equal(res.image.pixels[py, px], near_shade)
                    checked += 1
        assert checked > 100  # the scene must actually overlap


class TestPng:
    def test_one_black_pixel(self):
        img = ImageBuffer.filled(1, 1, (0, 0, 0))
        sink = io.BytesIO()
        encode_png(img, sink)
        decoded = np.asarray(Image.open(io.BytesIO(sink.getvalue())).convert("RGB"))
        assert decoded.shape == (1, 1, 3)
        assert (decoded == 0).all()

    def test_render_round_trips_through_pillow(self, sphere_mesh):
        image = render(sphere_mesh, ViewAngles(0.1, 0.2, 0.3)).image
        sink = io.BytesIO()
        encode_png(image, sink)
        decoded = np.asarray(Image.open(io.BytesIO(sink.getvalue())).convert("RGB"))
        assert np.array_equal(decoded, image.pixels)

    def test_identical_images_identical_bytes(self, sphere_mesh):
        view = ViewAngles(0.9, -0.4, 0.0)
        sinks = []
        for _ in range(2):
            sink = io.BytesIO()
            encode_png(render(sphere_mesh, view).image, sink)
            sinks.append(sink.getvalue())
        assert sinks[0] == sinks[1]


class TestImageBuffer:
    def test_pixel_length_invariant(self):
        img = ImageBuffer.filled(5, 3, (1, 2, 3))
        assert img.pixels.size == 5 * 3 * 3
        with pytest.raises(ValueError):
            ImageBuffer(width=4, height=3, pixels=np.zeros((3, 5, 3), dtype=np.uint8))

    def test_background_config_respected(self, sphere_mesh):
        config = RenderConfig(width=64, height=64, background=(10, 20, 30))
        res = render(sphere_mesh, ViewAngles(0.0, 0.0, 0.0), config)
        corners = res.image.pixels[[0, 0, -1, -1], [0, -1, 0, -1]]
        assert (corners == [10, 20, 30]).all()
