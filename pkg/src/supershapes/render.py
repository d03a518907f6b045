"""Deterministic software rasterizer: camera from view angles, z-buffered fill, PNG.

The camera is orthographic and auto-framed: the mesh bounding sphere, measured
in model space so framing does not depend on the view, is scaled to fill a
fixed fraction of the smaller image dimension.  Shading is a two-sided
Lambertian headlight (light along the view direction) over a flat albedo, on
a solid mid-gray background.  Identical inputs produce byte-identical images.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import IO

import numpy as np

from .geometry import TriangleMesh

__all__ = [
    "ViewAngles",
    "RenderConfig",
    "ImageBuffer",
    "RenderResult",
    "camera_matrix",
    "render",
    "encode_png",
    "save_png",
]


def _normalize_angle(value: float) -> float:
    """Wrap to (-pi, pi].  Exact for inputs that are whole turns apart.

    math.remainder computes the IEEE remainder without intermediate rounding,
    so an angle and that angle plus a representable full turn normalize to
    bit-identical values whenever the caller's addition was exact.
    """

    if not math.isfinite(value):
        raise ValueError(f"view angle must be finite, got {value}")
    wrapped = math.remainder(value, math.tau)
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class ViewAngles:
    """Camera orientation: elevation, azimuth, and in-plane rotation (roll).

    All three are radians, normalized to (-pi, pi] on construction.
    """

    elevation: float
    azimuth: float
    rotation: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "elevation", _normalize_angle(self.elevation))
        object.__setattr__(self, "azimuth", _normalize_angle(self.azimuth))
        object.__setattr__(self, "rotation", _normalize_angle(self.rotation))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.elevation, self.azimuth, self.rotation)


@dataclass(frozen=True)
class RenderConfig:
    width: int = 224
    height: int = 224
    background: tuple[int, int, int] = (128, 128, 128)
    # Warm non-gray albedo: no shading level can round to the background
    # triple, so the silhouette is exactly the non-background pixel set.
    albedo: tuple[int, int, int] = (230, 205, 160)
    fill_fraction: float = 0.9

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if not 0.0 < self.fill_fraction <= 1.0:
            raise ValueError("fill_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ImageBuffer:
    """Fixed-size 8-bit RGB raster, row-major, shape (height, width, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixels must have shape ({self.height}, {self.width}, 3), "
                f"got {self.pixels.shape}"
            )
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        self.pixels.setflags(write=False)

    @classmethod
    def filled(cls, width: int, height: int, color: tuple[int, int, int]) -> "ImageBuffer":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color
        return cls(width=width, height=height, pixels=px)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class RenderResult:
    image: ImageBuffer
    degenerate: bool = False


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_matrix(view: ViewAngles) -> np.ndarray:
    """World-to-camera rotation; the camera looks along -z in camera space.

    Applied as roll, then pitch, then yaw in a fixed order:

        R = Rz(rotation) @ Rx(-elevation) @ Ry(azimuth)

    so azimuth pi/2 brings the world +x axis in front of the camera
    (world (1,0,0) maps to camera (0,0,-1)), positive elevation views the
    scene from above, and rotation rolls the image in-plane.
    """

    return _rot_z(view.rotation) @ _rot_x(-view.elevation) @ _rot_y(view.azimuth)


def render(mesh: TriangleMesh, view: ViewAngles, config: RenderConfig = RenderConfig()) -> RenderResult:
    """Rasterize the mesh under the view; returns the image plus a degenerate flag.

    A mesh with no triangles or a zero bounding radius renders as the pure
    background image with ``degenerate=True``.
    """

    width, height = config.width, config.height
    canvas = np.empty((height, width, 3), dtype=np.uint8)
    canvas[:] = config.background

    if mesh.triangle_count == 0 or mesh.vertex_count == 0:
        return RenderResult(ImageBuffer(width, height, canvas), degenerate=True)

    verts = mesh.vertices
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    center = (lo + hi) / 2.0
    radius = float(np.sqrt(((verts - center) ** 2).sum(axis=1)).max())
    if not math.isfinite(radius) or radius <= 0.0:
        return RenderResult(ImageBuffer(width, height, canvas), degenerate=True)

    rot = camera_matrix(view)
    cam = ((verts - center) / radius) @ rot.T  # unit bounding sphere
    half_span = config.fill_fraction * min(width, height) / 2.0
    sx = width / 2.0 + half_span * cam[:, 0]
    sy = height / 2.0 - half_span * cam[:, 1]
    sz = cam[:, 2]  # larger = nearer (camera looks along -z)

    tri = mesh.triangles
    ax, bx, cx = sx[tri[:, 0]], sx[tri[:, 1]], sx[tri[:, 2]]
    ay, by, cy = sy[tri[:, 0]], sy[tri[:, 1]], sy[tri[:, 2]]
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)

    # Pixel centers sit at integer + 0.5; candidate columns/rows per bbox.
    ix0 = np.ceil(np.minimum(np.minimum(ax, bx), cx) - 0.5).astype(np.int64)
    ix1 = np.floor(np.maximum(np.maximum(ax, bx), cx) - 0.5).astype(np.int64)
    iy0 = np.ceil(np.minimum(np.minimum(ay, by), cy) - 0.5).astype(np.int64)
    iy1 = np.floor(np.maximum(np.maximum(ay, by), cy) - 0.5).astype(np.int64)
    np.clip(ix0, 0, width - 1, out=ix0)
    np.clip(ix1, 0, width - 1, out=ix1)
    np.clip(iy0, 0, height - 1, out=iy0)
    np.clip(iy1, 0, height - 1, out=iy1)

    keep = (np.abs(area) > 1e-14) & (ix1 >= ix0) & (iy1 >= iy0)
    if not np.any(keep):
        return RenderResult(ImageBuffer(width, height, canvas), degenerate=False)

    kt = tri[keep]
    kx0, kx1, ky0, ky1 = ix0[keep], ix1[keep], iy0[keep], iy1[keep]

    # Per-triangle barycentric plane coefficients (b_i = A x + B y + C), with
    # the 1/area normalization folded in, so the per-candidate work below is
    # three fused multiply-adds instead of vertex gathers.
    x0, y0 = sx[kt[:, 0]], sy[kt[:, 0]]
    x1, y1 = sx[kt[:, 1]], sy[kt[:, 1]]
    x2, y2 = sx[kt[:, 2]], sy[kt[:, 2]]
    inv_area = 1.0 / area[keep]
    coeff_a = np.stack([(y1 - y2), (y2 - y0), (y0 - y1)]) * inv_area
    coeff_b = np.stack([(x2 - x1), (x0 - x2), (x1 - x0)]) * inv_area
    coeff_c = (
        np.stack([x1 * y2 - x2 * y1, x2 * y0 - x0 * y2, x0 * y1 - x1 * y0]) * inv_area
    )

    # Candidate pixels per triangle, one scanline at a time: intersect each
    # bbox row with the triangle's exact x-span at that row (padded 1e-3 px so
    # float rounding can never drop a covered center), then let the
    # barycentric test below make the authoritative coverage decision.
    heights = ky1 - ky0 + 1
    n_rows = int(heights.sum())
    row_tri = np.repeat(np.arange(len(kt), dtype=np.int64), heights)
    row_start = np.concatenate(([0], np.cumsum(heights)[:-1]))
    ry = ky0[row_tri] + np.arange(n_rows) - row_start[row_tri]
    ycenter = ry + 0.5

    def span(xa, ya, xb, yb):
        den = yb - ya
        crosses = ((ya - ycenter) * (yb - ycenter) <= 0.0) & (den != 0.0)
        t = (ycenter - ya) / np.where(den != 0.0, den, 1.0)
        xe = xa + t * (xb - xa)
        return np.where(crosses, xe, np.inf), np.where(crosses, xe, -np.inf)

    ex0, ey0 = x0[row_tri], y0[row_tri]
    ex1, ey1 = x1[row_tri], y1[row_tri]
    ex2, ey2 = x2[row_tri], y2[row_tri]
    mn0, mx0 = span(ex0, ey0, ex1, ey1)
    mn1, mx1 = span(ex1, ey1, ex2, ey2)
    mn2, mx2 = span(ex2, ey2, ex0, ey0)
    xmin = np.minimum(np.minimum(mn0, mn1), mn2) - 1e-3
    xmax = np.maximum(np.maximum(mx0, mx1), mx2) + 1e-3
    xmin = np.where(np.isfinite(xmin), xmin, 1e9)
    xmax = np.where(np.isfinite(xmax), xmax, -1e9)
    jx0 = np.maximum(kx0[row_tri], np.ceil(xmin - 0.5).astype(np.int64))
    jx1 = np.minimum(kx1[row_tri], np.floor(xmax - 0.5).astype(np.int64))
    row_counts = np.maximum(0, jx1 - jx0 + 1)

    cand_start = np.concatenate(([0], np.cumsum(row_counts)[:-1]))
    total = int(row_counts.sum())
    if total == 0:
        return RenderResult(ImageBuffer(width, height, canvas), degenerate=False)
    cand_row = np.repeat(np.arange(n_rows), row_counts)
    px = jx0[cand_row] + np.arange(total) - cand_start[cand_row]
    py = ry[cand_row]
    tri_id = row_tri[cand_row]
    pcx = px + 0.5
    pcy = py + 0.5

    b0 = coeff_a[0][tri_id] * pcx + coeff_b[0][tri_id] * pcy + coeff_c[0][tri_id]
    b1 = coeff_a[1][tri_id] * pcx + coeff_b[1][tri_id] * pcy + coeff_c[1][tri_id]
    b2 = coeff_a[2][tri_id] * pcx + coeff_b[2][tri_id] * pcy + coeff_c[2][tri_id]
    inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
    if not np.any(inside):
        return RenderResult(ImageBuffer(width, height, canvas), degenerate=False)

    b0, b1, b2 = b0[inside], b1[inside], b2[inside]
    tin = tri_id[inside]
    i0, i1, i2 = kt[tin, 0], kt[tin, 1], kt[tin, 2]
    pix = (py[inside] * width + px[inside]).astype(np.int64)
    depth = b0 * sz[i0] + b1 * sz[i1] + b2 * sz[i2]

    normals = mesh.normals @ rot.T
    nvec = (
        b0[:, None] * normals[i0]
        + b1[:, None] * normals[i1]
        + b2[:, None] * normals[i2]
    )
    nlen = np.sqrt((nvec * nvec).sum(axis=1))
    # Interpolated normals can cancel on creases; headlight term defaults to 1
    # there (facing the camera is the only consistent choice for a crease).
    lambert = np.where(nlen > 1e-12, np.abs(nvec[:, 2]) / np.where(nlen > 0, nlen, 1.0), 1.0)
    shade = np.rint(np.asarray(config.albedo, dtype=np.float64)[None, :] * lambert[:, None])
    colors = shade.astype(np.uint8)

    # z-buffer resolve: stable sort by (pixel, depth), keep the greatest depth
    # (nearest surface) per pixel; ties break toward the later triangle.
    order = np.lexsort((depth, pix))
    sorted_pix = pix[order]
    last = np.empty(len(order), dtype=bool)
    last[:-1] = sorted_pix[1:] != sorted_pix[:-1]
    last[-1] = True
    winners = order[last]
    canvas.reshape(-1, 3)[pix[winners]] = colors[winners]

    return RenderResult(ImageBuffer(width, height, canvas), degenerate=False)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png(image: ImageBuffer, sink: IO[bytes]) -> None:
    """Write the image as an 8-bit truecolor PNG (filter 0 scanlines).

    The encoder is self-contained so identical pixel data always yields
    identical bytes for a given zlib.
    """

    header = struct.pack(">IIBBBBB", image.width, image.height, 8, 2, 0, 0, 0)
    rows = image.pixels.reshape(image.height, -1)
    raw = b"".join(b"\x00" + row.tobytes() for row in rows)
    sink.write(b"\x89PNG\r\n\x1a\n")
    sink.write(_png_chunk(b"IHDR", header))
    sink.write(_png_chunk(b"IDAT", zlib.compress(raw, 9)))
    sink.write(_png_chunk(b"IEND", b""))


def save_png(image: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        encode_png(image, fh)
