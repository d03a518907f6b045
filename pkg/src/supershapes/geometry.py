"""Superformula geometry: polar radius, 3D spherical product, meshing, OBJ export.

The generator shape family is the superformula, a six-parameter polar curve

    r(angle) = (|cos(m*angle/4)/a|^n2 + |sin(m*angle/4)/b|^n3)^(-1/n1)

lifted to a closed 3D surface by combining two instances, one swept over
longitude and one over latitude.  Surfaces are tessellated on a uniform
(theta, phi) grid into an indexed triangle mesh with smooth per-vertex
normals, suitable both for software rendering and for OBJ export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO

import numpy as np

__all__ = [
    "InvalidParamsError",
    "InvalidResolutionError",
    "SuperformulaParams",
    "TriangleMesh",
    "radius2d",
    "surface_point",
    "tessellate",
    "export_obj",
    "save_obj",
]

THETA_RANGE = (-math.pi, math.pi)        # longitude sweep for the first instance
PHI_RANGE = (-math.pi / 2, math.pi / 2)  # latitude sweep for the second instance


class InvalidParamsError(ValueError):
    """Superformula parameters violate their domain constraints."""


class InvalidResolutionError(ValueError):
    """Tessellation resolution too small to form a closed surface."""


@dataclass(frozen=True)
class SuperformulaParams:
    """One superformula instance: symmetry factor m plus shape exponents.

    a, b and n1 must be strictly positive (they appear as divisors and as
    the outer exponent -1/n1); n2 and n3 may be zero.  m is a continuous
    real: non-integer values produce a seam at theta = +/-pi, which is an
    accepted part of the shape space.
    """

    m: float
    a: float
    b: float
    n1: float
    n2: float
    n3: float

    def __post_init__(self) -> None:
        values = (self.m, self.a, self.b, self.n1, self.n2, self.n3)
        if not all(math.isfinite(v) for v in values):
            raise InvalidParamsError(f"non-finite superformula parameter in {values}")
        if self.a <= 0 or self.b <= 0 or self.n1 <= 0:
            raise InvalidParamsError(
                f"a, b, n1 must be strictly positive, got a={self.a} b={self.b} n1={self.n1}"
            )
        if self.n2 < 0 or self.n3 < 0:
            raise InvalidParamsError(f"n2, n3 must be >= 0, got n2={self.n2} n3={self.n3}")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.m, self.a, self.b, self.n1, self.n2, self.n3)


#: Parameters whose radius is exactly 1 for every angle (unit circle/sphere):
#: the bracket collapses to cos^2 + sin^2.
UNIT_SPHERE_PARAMS = SuperformulaParams(m=0.0, a=1.0, b=1.0, n1=2.0, n2=2.0, n3=2.0)


def radius2d(params: SuperformulaParams, angle):
    """Evaluate the superformula radius at one angle or an array of angles.

    Returns a float for scalar input, an ndarray otherwise.  The result is
    finite and strictly positive for all valid parameters: the two bracket
    terms share no common zero, and a zero base with a zero exponent is
    taken as 1 (the continuous limit of the n2=0 / n3=0 edge).
    """

    if np.ndim(angle) == 0:
        # scalar fast path through libm; bit-stable regardless of how many
        # angles are evaluated around it (numpy's vector kernels round
        # size-dependently in the last ulp)
        ang = float(angle)
        if not math.isfinite(ang):
            raise InvalidParamsError("angle must be finite")
        half = params.m * ang / 4.0
        bracket = (
            abs(math.cos(half) / params.a) ** params.n2
            + abs(math.sin(half) / params.b) ** params.n3
        )
        return bracket ** (-1.0 / params.n1)
    ang = np.asarray(angle, dtype=np.float64)
    if not np.all(np.isfinite(ang)):
        raise InvalidParamsError("angle must be finite")
    half = params.m * ang / 4.0
    bracket = (
        np.abs(np.cos(half) / params.a) ** params.n2
        + np.abs(np.sin(half) / params.b) ** params.n3
    )
    return bracket ** (-1.0 / params.n1)


def surface_point(
    r1_params: SuperformulaParams,
    r2_params: SuperformulaParams,
    theta,
    phi,
):
    """Map (theta, phi) to a 3D surface point via the spherical product.

    theta is the longitude in [-pi, pi] evaluated under the first instance,
    phi the latitude in [-pi/2, pi/2] under the second:

        x = r1(theta) cos(theta) * r2(phi) cos(phi)
        y = r1(theta) sin(theta) * r2(phi) cos(phi)
        z = r2(phi) sin(phi)

    Inputs broadcast; the result has shape broadcast(theta, phi) + (3,).
    """

    t = np.asarray(theta, dtype=np.float64)
    p = np.asarray(phi, dtype=np.float64)
    r1 = radius2d(r1_params, t)
    r2 = radius2d(r2_params, p)
    cos_p = np.cos(p)
    x = r1 * np.cos(t) * r2 * cos_p
    y = r1 * np.sin(t) * r2 * cos_p
    z = r2 * np.sin(p)
    out = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
    if np.ndim(theta) == 0 and np.ndim(phi) == 0:
        return out.reshape(3)
    return out


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh with unit per-vertex normals.

    Arrays are frozen after construction; meshes are safe to share across
    threads.  vertices and normals have shape (N, 3), triangles (M, 3) with
    0-based indices into the vertex table.
    """

    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        for name in ("vertices", "normals", "triangles"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
            arr.setflags(write=False)
        if len(self.normals) != len(self.vertices):
            raise ValueError("normals must align 1:1 with vertices")
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


def _grid_triangles(res_theta: int, res_phi: int) -> np.ndarray:
    """Triangle indices for the (theta, phi) grid, pole rows collapsed.

    Vertex (it, ip) lives at index ip * (res_theta + 1) + it.  Interior
    quads split into two triangles; the quads touching phi = -pi/2 and
    phi = +pi/2 have a degenerate edge (all pole vertices coincide) and
    contribute one triangle each, giving 2*rt*rp - 2*rt triangles total.
    """

    row = res_theta + 1
    tris: list[np.ndarray] = []
    it = np.arange(res_theta)
    for ip in range(res_phi):
        a = ip * row + it
        b = a + 1
        c = a + row
        d = b + row
        if ip == 0:
            tris.append(np.stack([a, d, c], axis=1))  # south cap fan
        elif ip == res_phi - 1:
            tris.append(np.stack([a, b, d], axis=1))  # north cap fan
        else:
            tris.append(np.stack([a, b, d], axis=1))
            tris.append(np.stack([a, d, c], axis=1))
    return np.concatenate(tris).astype(np.int32)


def _vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals, normalized per vertex.

    Face cross products are computed on coordinates rescaled by the largest
    magnitude so extreme superformula radii cannot overflow the products.
    A vertex left with a zero accumulation (unreferenced pole duplicates,
    exact cancellation) falls back to the radial direction from the origin.
    """

    scale = float(np.abs(vertices).max())
    v = vertices / scale if scale > 0 else vertices
    p0 = v[triangles[:, 0]]
    e1 = v[triangles[:, 1]] - p0
    e2 = v[triangles[:, 2]] - p0
    face = np.cross(e1, e2)  # magnitude = 2x face area: free area weighting
    acc = np.zeros_like(v)
    for corner in range(3):
        np.add.at(acc, triangles[:, corner], face)
    norms = np.linalg.norm(acc, axis=1)
    zero = norms < 1e-300
    if np.any(zero):
        radial = v[zero]
        rn = np.linalg.norm(radial, axis=1, keepdims=True)
        fallback = np.where(rn > 0, radial / np.where(rn > 0, rn, 1.0), [0.0, 0.0, 1.0])
        acc[zero] = fallback
        norms[zero] = 1.0
    return acc / norms[:, None]


def tessellate(
    r1_params: SuperformulaParams,
    r2_params: SuperformulaParams,
    resolution_theta: int = 64,
    resolution_phi: int = 64,
) -> TriangleMesh:
    """Sample the surface on a uniform inclusive grid and triangulate it.

    The grid covers [-pi, pi] x [-pi/2, pi/2] with (resolution_theta + 1) x
    (resolution_phi + 1) vertices; both resolutions must be at least 3.
    """

    if resolution_theta < 3 or resolution_phi < 3:
        raise InvalidResolutionError(
            f"resolutions must be >= 3, got {resolution_theta}x{resolution_phi}"
        )
    theta = np.linspace(THETA_RANGE[0], THETA_RANGE[1], resolution_theta + 1)
    phi = np.linspace(PHI_RANGE[0], PHI_RANGE[1], resolution_phi + 1)
    tgrid, pgrid = np.meshgrid(theta, phi)  # rows indexed by phi
    vertices = surface_point(r1_params, r2_params, tgrid, pgrid).reshape(-1, 3)
    triangles = _grid_triangles(resolution_theta, resolution_phi)
    normals = _vertex_normals(vertices, triangles)
    return TriangleMesh(vertices=vertices, normals=normals, triangles=triangles)


def export_obj(mesh: TriangleMesh, sink: IO[bytes]) -> None:
    """Write the mesh as Wavefront OBJ text (ASCII, LF, %.6f coordinates).

    Emits one `v` line per vertex, one `vn` per normal, and `f` lines in
    v//vn form with 1-based indices, in table order.
    """

    lines: list[str] = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for x, y, z in mesh.normals:
        lines.append(f"vn {x:.6f} {y:.6f} {z:.6f}")
    for i, j, k in mesh.triangles + 1:
        lines.append(f"f {i}//{i} {j}//{j} {k}//{k}")
    sink.write(("\n".join(lines) + "\n").encode("ascii"))


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "wb") as fh:
        export_obj(mesh, fh)
