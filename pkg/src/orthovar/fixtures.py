"""Deterministic test meshes and graph specs.

The full sphere is an icosphere; hemispheres and caps are built from an
octahedron subdivision (its equator is preserved by midpoint subdivision)
or from a polar map of the hexagonal disk, so boundaries are exact circles.
"""

import numpy as np

from ._util import unit
from .errors import UnknownFixture
from .surface import SurfaceMesh


def _subdivide_on_sphere(verts, tris, levels):
    for _ in range(levels):
        edge_mid = {}
        verts = list(map(tuple, verts))
        new_tris = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                p = unit(0.5 * (np.array(verts[a]) + np.array(verts[b])))
                edge_mid[key] = len(verts)
                verts.append(tuple(p))
            return edge_mid[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc],
                             [ab, bc, ca]])
        tris = new_tris
    return np.asarray(verts, dtype=float), np.asarray(tris, dtype=np.int64)


def icosphere(level=4):
    """Unit icosphere; level 4 has 2562 vertices and 5120 faces."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    v = unit(v)
    t = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts, tris = _subdivide_on_sphere(v, t, level)
    return SurfaceMesh(verts, tris)


def octasphere(level=4):
    """Unit sphere from octahedron subdivision; the equator z = 0 stays an
    exact vertex circle at every level."""
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0],
                  [0, 0, 1], [0, 0, -1]], dtype=float)
    t = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
         [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    verts, tris = _subdivide_on_sphere(v, t, level)
    return SurfaceMesh(verts, tris)


def halfsphere(level=4):
    """Upper unit hemisphere with the equator as its boundary loop, built by
    a polar map of the hexagonal disk (uniform triangle quality; the boundary
    ring lies exactly on the equator). Level k uses 5k rings."""
    mesh = _map_disk_to_cap(disk(5 * level), np.array([0.0, 0.0, 1.0]),
                            0.5 * np.pi, np.zeros(3), 1.0)
    v = mesh.vertices.copy()
    isb = mesh.is_boundary_vertex
    v[isb, 2] = 0.0
    v[isb] = unit(v[isb])
    return SurfaceMesh(v, mesh.triangles, validate=False)


def _zip_rings(outer, outer_ang, inner, inner_ang):
    """Triangulate the band between two concentric vertex rings, walking
    both by angle. Orientation is counterclockwise seen from +z."""
    no, ni = len(outer), len(inner)
    tris = []
    i = k = 0
    oa = np.concatenate([outer_ang, outer_ang[:1] + 2 * np.pi])
    ia = np.concatenate([inner_ang, inner_ang[:1] + 2 * np.pi])
    while i < no or k < ni:
        adv_outer = k >= ni or (i < no and oa[i + 1] <= ia[k + 1])
        if adv_outer:
            tris.append([outer[i % no], outer[(i + 1) % no], inner[k % ni]])
            i += 1
        else:
            tris.append([outer[i % no], inner[(k + 1) % ni], inner[k % ni]])
            k += 1
    return tris


def disk(rings=8, radius=1.0):
    """Flat unit disk in the plane z = 0: hexagonal rings, good aspect."""
    verts = [np.zeros(3)]
    ring_index = [np.array([0])]
    ring_angle = [np.array([0.0])]
    for j in range(1, rings + 1):
        k = 6 * j
        ang = 2 * np.pi * np.arange(k) / k
        r = radius * j / rings
        idx = len(verts) + np.arange(k)
        for a in ang:
            verts.append(np.array([r * np.cos(a), r * np.sin(a), 0.0]))
        ring_index.append(idx)
        ring_angle.append(ang)
    tris = []
    # innermost fan
    first = ring_index[1]
    for k in range(6):
        tris.append([0, first[k], first[(k + 1) % 6]])
    for j in range(2, rings + 1):
        tris.extend(_zip_rings(ring_index[j], ring_angle[j],
                               ring_index[j - 1], ring_angle[j - 1]))
    # fix orientation: outer ring first in zip gives cw; flip to ccw
    tris = np.asarray(tris, dtype=np.int64)
    v = np.asarray(verts)
    e1 = v[tris[:, 1]] - v[tris[:, 0]]
    e2 = v[tris[:, 2]] - v[tris[:, 0]]
    flip = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return SurfaceMesh(v, tris)


def _map_disk_to_cap(mesh, axis, theta_max, sphere_center, sphere_radius):
    """Polar map of the unit disk onto a spherical cap around `axis`."""
    axis = unit(np.asarray(axis, dtype=float))
    # in-plane frame
    tmp = np.array([1.0, 0.0, 0.0])
    if abs(axis @ tmp) > 0.9:
        tmp = np.array([0.0, 1.0, 0.0])
    u1 = unit(np.cross(axis, tmp))
    u2 = np.cross(axis, u1)
    v = mesh.vertices
    rho = np.linalg.norm(v[:, :2], axis=1)
    phi = np.arctan2(v[:, 1], v[:, 0])
    theta = rho * theta_max
    w = (np.cos(theta)[:, None] * axis[None]
         + np.sin(theta)[:, None] * (np.cos(phi)[:, None] * u1[None]
                                     + np.sin(phi)[:, None] * u2[None]))
    pts = sphere_center + sphere_radius * w
    return mesh.with_vertices(pts)


def cap_on_ball(r=0.2, rings=12):
    """Spherical cap of radius r attached orthogonally to the unit ball
    (cap sphere centered at distance sqrt(1+r^2) on the +z axis); its
    boundary circle lies exactly on the unit sphere."""
    d = np.sqrt(1.0 + r * r)
    center = np.array([0.0, 0.0, d])
    theta_max = np.arctan2(1.0, r)  # opening angle around the -z axis
    cap = _map_disk_to_cap(disk(rings), np.array([0.0, 0.0, -1.0]),
                           theta_max, center, r)
    # snap the boundary ring exactly onto the unit sphere
    v = cap.vertices.copy()
    isb = cap.is_boundary_vertex
    v[isb] = unit(v[isb])
    return SurfaceMesh(v, cap.triangles, validate=False)


def equator_cap(apex=0.1, rings=12, tilt_deg=0.0):
    """Spherical cap through the unit circle z = 0 with apex height `apex`
    (apex -> 0 degenerates to the flat great disk). Optionally rotated about
    the x axis; the boundary stays a great circle of the unit sphere.

    The deviation angle from orthogonal attachment to the unit ball is
    arctan(1/z0) with z0 = (1 - apex^2) / (2 apex)."""
    if apex <= 0.0:
        mesh = disk(rings)
    else:
        z0 = (1.0 - apex * apex) / (2.0 * apex)
        R = np.sqrt(1.0 + z0 * z0)
        theta_b = np.arccos(z0 / R)
        mesh = _map_disk_to_cap(disk(rings), np.array([0.0, 0.0, 1.0]),
                                theta_b, np.array([0.0, 0.0, -z0]), R)
        v = mesh.vertices.copy()
        isb = mesh.is_boundary_vertex
        v[isb, 2] = 0.0
        v[isb] = unit(v[isb])
        mesh = SurfaceMesh(v, mesh.triangles, validate=False)
    if tilt_deg:
        a = np.deg2rad(tilt_deg)
        rot = np.array([[1, 0, 0],
                        [0, np.cos(a), -np.sin(a)],
                        [0, np.sin(a), np.cos(a)]])
        mesh = mesh.transformed(rotation=rot)
    return mesh


def tilted_boundary_cap(deviation_deg=10.0, rings=12):
    """Cap through the equator whose co-normal deviates from nu_S by the
    given angle everywhere along the boundary."""
    z0 = 1.0 / np.tan(np.deg2rad(deviation_deg))
    apex = np.sqrt(1.0 + z0 * z0) - z0
    return equator_cap(apex=apex, rings=rings)


def cylinder_strip(radius=1.0, height=1.0, n_theta=48, n_z=8):
    """Open cylinder strip (two boundary circles)."""
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    z = np.linspace(0.0, height, n_z + 1)
    verts = []
    for zz in z:
        for a in theta:
            verts.append([radius * np.cos(a), radius * np.sin(a), zz])
    tris = []
    for i in range(n_z):
        for j in range(n_theta):
            j2 = (j + 1) % n_theta
            a, b = i * n_theta + j, i * n_theta + j2
            c, d = (i + 1) * n_theta + j, (i + 1) * n_theta + j2
            tris.append([a, b, c])
            tris.append([b, d, c])
    return SurfaceMesh(np.asarray(verts), np.asarray(tris))


class QuadraticGraph:
    """Boundary graph u(z) = 0.5 z^T Q z with u(0) = 0, Du(0) = 0; the trace
    of Q is the sum of the two principal curvatures toward (0, 1)."""

    def __init__(self, q11=1.0, q22=1.0, q12=0.0):
        self.Q = np.array([[q11, q12], [q12, q22]], dtype=float)

    def u(self, z):
        z = np.atleast_2d(z)
        return 0.5 * np.einsum("ni,ij,nj->n", z, self.Q, z)

    def du(self, z):
        return np.atleast_2d(z) @ self.Q.T

    @property
    def trace_h(self):
        return float(np.trace(self.Q))


def graph_cap_spec(trh=2.0):
    """Isotropic quadratic graph with the requested trace of h_S."""
    return QuadraticGraph(q11=0.5 * trh, q22=0.5 * trh, q12=0.0)


FIXTURE_BUILDERS = {
    "icosphere": lambda level=4, **kw: icosphere(int(level)),
    "octasphere": lambda level=4, **kw: octasphere(int(level)),
    "halfsphere": lambda level=4, **kw: halfsphere(int(level)),
    "disk": lambda rings=8, **kw: disk(int(rings)),
    "cap_on_ball": lambda r=0.2, rings=12, **kw: cap_on_ball(float(r), int(rings)),
    "equator_cap": lambda apex=0.1, rings=12, tilt_deg=0.0, **kw:
        equator_cap(float(apex), int(rings), float(tilt_deg)),
    "tilted_boundary_cap": lambda deviation_deg=10.0, rings=12, **kw:
        tilted_boundary_cap(float(deviation_deg), int(rings)),
    "cylinder_strip": lambda n_theta=48, n_z=8, **kw:
        cylinder_strip(n_theta=int(n_theta), n_z=int(n_z)),
}


def build_fixture(name, **params):
    if name not in FIXTURE_BUILDERS:
        raise UnknownFixture(f"unknown fixture {name!r}; known: "
                             + ", ".join(sorted(FIXTURE_BUILDERS)))
    return FIXTURE_BUILDERS[name](**params)
