"""Per-vertex curvature tensors and curvature energies of discrete surfaces.

The second fundamental form A is obtained by quadric fitting over the
two-ring in an iteratively corrected vertex frame, which works in any
codimension. The full curvature tensor B is assembled from A via

    B(v, w) = A(v_t, w_t) + sum_a <A(v_t, tau_a), w_perp> tau_a,

so the identities |B|^2 = 2 |A|^2, tr B = H and the structure relations
B(v, P) in P_perp, <B(v, tau), nu> = <B(v, nu), tau> hold exactly by
construction at every vertex.
"""

from dataclasses import dataclass, field

import numpy as np

from ._util import tangent_basis, unit, write_csv
from .errors import BoundaryOffSurface, DegenerateStencil, PointOutsideTube


@dataclass
class CurvatureField:
    """Per-vertex frames, curvature tensors and lumped area weights."""

    tangents: np.ndarray      # (V, 2, n) orthonormal tangent rows
    normals: np.ndarray       # (V, n-2, n) orthonormal normal rows
    A: np.ndarray             # (V, n-2, 2, 2) components <A(t_a, t_b), nu_k>
    B: np.ndarray             # (V, n, n, n): B[v, c, a, b] = <B(e_a,e_b), e_c>
    H: np.ndarray             # (V, n) mean curvature vector (trace of B)
    K: np.ndarray             # (V,) Gauss curvature, codimension-summed
    area_weight: np.ndarray   # (V,) lumped vertex areas
    meta: dict = field(default_factory=dict)

    @property
    def A_norm2(self):
        return np.sum(self.A ** 2, axis=(1, 2, 3))

    @property
    def B_norm2(self):
        return np.sum(self.B ** 2, axis=(1, 2, 3))

    @property
    def projector(self):
        """(V, n, n) orthogonal projections onto the tangent planes."""
        return np.einsum("vai,vaj->vij", self.tangents, self.tangents)


def assemble_full_form(tangents, normals, A):
    """Ambient curvature tensor B from A and the vertex frame (vectorized)."""
    term1 = np.einsum("vAa,vBb,vKAB,vKc->vcab", tangents, tangents, A, normals)
    term2 = np.einsum("vBa,vKBA,vKb,vAc->vcab", tangents, A, normals, tangents)
    return term1 + term2


def pca_frames(centers, neighbors, mask, orient_normals=None):
    """PCA frames from the neighbor offsets (top-2 directions tangent);
    the first normal is aligned with `orient_normals` when given.
    `centers` is (S, n), `neighbors` is the gathered (S, K, n) stencil."""
    d = (neighbors - centers[:, None, :]) * mask[:, :, None]
    C = np.transpose(d, (0, 2, 1)) @ d
    w, vecs = np.linalg.eigh(C)
    order = np.argsort(w, axis=1)[:, ::-1]
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    tangents = np.transpose(vecs[:, :, :2], (0, 2, 1))
    normals = np.transpose(vecs[:, :, 2:], (0, 2, 1))
    if orient_normals is not None:
        s = np.sign(np.einsum("vi,vi->v", normals[:, 0], orient_normals))
        s = np.where(s == 0.0, 1.0, s)
        normals = normals * s[:, None, None]
    return tangents, normals


def _initial_frames(mesh, idx, mask):
    orient = mesh.vertex_normals if mesh.vertices.shape[1] == 3 else None
    return pca_frames(mesh.vertices, mesh.vertices[idx], mask, orient)


def _fit_quadrics(centers, neighbors, mask, tangents, normals, check=True):
    """Batched least-squares fit of w_k = q1 u^2/2 + q2 uv + q3 v^2/2
    + q4 u + q5 v per normal direction; returns coefficients (S, n-2, 5)."""
    d = neighbors - centers[:, None, :]
    u = d @ tangents[:, 0][:, :, None]
    v = d @ tangents[:, 1][:, :, None]
    u, v = u[:, :, 0], v[:, :, 0]
    w = d @ np.transpose(normals, (0, 2, 1))              # (V, K, n-2)
    X = np.empty(u.shape + (5,))
    X[:, :, 0] = 0.5 * u * u
    X[:, :, 1] = u * v
    X[:, :, 2] = 0.5 * v * v
    X[:, :, 3] = u
    X[:, :, 4] = v
    Xm = np.transpose(X * mask[:, :, None], (0, 2, 1))
    G = Xm @ X
    rhs = Xm @ w
    if check:
        eig = np.linalg.eigvalsh(G)
        scale = np.maximum(eig[:, -1], 1e-300)
        bad = (np.sum(mask, axis=1) < 5) | (eig[:, 0] <= 1e-12 * scale)
        if np.any(bad):
            raise DegenerateStencil(
                f"{int(np.sum(bad))} vertices have rank-deficient stencils")
    q = np.linalg.solve(G, rhs)                           # (V, 5, n-2)
    return np.transpose(q, (0, 2, 1))


def fit_frames_and_quadrics(centers, neighbors, mask, tangents, normals,
                            frame_iterations=2, check=True):
    """Iterated quadric fit: tilt the frame by the fitted linear terms,
    re-orthonormalize, refit. Returns (A, tangents, normals)."""
    n = centers.shape[1]
    for _ in range(frame_iterations):
        q = _fit_quadrics(centers, neighbors, mask, tangents, normals,
                          check=check)
        grad = q[:, :, 3:5]                               # (V, n-2, 2)
        t_new = tangents + np.einsum("vca,vci->vai", grad, normals)
        M = np.concatenate([np.transpose(t_new, (0, 2, 1)),
                            np.transpose(normals, (0, 2, 1))], axis=2)
        Q, _ = np.linalg.qr(M)
        sgn = np.sign(np.einsum("via,vai->va",
                                np.transpose(Q, (0, 2, 1)), M) + 1e-300)
        Q = Q * sgn[:, None, :]
        tangents = np.transpose(Q[:, :, :2], (0, 2, 1))
        normals = np.transpose(Q[:, :, 2:], (0, 2, 1))
    q = _fit_quadrics(centers, neighbors, mask, tangents, normals,
                      check=check)
    A = np.empty((len(centers), n - 2, 2, 2))
    A[:, :, 0, 0] = q[:, :, 0]
    A[:, :, 0, 1] = A[:, :, 1, 0] = q[:, :, 1]
    A[:, :, 1, 1] = q[:, :, 2]
    return A, tangents, normals


def estimate_curvature(mesh, ring=2, frame_iterations=2):
    """Quadric-fitting curvature estimator; see module docstring.

    Raises DegenerateStencil when a vertex has fewer than 5 usable
    neighbors or a rank-deficient design matrix.
    """
    verts = mesh.vertices
    idx, mask = mesh.neighbor_rings(ring)
    tangents, normals = _initial_frames(mesh, idx, mask)
    A, tangents, normals = fit_frames_and_quadrics(
        verts, verts[idx], mask, tangents, normals, frame_iterations)
    B = assemble_full_form(tangents, normals, A)
    H = np.einsum("vcaa->vc", B)
    K = np.sum(A[:, :, 0, 0] * A[:, :, 1, 1] - A[:, :, 0, 1] ** 2, axis=1)
    return CurvatureField(tangents=tangents, normals=normals, A=A, B=B,
                          H=H, K=K, area_weight=mesh.vertex_areas,
                          meta={"ring": ring})


def analytic_sphere_field(mesh, center=(0.0, 0.0, 0.0), radius=1.0):
    """Exact curvature data for a mesh whose vertices lie on a round sphere."""
    verts = mesh.vertices
    out = unit(verts - np.asarray(center, dtype=float))
    t1, t2 = tangent_basis(out)
    tangents = np.stack([t1, t2], axis=1)
    normals = out[:, None, :]
    A = np.zeros((len(verts), 1, 2, 2))
    A[:, 0, 0, 0] = A[:, 0, 1, 1] = -1.0 / radius
    B = assemble_full_form(tangents, normals, A)
    H = np.einsum("vcaa->vc", B)
    return CurvatureField(tangents=tangents, normals=normals, A=A, B=B,
                          H=H, K=np.full(len(verts), 1.0 / radius ** 2),
                          area_weight=mesh.vertex_areas,
                          meta={"analytic": "sphere"})


def vertex_angle_sums(mesh):
    """Sum of incident triangle angles at every vertex."""
    v = mesh.vertices
    t = mesh.triangles
    sums = np.zeros(len(v))
    for k in range(3):
        a = v[t[:, k]]
        b = v[t[:, (k + 1) % 3]]
        c = v[t[:, (k + 2) % 3]]
        e1 = unit(b - a)
        e2 = unit(c - a)
        ang = np.arccos(np.clip(np.sum(e1 * e2, axis=1), -1.0, 1.0))
        np.add.at(sums, t[:, k], ang)
    return sums


def boundary_tangents(mesh):
    """Unit boundary tangent per boundary vertex (central difference along
    the loop) and the lumped boundary length element."""
    v = mesh.vertices
    tau = np.zeros_like(v)
    ds = np.zeros(len(v))
    for loop in mesh.boundary_loops:
        p = v[loop]
        nxt = np.roll(p, -1, axis=0)
        prv = np.roll(p, 1, axis=0)
        tau[loop] = unit(nxt - prv)
        ds[loop] = 0.5 * (np.linalg.norm(nxt - p, axis=1)
                          + np.linalg.norm(p - prv, axis=1))
    return tau, ds


def conormals(mesh, fld=None):
    """Discrete interior co-normal at boundary vertices: the unit tangent of
    the surface orthogonal to the boundary direction, pointing inward."""
    fld = estimate_curvature(mesh) if fld is None else fld
    v = mesh.vertices
    tau, _ = boundary_tangents(mesh)
    idx, mask = mesh.neighbor_rings(1)
    counts = np.maximum(np.sum(mask, axis=1), 1)
    centroid = np.einsum("vki,vk->vi", v[idx], mask.astype(float)) / counts[:, None]
    inward = centroid - v
    P = fld.projector
    eta = np.einsum("vij,vj->vi", P, inward)
    eta = eta - np.einsum("vi,vi->v", eta, tau)[:, None] * tau
    eta = unit(eta)
    flip = np.einsum("vi,vi->v", eta, inward) < 0
    eta[flip] *= -1.0
    return eta


def boundary_turning(mesh, fld):
    """Signed in-surface turning angle (the lumped kappa_g ds) per boundary
    vertex: successive boundary edges are projected into the fitted tangent
    plane and the angle is measured toward the interior co-normal."""
    v = mesh.vertices
    eta = conormals(mesh, fld)
    P = fld.projector
    turning = np.zeros(len(v))
    _, ds = boundary_tangents(mesh)
    for loop in mesh.boundary_loops:
        p = v[loop]
        e_in = p - np.roll(p, 1, axis=0)
        e_out = np.roll(p, -1, axis=0) - p
        Pl = P[loop]
        t_hat = unit(np.einsum("vij,vj->vi", Pl, e_in))
        h = eta[loop] - np.einsum("vi,vi->v", eta[loop], t_hat)[:, None] * t_hat
        h_hat = unit(h)
        po = np.einsum("vij,vj->vi", Pl, e_out)
        turning[loop] = np.arctan2(np.einsum("vi,vi->v", po, h_hat),
                                   np.einsum("vi,vi->v", po, t_hat))
    return turning, ds


def geodesic_boundary_curvature(mesh, domain, fld=None, tol_factor=50.0):
    """Intrinsic (turning-angle) and extrinsic (h_S(tau, tau)) geodesic
    curvature per boundary vertex.

    Returns (boundary_vertex_indices, kappa_intrinsic, kappa_extrinsic).
    Raises BoundaryOffSurface if boundary vertices are not on S.
    """
    bidx = np.where(mesh.is_boundary_vertex)[0]
    if len(bidx) == 0:
        return bidx, np.zeros(0), np.zeros(0)
    pts = mesh.vertices[bidx]
    try:
        d = domain.distance(pts)
    except Exception as exc:
        raise BoundaryOffSurface(str(exc)) from exc
    if np.max(np.abs(d)) > tol_factor * domain.tol_proj + 1e-9 * domain.diameter():
        raise BoundaryOffSurface(
            f"max |d_S| on boundary = {np.max(np.abs(d)):.3g}")
    fld = estimate_curvature(mesh) if fld is None else fld
    turning, ds = boundary_turning(mesh, fld)
    kappa_int = turning[bidx] / ds[bidx]
    # extrinsic: h_S(tau, tau) = <D grad d_S tau, tau> at the projected point
    tau, _ = boundary_tangents(mesh)
    proj = domain.project_to_surface(pts)
    Hs = domain.hessian(proj)
    kappa_ext = np.einsum("vij,vi,vj->v", Hs, tau[bidx], tau[bidx])
    return bidx, kappa_int, kappa_ext


@dataclass
class EnergyReport:
    area: float
    boundary_length: float
    euler_char: int
    energy_A_p: float
    energy_B_p: float
    energy_H_2: float
    gauss_bonnet_residual: float
    orthogonality_angle_max: float
    p: float = 2.0

    CSV_HEADER = ("area", "boundary_length", "euler_char", "energy_A_p",
                  "energy_B_p", "energy_H_2", "gb_residual", "ortho_angle_max")

    def csv_row(self):
        return (self.area, self.boundary_length, self.euler_char,
                self.energy_A_p, self.energy_B_p, self.energy_H_2,
                self.gauss_bonnet_residual, self.orthogonality_angle_max)

    def write_csv(self, path, config_parts=()):
        write_csv(path, self.CSV_HEADER, [self.csv_row()], config_parts)


def orthogonality_angles(mesh, domain, fld=None):
    """Angle between the discrete co-normal and nu_S per boundary vertex
    (radians); pi for vertices outside the projection tube."""
    bidx = np.where(mesh.is_boundary_vertex)[0]
    if len(bidx) == 0:
        return bidx, np.zeros(0)
    eta = conormals(mesh, fld)[bidx]
    angles = np.full(len(bidx), np.pi)
    for k, (i, e) in enumerate(zip(bidx, eta)):
        try:
            nu = domain.normal(domain.project_to_surface(mesh.vertices[i]))
            domain._check_tube(mesh.vertices[i])
        except PointOutsideTube:
            continue
        angles[k] = np.arccos(np.clip(np.dot(e, nu), -1.0, 1.0))
    return bidx, angles


def energy_report(mesh, fld, p=2.0, domain=None):
    """Lumped-quadrature curvature energies, combinatorial Euler number and
    the Gauss-Bonnet residual |int K + int kappa_g - 2 pi chi|."""
    w = fld.area_weight
    a2 = fld.A_norm2
    eA = float(np.sum(w * a2 ** (p / 2.0)))
    eB = float(np.sum(w * fld.B_norm2 ** (p / 2.0)))
    eH = float(np.sum(w * np.sum(fld.H ** 2, axis=1)))
    chi = mesh.euler_characteristic
    turning = 0.0
    if len(mesh.boundary_edges):
        turning = float(np.sum(boundary_turning(mesh, fld)[0]))
    gb = abs(float(np.sum(w * fld.K)) + turning - 2.0 * np.pi * chi)
    ortho = float("nan")
    if domain is not None:
        _, angles = orthogonality_angles(mesh, domain, fld)
        ortho = float(np.max(angles)) if len(angles) else 0.0
    return EnergyReport(area=float(np.sum(w)),
                        boundary_length=mesh.boundary_length,
                        euler_char=chi, energy_A_p=eA, energy_B_p=eB,
                        energy_H_2=eH, gauss_bonnet_residual=gb,
                        orthogonality_angle_max=ortho, p=p)
