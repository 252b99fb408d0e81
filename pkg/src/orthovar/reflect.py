"""Reflection across the boundary: pullback metrics, Riemannian first
variation, and the doubled surface.

The mean curvature of a varifold measured in a metric G decomposes into
three terms: a P-derivative of the Riemannian area element contracted with
the curvature tensor, an x-derivative of the same, and a metric-derivative
trace. All P-derivatives are taken by central differences on the projection
manifold (perturb along the tangent direction, re-project by eigenvalue
truncation); this finite-difference path is the correctness anchor, checked
against flow derivatives of the Riemannian mass.

Note the metric-derivative term carries a factor 1/2 relative to the other
two (it enters the area-element variation through the square root of the
metric determinant); with it, the boundary specialization reproduces

    H_g = H - 2 Delta_P d_S P_perp nu_S + 4 P_perp D grad d_S P nu_S

exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from ._util import tangent_basis, unit, write_csv
from .curvature import estimate_curvature
from .domain import Ball
from .errors import BoundaryNotOnSurface, MetricNotInvertible, PointOutsideTube
from .surface import SurfaceMesh


# ---------------------------------------------------------------------------
# metric fields
# ---------------------------------------------------------------------------

class MetricField:
    """Riemannian metric on (a tube of) R^n with evaluable derivative.

    `G(pts)` returns (N, n, n); `DG(pts)` returns (N, n, n, n) with the last
    index the derivative direction: DG[v, i, j, k] = d G_ij / d x^k.
    """

    provenance = "synthetic-test-metric"

    def G(self, pts):
        raise NotImplementedError

    def DG(self, pts, step=1e-6):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        out = np.empty((len(pts), n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            out[:, :, :, k] = (self.G(pts + e) - self.G(pts - e)) / (2 * step)
        return out


class IdentityMetric(MetricField):
    def G(self, pts):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(np.eye(pts.shape[1]),
                               (len(pts), pts.shape[1], pts.shape[1])).copy()

    def DG(self, pts, step=None):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        return np.zeros((len(pts), n, n, n))


class ConformalMetric(MetricField):
    """G = c^2 identity, constant."""

    def __init__(self, c):
        self.c = float(c)

    def G(self, pts):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        return self.c ** 2 * np.broadcast_to(np.eye(n),
                                             (len(pts), n, n)).copy()

    def DG(self, pts, step=None):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        return np.zeros((len(pts), n, n, n))


class SyntheticMetric(MetricField):
    """Smooth SPD perturbation of the identity with analytic derivatives:
    G = I + amp * sum_k sin(a_k . x + b_k) S_k for fixed symmetric S_k."""

    def __init__(self, amp=0.15, seed=3):
        rng = np.random.default_rng(seed)
        self.amp = float(amp)
        self.waves = []
        for _ in range(3):
            a = rng.uniform(-1.5, 1.5, 3)
            b = rng.uniform(0, 2 * np.pi)
            S = rng.uniform(-1, 1, (3, 3))
            S = 0.5 * (S + S.T)
            S /= np.linalg.norm(S)
            self.waves.append((a, b, S))

    def G(self, pts):
        pts = np.atleast_2d(pts)
        out = np.broadcast_to(np.eye(3), (len(pts), 3, 3)).copy()
        for a, b, S in self.waves:
            out += self.amp * np.sin(pts @ a + b)[:, None, None] * S[None]
        return out

    def DG(self, pts, step=None):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), 3, 3, 3))
        for a, b, S in self.waves:
            c = self.amp * np.cos(pts @ a + b)
            out += c[:, None, None, None] * S[None, :, :, None] \
                * a[None, None, None, :]
        return out


class PullbackMetric(MetricField):
    """g_ij = <d_i sigma, d_j sigma> for the reflection across S, by central
    differences of sigma (or analytically for the ball)."""

    provenance = "pullback-of-sigma"

    def __init__(self, domain, step=None):
        self.domain = domain
        self.step = step or 1e-6 * domain.diameter()

    def sigma_jacobian(self, pts):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        J = np.empty((len(pts), n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = self.step
            J[:, :, j] = (self.domain.reflect(pts + e)
                          - self.domain.reflect(pts - e)) / (2 * self.step)
        return J

    def G(self, pts):
        J = self.sigma_jacobian(pts)
        return np.einsum("vki,vkj->vij", J, J)

    def DG(self, pts, step=None):
        return super().DG(pts, step=step or 10 * self.step)


class BallPullbackMetric(PullbackMetric):
    """Closed-form pullback metric of the radial reflection of a ball:
    G = a^2 (I - rh rh^T) + rh rh^T with a = 2R/r - 1."""

    def __init__(self, domain):
        if not isinstance(domain, Ball):
            raise ValueError("BallPullbackMetric needs a Ball domain")
        super().__init__(domain)

    def sigma_jacobian(self, pts):
        return self.domain.reflect_jacobian(np.atleast_2d(pts))

    def G(self, pts):
        pts = np.atleast_2d(pts)
        q = pts - self.domain.center
        r = np.linalg.norm(q, axis=1)
        rh = q / r[:, None]
        a = 2.0 * self.domain.radius / r - 1.0
        eye = np.eye(pts.shape[1])[None]
        outer = rh[:, :, None] * rh[:, None, :]
        return (a ** 2)[:, None, None] * (eye - outer) + outer

    def DG(self, pts, step=None):
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        q = pts - self.domain.center
        r = np.linalg.norm(q, axis=1)
        rh = q / r[:, None]
        R = self.domain.radius
        a = 2.0 * R / r - 1.0
        da = -2.0 * R / r ** 2          # radial derivative of a
        eye = np.eye(n)
        outer = rh[:, :, None] * rh[:, None, :]
        P_perp = eye[None] - outer      # projection off the radial direction
        out = np.empty((len(pts), n, n, n))
        for k in range(n):
            ek = eye[k]
            radial = np.einsum("vi,i->v", rh, ek)
            drh = (P_perp @ ek[:, None])[:, :, 0] / r[:, None]
            douter = drh[:, :, None] * rh[:, None, :] \
                + rh[:, :, None] * drh[:, None, :]
            out[:, :, :, k] = (2 * a * da * radial)[:, None, None] * P_perp \
                + (1 - a ** 2)[:, None, None] * douter
        return out


def pullback_metric(domain, step=None):
    """Pullback metric of the reflection, analytic where available."""
    if isinstance(domain, Ball):
        return BallPullbackMetric(domain)
    return PullbackMetric(domain, step=step)


# ---------------------------------------------------------------------------
# Riemannian area elements
# ---------------------------------------------------------------------------

def _basis_of_projection(P, m):
    """Batched orthonormal basis (columns) of the ranges of (N, n, n)
    projection matrices."""
    w, v = np.linalg.eigh(0.5 * (P + np.transpose(P, (0, 2, 1))))
    return v[:, :, ::-1][:, :, :m]


def jg_q(G, basis):
    """Riemannian area element JG and g-orthogonal projection Q onto the
    span of `basis` (N, n, m), for metrics G (N, n, n)."""
    g = np.einsum("via,vij,vjb->vab", basis, G, basis)
    det = np.linalg.det(g)
    if np.any(det <= 0):
        raise MetricNotInvertible("metric degenerate on a tangent plane")
    JG = np.sqrt(det)
    ginv = np.linalg.inv(g)
    Q = np.einsum("via,vab,vjb,vjk->vik", basis, ginv, basis, G)
    return JG, Q


def riemannian_mass(mesh, metric):
    """M^g(V) = sum of JG(x, P) over the lumped vertex measure, with P the
    discrete (vertex-normal) tangent plane."""
    nrm = mesh.vertex_normals
    t1, t2 = tangent_basis(nrm)
    basis = np.stack([t1, t2], axis=2)
    JG, _ = jg_q(metric.G(mesh.vertices), basis)
    return float(np.sum(mesh.vertex_areas * JG))


# ---------------------------------------------------------------------------
# H_g: the metric mean curvature
# ---------------------------------------------------------------------------

def _project_grassmannian_batch(P, m):
    w, v = np.linalg.eigh(0.5 * (P + np.transpose(P, (0, 2, 1))))
    top = v[:, :, ::-1][:, :, :m]
    return np.einsum("via,vja->vij", top, top)


def h_g_field(points, projectors, B, metric, m=2, step_p=1e-5, step_x=None):
    """Metric mean curvature H_g at sample points carrying tangent planes
    and curvature tensors (B[v, c, a, b] = <B(e_a, e_b), e_c>).

    All three terms are assembled with central differences: the P-derivative
    on the projection manifold, the x-derivative through the metric.
    """
    pts = np.atleast_2d(points)
    N, n = pts.shape
    step_x = step_x or 1e-5
    Gm = metric.G(pts)
    if np.any(np.linalg.det(Gm) <= 0):
        raise MetricNotInvertible("metric not positive definite")
    Ginv = np.linalg.inv(Gm)
    basis = _basis_of_projection(projectors, m)
    JG, Q = jg_q(Gm, basis)

    # term 1: P-derivative of (JG Q) contracted against the Gauss-map
    # derivative directions M^(i) = B(e_i, .)
    psi1 = np.zeros((N, n))
    for i in range(n):
        M = B[:, :, i, :]                       # (N, n, n), symmetric
        Pp = _project_grassmannian_batch(projectors + step_p * M, m)
        Pm = _project_grassmannian_batch(projectors - step_p * M, m)
        bp = _basis_of_projection(Pp, m)
        bm = _basis_of_projection(Pm, m)
        JGp, Qp = jg_q(Gm, bp)
        JGm, Qm = jg_q(Gm, bm)
        D = (JGp[:, None, None] * Qp - JGm[:, None, None] * Qm) / (2 * step_p)
        psi1 += D[:, i, :]
    phi1 = np.einsum("vij,vj->vi", Ginv, psi1) / JG[:, None]

    # term 2: x-derivative of (JG Q) against P e_j
    psi2 = np.zeros((N, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step_x
        JGp, Qp = jg_q(metric.G(pts + e), basis)
        JGm, Qm = jg_q(metric.G(pts - e), basis)
        D = (JGp[:, None, None] * Qp - JGm[:, None, None] * Qm) / (2 * step_x)
        Pej = projectors[:, :, j]
        psi2 += np.einsum("vki,vk->vi", D, Pej)
    phi2 = np.einsum("vij,vj->vi", Ginv, psi2) / JG[:, None]

    # term 3: metric-derivative trace (factor 1/2, see module docstring)
    DGm = metric.DG(pts)
    QGinvDG = np.einsum("vik,vkl,vlmj->vimj", Q, Ginv, DGm)
    v3 = np.einsum("vimj,vim->vj", QGinvDG, projectors)
    phi3 = -0.5 * np.einsum("vij,vj->vi", Ginv, v3)

    return phi1 + phi2 + phi3


def h_g_on_mesh(mesh, fld, metric, **kw):
    return h_g_field(mesh.vertices, fld.projector, fld.B, metric, **kw)


def h_g_boundary_formula(domain, points, projectors, H):
    """Closed-form H_g on S: H - 2 Delta_P d_S P_perp nu_S
    + 4 P_perp (D grad d_S) P nu_S."""
    pts = np.atleast_2d(points)
    nu = domain.normal(pts)
    Hess = domain.hessian(pts)
    n = pts.shape[1]
    Pperp = np.eye(n)[None] - projectors
    lap_p = np.einsum("vij,vij->v", projectors, Hess)
    t1 = -2.0 * lap_p[:, None] * np.einsum("vij,vj->vi", Pperp, nu)
    Pnu = np.einsum("vij,vj->vi", projectors, nu)
    t2 = 4.0 * np.einsum("vij,vjk,vk->vi", Pperp, Hess, Pnu)
    return H + t1 + t2


def first_variation_from_hg(mesh, fld, metric, X_values):
    """delta V^g(X) = -sum w <G H_g, X> JG over vertices."""
    Hg = h_g_on_mesh(mesh, fld, metric)
    Gm = metric.G(mesh.vertices)
    basis = _basis_of_projection(fld.projector, 2)
    JG, _ = jg_q(Gm, basis)
    integrand = np.einsum("vij,vj,vi->v", Gm, Hg, X_values)
    return -float(np.sum(fld.area_weight * integrand * JG))


def flow_mass_derivative(mesh, metric, X, t=1e-5):
    """Central difference of the Riemannian mass along the flow x + t X(x)."""
    Xv = X(mesh.vertices)
    mp = riemannian_mass(mesh.with_vertices(mesh.vertices + t * Xv), metric)
    mm = riemannian_mass(mesh.with_vertices(mesh.vertices - t * Xv), metric)
    return (mp - mm) / (2 * t)


# ---------------------------------------------------------------------------
# reflected surface
# ---------------------------------------------------------------------------

@dataclass
class ReflectedSurface:
    mesh_W: SurfaceMesh
    H_W: np.ndarray
    weights: np.ndarray
    seam: np.ndarray              # vertex indices on S (multiplicity 2)
    meta: dict = field(default_factory=dict)

    @property
    def energy_H2(self):
        return float(np.sum(self.weights
                            * np.sum(self.H_W ** 2, axis=1)))


def _sigma_jacobian(domain, pts, metric=None):
    if isinstance(domain, Ball):
        return domain.reflect_jacobian(pts)
    pm = metric if isinstance(metric, PullbackMetric) \
        else PullbackMetric(domain)
    return pm.sigma_jacobian(pts)


def reflect_surface(mesh, fld, domain, metric=None, boundary_tol=1e-6,
                    clip_depth=0.95):
    """Glue the mesh with its reflection across S along the boundary.

    H_W is the mesh mean curvature on the original sheet, the pushforward
    (D sigma . H_g) o sigma on the mirrored sheet, and the boundary formula
    P_S^T H_V + Delta_P d_S nu_S at seam vertices (with P the glued mesh's
    discrete tangent plane there). Triangles whose preimage is deeper than
    clip_depth * reach are dropped (the reflection is singular past the
    reach)."""
    verts = mesh.vertices
    d = domain.distance(verts)
    bidx = np.where(mesh.is_boundary_vertex)[0]
    if len(bidx) == 0 or np.max(np.abs(d[bidx])) > boundary_tol * domain.diameter():
        raise BoundaryNotOnSurface("mesh boundary must lie on S")
    metric = metric or pullback_metric(domain)

    inner = np.where(~mesh.is_boundary_vertex)[0]
    deep = np.abs(d) >= clip_depth * domain.reach
    keep_inner = inner[~deep[inner]]
    mirrored = domain.reflect(verts[keep_inner])
    new_index = {int(v): len(verts) + k for k, v in enumerate(keep_inner)}
    for b in bidx:
        new_index[int(b)] = int(b)

    tris_m = []
    for tri in mesh.triangles:
        if all(int(v) in new_index for v in tri):
            a, b, c = (new_index[int(v)] for v in tri)
            tris_m.append([a, c, b])      # sigma reverses orientation
    verts_W = np.concatenate([verts, mirrored])
    tris_W = np.concatenate([mesh.triangles, np.asarray(tris_m)])
    mesh_W = SurfaceMesh(verts_W, tris_W, validate=False)

    # mean curvature per region
    H_W = np.zeros_like(verts_W)
    H_W[:len(verts)] = fld.H
    if len(keep_inner):
        Hg = h_g_field(verts[keep_inner], fld.projector[keep_inner],
                       fld.B[keep_inner], metric)
        Dsig = _sigma_jacobian(domain, verts[keep_inner], metric)
        H_W[len(verts):] = np.einsum("vij,vj->vi", Dsig, Hg)

    # seam: boundary formula with the glued mesh's tangent plane
    nrm = mesh_W.vertex_normals[bidx]
    t1, t2 = tangent_basis(nrm)
    P_seam = np.einsum("vi,vj->vij", t1, t1) + np.einsum("vi,vj->vij", t2, t2)
    pts_b = domain.project_to_surface(verts[bidx])
    nu = domain.normal(pts_b)
    Hess = domain.hessian(pts_b)
    lap_p = np.einsum("vij,vij->v", P_seam, Hess)
    HV_b = fld.H[bidx]
    H_W[bidx] = HV_b - np.einsum("vi,vi->v", HV_b, nu)[:, None] * nu \
        + lap_p[:, None] * nu

    return ReflectedSurface(mesh_W=mesh_W, H_W=H_W,
                            weights=mesh_W.vertex_areas, seam=bidx,
                            meta={"clipped": int(len(inner) - len(keep_inner))})


@dataclass
class ReflectedEnergyRecord:
    lhs: float                 # int |H_W|^2
    hv2_term: float            # 2 int |H_V|^2
    b2_term: float             # int |B_V|^2
    mass: float
    eps_measured: float
    lambda_measured: float
    c_fit: float
    slack: float

    CSV_HEADER = ("lhs", "2_int_HV2", "int_BV2", "mass", "eps", "lambda",
                  "c_fit", "slack")

    def csv_row(self):
        return (self.lhs, self.hv2_term, self.b2_term, self.mass,
                self.eps_measured, self.lambda_measured, self.c_fit,
                self.slack)


def reflected_energy_check(mesh, fld, domain, eps=None, lam=None,
                           metric=None, c_apply=None):
    """Both sides of the reflected-energy inequality
    int |H_W|^2 <= 2 int |H_V|^2 + C (eps int |B_V|^2 + M(V)),
    with eps and Lambda measured on the mesh unless supplied, and C fitted
    (the smallest value closing the gap) unless `c_apply` is given."""
    metric = metric or pullback_metric(domain)
    refl = reflect_surface(mesh, fld, domain, metric=metric)
    lhs = refl.energy_H2
    w = fld.area_weight
    hv2 = 2.0 * float(np.sum(w * np.sum(fld.H ** 2, axis=1)))
    b2 = float(np.sum(w * fld.B_norm2))
    mass = float(np.sum(w))
    Gm = metric.G(mesh.vertices)
    eps_m = eps if eps is not None else float(
        np.max(np.linalg.norm(Gm - np.eye(3)[None], axis=(1, 2))))
    DGm = metric.DG(mesh.vertices)
    lam_m = lam if lam is not None else float(
        np.max(np.sqrt(np.sum(DGm ** 2, axis=(1, 2, 3)))))
    denom = eps_m * b2 + mass
    c_fit = max(0.0, (lhs - hv2) / denom) if denom > 0 else 0.0
    c_use = c_fit if c_apply is None else c_apply
    slack = hv2 + c_use * denom - lhs
    return ReflectedEnergyRecord(lhs=lhs, hv2_term=hv2, b2_term=b2,
                                 mass=mass, eps_measured=eps_m,
                                 lambda_measured=lam_m, c_fit=c_fit,
                                 slack=slack)


def write_reflect_report(path, records, config_parts=()):
    write_csv(path, ReflectedEnergyRecord.CSV_HEADER,
              [r.csv_row() for r in records], config_parts)
