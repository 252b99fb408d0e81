"""Weak-identity residuals for discrete orthogonal surfaces.

The central object is the integral identity defining orthogonal boundary
behavior: for test functions phi(x, P),

    int ( D_P phi . B  +  <tr B, phi>  +  <D_x phi, P> ) dV
        = - int <nu_S(x), phi(x, nu_S(x) ^ Q)> dGamma(x, Q),

evaluated by lumped vertex quadrature on the interior and edge-midpoint
quadrature on the boundary, with Q the boundary tangent line. The residual
of a discrete surface is |interior + boundary|, normalized per test
function by (1 + |phi|_C1)(M(V) + M(Gamma)).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._util import unit, write_csv
from .errors import BoundaryOffSurface


@dataclass
class TestFunction:
    """phi: R^n x R^{nxn} -> R^n with evaluable derivatives.

    `value(x, P)` and `dx(x, P)` take (N, n) points and (N, n, n)
    projections; `dp_contract(x, P, B)` returns the contraction
    d phi^i / d P^k_j B^k_{ij} against the (N, n, n, n) curvature tensor
    (B[v, c, a, b] = <B(e_a, e_b), e_c>).
    """

    tag: str
    value: callable
    dx: callable
    dp_contract: callable = None

    def dp(self, x, P, B):
        if self.dp_contract is None:
            return np.zeros(len(np.atleast_2d(x)))
        return self.dp_contract(x, P, B)


def _const(c):
    c = np.asarray(c, dtype=float)

    def value(x, P):
        return np.broadcast_to(c, (len(x), len(c))).copy()

    def dx(x, P):
        return np.zeros((len(x), len(c), len(c)))

    return TestFunction(tag=f"const_{np.argmax(np.abs(c))}", value=value, dx=dx)


def _radial(x0, n):
    x0 = np.asarray(x0, dtype=float)

    def value(x, P):
        return x - x0

    def dx(x, P):
        return np.broadcast_to(np.eye(n), (len(x), n, n)).copy()

    return TestFunction(tag="radial", value=value, dx=dx)


def _linear(M, tag):
    M = np.asarray(M, dtype=float)

    def value(x, P):
        return x @ M.T

    def dx(x, P):
        return np.broadcast_to(M, (len(x), *M.shape)).copy()

    return TestFunction(tag=tag, value=value, dx=dx)


def _sin_bump(a, b, c, tag):
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)

    def value(x, P):
        return np.sin(x @ a + b)[:, None] * c[None]

    def dx(x, P):
        return np.cos(x @ a + b)[:, None, None] * c[:, None] * a[None, None, :]

    return TestFunction(tag=tag, value=value, dx=dx)


def _projected(c, freq, tag):
    """phi(x, P) = psi(x) P c with psi(x) = sin(freq . x) (or 1 when freq
    is None); exercises the D_P term."""
    c = np.asarray(c, dtype=float)
    freq = None if freq is None else np.asarray(freq, dtype=float)

    def psi(x):
        return np.ones(len(x)) if freq is None else np.sin(x @ freq)

    def dpsi(x):
        if freq is None:
            return np.zeros_like(x)
        return np.cos(x @ freq)[:, None] * freq[None]

    def value(x, P):
        return psi(x)[:, None] * np.einsum("vij,j->vi", P, c)

    def dx(x, P):
        Pc = np.einsum("vij,j->vi", P, c)
        return Pc[:, :, None] * dpsi(x)[:, None, :]

    def dp_contract(x, P, B):
        # d(psi P^i_k c^k)/d P^k_j = psi delta^i_k c^j, contracted with
        # B^k_{ij}: psi * sum_ij c^j B^i_{ij}
        return psi(x) * np.einsum("viij,j->v", B, c)

    return TestFunction(tag=tag, value=value, dx=dx, dp_contract=dp_contract)


@dataclass
class TestFunctionBank:
    functions: list

    @classmethod
    def default(cls, n=3, center=(0.0, 0.0, 0.0)):
        """Constants, linear maps, smooth bumps and P-dependent functions;
        small but spanning both the D_x and D_P terms."""
        fns = [_const(np.eye(n)[k]) for k in range(n)]
        fns.append(_radial(center, n))
        M = np.eye(n) + 0.25 * (np.arange(n * n).reshape(n, n) % 3 - 1)
        fns.append(_linear(M, "linear_generic"))
        fns.append(_sin_bump(np.array([1.3, 0.0, 0.7]), 0.4,
                             np.array([0.0, 1.0, 0.2]), "bump_a"))
        fns.append(_sin_bump(np.array([0.0, 1.1, -0.5]), -0.2,
                             np.array([1.0, 0.0, -0.3]), "bump_b"))
        fns.append(_projected(np.array([0.3, 1.0, 0.5]), None, "proj_const"))
        fns.append(_projected(np.array([1.0, -0.4, 0.2]),
                              np.array([0.9, 1.2, 0.0]), "proj_sin"))
        return cls(functions=fns)


@dataclass
class IdentityResidual:
    tags: list
    lhs: np.ndarray        # interior integral per test function
    rhs: np.ndarray        # boundary integral per test function
    residual: np.ndarray   # normalized |lhs + rhs|
    skipped_edges: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    def write_csv(self, path, config_parts=()):
        rows = [(t, l, r, s) for t, l, r, s in
                zip(self.tags, self.lhs, self.rhs, self.residual)]
        write_csv(path, ("tag", "lhs", "rhs", "residual"), rows, config_parts)


def boundary_quadrature(mesh, domain, degenerate_dot=0.99):
    """Edge midpoints projected to S, lengths, nu_S there and the projection
    matrix of the m-plane nu_S ^ Q (Q the edge tangent line). Edges whose
    tangent is nearly parallel to nu_S are flagged degenerate and skipped."""
    be = mesh.boundary_edges
    if len(be) == 0:
        raise BoundaryOffSurface("mesh has no boundary")
    a = mesh.vertices[be[:, 0]]
    b = mesh.vertices[be[:, 1]]
    mid = 0.5 * (a + b)
    lengths = np.linalg.norm(b - a, axis=1)
    tau = unit(b - a)
    proj = domain.project_to_surface(mid)
    nu = domain.normal(proj)
    dot = np.abs(np.einsum("ei,ei->e", nu, tau))
    good = dot <= degenerate_dot
    skipped = int(np.sum(~good))
    if skipped:
        warnings.warn(f"{skipped} boundary edges nearly tangent to nu_S "
                      "skipped as degenerate")
    t_perp = unit(tau - np.einsum("ei,ei->e", tau, nu)[:, None] * nu)
    plane = (np.einsum("ei,ej->eij", nu, nu)
             + np.einsum("ei,ej->eij", t_perp, t_perp))
    return proj[good], lengths[good], nu[good], plane[good], skipped


def interior_integral(mesh, fld, phi):
    x = mesh.vertices
    P = fld.projector
    w = fld.area_weight
    terms = (phi.dp(x, P, fld.B)
             + np.einsum("vi,vi->v", fld.H, phi.value(x, P))
             + np.einsum("vij,vij->v", phi.dx(x, P), P))
    return float(np.sum(w * terms))


def boundary_integral(mesh, domain, phi, quad=None):
    pts, lengths, nu, plane, _ = quad or boundary_quadrature(mesh, domain)
    vals = phi.value(pts, plane)
    return float(np.sum(lengths * np.einsum("ei,ei->e", nu, vals)))


def orthogonality_identity_residual(mesh, fld, domain, bank=None,
                                    boundary_tol=1e-6):
    """Per-test-function residuals of the weak orthogonality identity."""
    bank = bank or TestFunctionBank.default(mesh.vertices.shape[1],
                                            domain.interior_anchor())
    bpts = mesh.vertices[mesh.is_boundary_vertex]
    if len(bpts) == 0:
        raise BoundaryOffSurface("mesh has no boundary")
    if np.max(np.abs(domain.distance(bpts))) > boundary_tol * domain.diameter():
        raise BoundaryOffSurface("boundary vertices not on S")
    quad = boundary_quadrature(mesh, domain)
    mass = float(np.sum(fld.area_weight))
    blen = float(np.sum(quad[1]))
    lhs, rhs, res, tags = [], [], [], []
    for phi in bank.functions:
        li = interior_integral(mesh, fld, phi)
        ri = boundary_integral(mesh, domain, phi, quad)
        x = mesh.vertices
        P = fld.projector
        c1 = float(np.max(np.linalg.norm(phi.value(x, P), axis=1))
                   + np.max(np.linalg.norm(phi.dx(x, P).reshape(len(x), -1),
                                           axis=1)))
        tags.append(phi.tag)
        lhs.append(li)
        rhs.append(ri)
        res.append(abs(li + ri) / ((1.0 + c1) * (mass + blen)))
    return IdentityResidual(tags=tags, lhs=np.asarray(lhs),
                            rhs=np.asarray(rhs), residual=np.asarray(res),
                            skipped_edges=quad[4])


def first_variation_residual(mesh, fld, domain, phi):
    """The reduced identity for phi = phi(x): delta V(phi) + <H, phi>-term
    + boundary term; shares quadrature with the general path."""
    x = mesh.vertices
    P = fld.projector
    w = fld.area_weight
    delta_v = float(np.sum(w * np.einsum("vij,vij->v", phi.dx(x, P), P)))
    h_term = float(np.sum(w * np.einsum("vi,vi->v", fld.H, phi.value(x, P))))
    quad = boundary_quadrature(mesh, domain)
    b_term = boundary_integral(mesh, domain, phi, quad)
    return delta_v + h_term + b_term


@dataclass
class MassBoundsReport:
    mass: float
    boundary_mass: float
    b_l1: float
    b_lp_p: float
    p: float
    eps: float
    young_bound: float          # (1/p) eps^-p |B|_p^p + (p-1)/p eps^{p/(p-1)} M
    ratio_mass_to_data: float   # M(V) / (M(Gamma) + |B|_L1)

    def csv_row(self):
        return (self.mass, self.boundary_mass, self.b_l1, self.b_lp_p,
                self.p, self.eps, self.young_bound, self.ratio_mass_to_data)

    CSV_HEADER = ("mass", "boundary_mass", "b_l1", "b_lp_p", "p", "eps",
                  "young_bound", "ratio_mass_to_data")


def mass_bounds_report(mesh, fld, domain=None, p=2.0, eps=1.0):
    """Both sides of the comparable-masses inequalities, plus the Young
    combination replacing |B|_L1 by |B|_Lp^p. No constant is asserted."""
    w = fld.area_weight
    babs = np.sqrt(fld.B_norm2)
    mass = float(np.sum(w))
    blen = mesh.boundary_length
    b_l1 = float(np.sum(w * babs))
    b_lp = float(np.sum(w * babs ** p))
    young = b_lp / (p * eps ** p)
    if p > 1.0:
        young += (p - 1.0) / p * eps ** (p / (p - 1.0)) * mass
    denom = blen + b_l1
    ratio = mass / denom if denom > 0 else float("inf")
    return MassBoundsReport(mass=mass, boundary_mass=blen, b_l1=b_l1,
                            b_lp_p=b_lp, p=p, eps=eps, young_bound=young,
                            ratio_mass_to_data=ratio)


def kappa_ratio(mesh, fld, p=2.0):
    """|B|_Lp^p / M(V): the scale-normalized ratio whose infimum over
    admissible surfaces is the domain's curvature constant."""
    w = fld.area_weight
    b_lp = float(np.sum(w * fld.B_norm2 ** (p / 2.0)))
    return b_lp / float(np.sum(w))
