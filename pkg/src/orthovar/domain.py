"""Implicit domains: signed distance, boundary frames, projection, reflection.

Conventions used throughout the toolkit:
  * the signed distance d_S is negative inside the domain,
  * the interior unit normal is nu_S = -grad d_S,
  * the boundary shape operator is h_S(v, w) = <D grad d_S . v, w> on the
    tangent plane, so the unit sphere has h_S = identity and the geodesic
    curvature of an orthogonally attached boundary curve equals h_S(tau, tau).
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from ._util import tangent_basis, unit
from .errors import ConfigError, NoConvergence, OffsetTooLarge, PointOutsideTube


@dataclass
class BoundaryFrame:
    """Orthonormal frame of the boundary at a projected point."""

    point: np.ndarray          # x in S
    normal: np.ndarray         # interior unit normal nu_S(x)
    tangent_basis: np.ndarray  # (n-1, n) rows spanning T_x S
    shape: np.ndarray          # (n-1, n-1) matrix of h_S in tangent_basis


@dataclass
class SurfaceSamples:
    """Point sample of the boundary with normals and a triangulation,
    used by the slice machinery for on-surface contouring."""

    points: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    meta: dict = field(default_factory=dict)


class ImplicitDomain:
    """Domain given by an evaluable signed distance with derivatives.

    Subclasses implement `_distance` on (N, n) arrays and may override
    `_gradient` / `_hessian`. All public evaluators accept single points
    or batches.
    """

    kind = "custom"
    dim = 3

    def __init__(self, bbox, reach, tol_proj=1e-10):
        self.bbox = np.asarray(bbox, dtype=float)
        self.reach = float(reach)
        self.tol_proj = float(tol_proj)
        self._samples_cache = {}

    # -- evaluators -------------------------------------------------------

    def _distance(self, pts):
        raise NotImplementedError

    def _gradient(self, pts):
        h = 1e-7 * self.diameter()
        g = np.empty_like(pts)
        for j in range(pts.shape[1]):
            e = np.zeros(pts.shape[1])
            e[j] = h
            g[:, j] = (self._distance(pts + e) - self._distance(pts - e)) / (2 * h)
        return g

    def _hessian(self, pts):
        h = 1e-5 * self.diameter()
        n = pts.shape[1]
        H = np.empty((len(pts), n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            H[:, :, j] = (self._gradient(pts + e) - self._gradient(pts - e)) / (2 * h)
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))

    def _batched(self, fn, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = fn(np.atleast_2d(x))
        return out[0] if single else out

    def distance(self, x):
        return self._batched(self._distance, x)

    def gradient(self, x):
        return self._batched(self._gradient, x)

    def hessian(self, x):
        return self._batched(self._hessian, x)

    def normal(self, x):
        """Interior unit normal nu_S = -grad d_S (evaluable off S as well)."""
        return self._batched(lambda p: -unit(self._gradient(p)), x)

    def diameter(self):
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    # -- derived geometry --------------------------------------------------

    def _check_tube(self, x):
        d = np.atleast_1d(self.distance(x))
        if np.any(np.abs(d) >= self.reach):
            raise PointOutsideTube(
                f"|d_S| = {np.max(np.abs(d)):.3g} >= reach = {self.reach:.3g}")

    def project_to_surface(self, x, max_iter=50):
        """Nearest-point projection pi_S, Newton-refined along grad d_S."""
        self._check_tube(x)
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        y = np.atleast_2d(x).copy()
        tol = self.tol_proj
        for _ in range(max_iter):
            d = self._distance(y)
            if np.all(np.abs(d) <= tol):
                break
            y = y - d[:, None] * unit(self._gradient(y))
        else:
            raise NoConvergence("projection Newton did not reach tol_proj")
        return y[0] if single else y

    def reflect(self, x):
        """Reflection across S: x + r nu_S(x0) -> x0 - r nu_S(x0)."""
        self._check_tube(x)
        p = self.project_to_surface(x)
        return 2.0 * p - np.asarray(x, dtype=float)

    def boundary_frame(self, x):
        """Frame (point, normal, tangents, shape) at pi_S(x)."""
        self._check_tube(x)
        p = self.project_to_surface(np.asarray(x, dtype=float))
        nu = -unit(self.gradient(p))
        t1, t2 = tangent_basis(nu)
        T = np.stack([t1, t2])
        H = self.hessian(p)
        shape = T @ H @ T.T
        return BoundaryFrame(point=p, normal=nu, tangent_basis=T,
                             shape=0.5 * (shape + shape.T))

    def fermi(self, x, v, eps0=0.9):
        """Fermi map E(x, v) = pi_S(x + v) for offsets |v| < eps0 * reach."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.max(np.linalg.norm(np.atleast_2d(v), axis=1)) >= eps0 * self.reach:
            raise OffsetTooLarge("fermi offset exceeds configured reach fraction")
        return self.project_to_surface(x + v)

    def interior_anchor(self):
        """A point well inside the domain (used for seeding and signs)."""
        return 0.5 * (self.bbox[0] + self.bbox[1])

    def sample_tube(self, count, rng, width=None):
        """Rejection-sample `count` points of the tube |d_S| < width."""
        width = self.reach if width is None else width
        lo, hi = self.bbox
        pts = []
        need = count
        while need > 0:
            cand = rng.uniform(lo - width, hi + width, size=(4 * need, len(lo)))
            d = self.distance(cand)
            keep = cand[np.abs(d) < width]
            pts.append(keep[:need])
            need -= len(keep[:need])
        return np.concatenate(pts, axis=0)

    def surface_samples(self, level=4):
        """Triangulated point sample of S with normals (cached per level)."""
        if level not in self._samples_cache:
            self._samples_cache[level] = self._build_surface_samples(level)
        return self._samples_cache[level]

    def _build_surface_samples(self, level):
        # generic star-shaped fallback: radial bisection from the anchor
        from .fixtures import icosphere
        sph = icosphere(level)
        dirs = unit(sph.vertices)
        c = self.interior_anchor()
        lo = np.zeros(len(dirs))
        hi = np.full(len(dirs), 0.55 * self.diameter())
        # make sure the far end is outside
        for _ in range(8):
            outside = self._distance(c + hi[:, None] * dirs) < 0
            hi[outside] *= 1.5
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            inside = self._distance(c + mid[:, None] * dirs) < 0
            lo[inside] = mid[inside]
            hi[~inside] = mid[~inside]
        pts = c + (0.5 * (lo + hi))[:, None] * dirs
        return SurfaceSamples(points=pts, normals=self.normal(pts),
                              triangles=sph.triangles.copy())

    # -- config ------------------------------------------------------------

    def config_items(self):
        raise NotImplementedError

    def __repr__(self):
        items = ", ".join(f"{k}={v}" for k, v in self.config_items())
        return f"{type(self).__name__}({items})"


class Ball(ImplicitDomain):
    """Round ball; everything analytic."""

    kind = "ball"

    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0), reach=None, **kw):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)
        r = self.radius
        bbox = np.stack([self.center - r, self.center + r])
        super().__init__(bbox, reach=r if reach is None else reach, **kw)

    def _rel(self, pts):
        q = pts - self.center
        return q, np.linalg.norm(q, axis=1)

    def _distance(self, pts):
        _, r = self._rel(pts)
        return r - self.radius

    def _gradient(self, pts):
        q, r = self._rel(pts)
        r = np.where(r == 0.0, 1.0, r)
        return q / r[:, None]

    def _hessian(self, pts):
        q, r = self._rel(pts)
        r = np.where(r == 0.0, 1.0, r)
        qh = q / r[:, None]
        eye = np.eye(pts.shape[1])[None]
        return (eye - qh[:, :, None] * qh[:, None, :]) / r[:, None, None]

    def project_to_surface(self, x, max_iter=50):
        self._check_tube(x)
        x = np.asarray(x, dtype=float)
        q = x - self.center
        r = np.linalg.norm(np.atleast_2d(q), axis=-1)
        if x.ndim == 1:
            return self.center + q * (self.radius / r[0])
        return self.center + q * (self.radius / r)[:, None]

    def reflect_jacobian(self, x):
        """Analytic D sigma for the radial reflection of the ball."""
        single = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        q = x - self.center
        r = np.linalg.norm(q, axis=1)
        qh = q / r[:, None]
        a = 2.0 * self.radius / r - 1.0
        eye = np.eye(x.shape[1])[None]
        out = a[:, None, None] * eye \
            - (2.0 * self.radius / r)[:, None, None] * qh[:, :, None] * qh[:, None, :]
        return out[0] if single else out

    def interior_anchor(self):
        return self.center.copy()

    def config_items(self):
        return [("radius", self.radius),
                ("center", " ".join(fmt(c) for c in self.center)),
                ("reach", self.reach)]


class Ellipsoid(ImplicitDomain):
    """Axis-aligned ellipsoid with Newton-corrected true signed distance."""

    kind = "ellipsoid"

    def __init__(self, semiaxes=(1.0, 1.2, 1.5), center=(0.0, 0.0, 0.0),
                 reach=None, **kw):
        self.semiaxes = np.asarray(semiaxes, dtype=float)
        self.center = np.asarray(center, dtype=float)
        a = self.semiaxes
        bbox = np.stack([self.center - a, self.center + a])
        if reach is None:
            # 1/max curvature = min over vertices of a_i^2 / a_max, damped
            reach = 0.9 * float(np.min(a) ** 2 / np.max(a))
        super().__init__(bbox, reach=reach, **kw)

    def nearest_on_surface(self, pts):
        """Nearest ellipsoid point, by bisection + Newton on the standard
        one-parameter family y_i = a_i^2 x_i / (a_i^2 + t)."""
        a = self.semiaxes
        x = np.atleast_2d(pts) - self.center
        x = np.where(np.abs(x) < 1e-300, 1e-300, x)
        ax = a * x
        lo = np.full(len(x), -np.min(a) ** 2 + 1e-14)
        hi = np.maximum(np.max(np.abs(ax), axis=1), 1e-9) + np.max(a) ** 2

        def f(t):
            return np.sum((ax / (a ** 2 + t[:, None])) ** 2, axis=1) - 1.0

        for _ in range(90):
            mid = 0.5 * (lo + hi)
            pos = f(mid) > 0
            lo[pos] = mid[pos]
            hi[~pos] = mid[~pos]
        t = 0.5 * (lo + hi)
        for _ in range(3):
            ft = f(t)
            dft = -2.0 * np.sum(ax ** 2 / (a ** 2 + t[:, None]) ** 3, axis=1)
            dft = np.where(np.abs(dft) < 1e-300, -1e-300, dft)
            t = t - ft / dft
        y = (a ** 2)[None] * x / (a ** 2 + t[:, None])
        return y + self.center

    def _distance(self, pts):
        pts = np.atleast_2d(pts)
        y = self.nearest_on_surface(pts)
        q = (pts - self.center) / self.semiaxes
        sign = np.where(np.sum(q * q, axis=1) < 1.0, -1.0, 1.0)
        return sign * np.linalg.norm(pts - y, axis=1)

    def _gradient(self, pts):
        pts = np.atleast_2d(pts)
        y = self.nearest_on_surface(pts)
        d = self._distance(pts)
        safe = np.where(np.abs(d) > 1e-9, d, 1.0)[:, None]
        out_normal = unit((y - self.center) / self.semiaxes ** 2)
        g = np.where(np.abs(d[:, None]) > 1e-9, (pts - y) / safe, out_normal)
        return unit(g)

    def project_to_surface(self, x, max_iter=50):
        self._check_tube(x)
        x = np.asarray(x, dtype=float)
        y = self.nearest_on_surface(np.atleast_2d(x))
        return y[0] if x.ndim == 1 else y

    def interior_anchor(self):
        return self.center.copy()

    def config_items(self):
        return [("semiaxes", " ".join(fmt(c) for c in self.semiaxes)),
                ("center", " ".join(fmt(c) for c in self.center)),
                ("reach", self.reach)]


class Slab(ImplicitDomain):
    """Region between two parallel planes |x3| < halfheight, truncated by a
    lateral bounding box. Serves also as the flat half-space test boundary."""

    kind = "slab"

    def __init__(self, halfheight=1.0, halfwidth=2.0, reach=None, **kw):
        self.halfheight = float(halfheight)
        self.halfwidth = float(halfwidth)
        h, w = self.halfheight, self.halfwidth
        bbox = np.array([[-w, -w, -h], [w, w, h]])
        super().__init__(bbox, reach=0.999 * h if reach is None else reach, **kw)

    def _distance(self, pts):
        return np.abs(pts[:, 2]) - self.halfheight

    def _gradient(self, pts):
        g = np.zeros_like(pts)
        g[:, 2] = np.where(pts[:, 2] >= 0.0, 1.0, -1.0)
        return g

    def _hessian(self, pts):
        return np.zeros((len(pts), pts.shape[1], pts.shape[1]))

    def project_to_surface(self, x, max_iter=50):
        self._check_tube(x)
        x = np.asarray(x, dtype=float)
        y = np.atleast_2d(x).copy()
        y[:, 2] = np.where(y[:, 2] >= 0.0, self.halfheight, -self.halfheight)
        return y[0] if x.ndim == 1 else y

    def _build_surface_samples(self, level):
        k = 2 ** level * 4
        w = self.halfwidth
        s = np.linspace(-w, w, k)
        X, Y = np.meshgrid(s, s, indexing="ij")
        pts_f = np.stack([X.ravel(), Y.ravel(),
                          np.full(k * k, self.halfheight)], axis=1)
        tris = []
        for i in range(k - 1):
            for j in range(k - 1):
                v = i * k + j
                tris.append([v, v + k, v + 1])
                tris.append([v + 1, v + k, v + k + 1])
        tris = np.asarray(tris)
        pts = np.concatenate([pts_f, pts_f * np.array([1, 1, -1.0])])
        tris = np.concatenate([tris, tris[:, ::-1] + k * k])
        return SurfaceSamples(points=pts, normals=self.normal(pts), triangles=tris)

    def config_items(self):
        return [("halfheight", self.halfheight), ("halfwidth", self.halfwidth),
                ("reach", self.reach)]


class AnnulusPrism(ImplicitDomain):
    """Solid of revolution of a rounded rectangle in the (rho, z) half plane:
    the annular prism {r0 < rho < r1, |z| < halfheight} with corner radius
    `smooth`. Corners are circular blends (curvature jumps on four seam
    circles, boundary C^1,1); away from the blends the distance is exact."""

    kind = "annulus_prism"

    def __init__(self, r0=1.0, r1=np.sqrt(2.0), halfheight=1.0, smooth=0.05,
                 reach=None, **kw):
        self.r0, self.r1 = float(r0), float(r1)
        self.halfheight = float(halfheight)
        self.smooth = float(smooth)
        w = self.r1
        bbox = np.array([[-w, -w, -self.halfheight], [w, w, self.halfheight]])
        if reach is None:
            reach = 0.9 * min(self.smooth, 0.5 * (self.r1 - self.r0),
                              self.halfheight)
        super().__init__(bbox, reach=reach, **kw)

    def _profile(self, rho, z):
        """Rounded-rectangle signed distance and gradient in (rho, z)."""
        s = self.smooth
        crho = 0.5 * (self.r0 + self.r1)
        A = 0.5 * (self.r1 - self.r0) - s
        B = self.halfheight - s
        u = rho - crho
        qx = np.abs(u) - A
        qy = np.abs(z) - B
        mx = np.maximum(qx, 0.0)
        my = np.maximum(qy, 0.0)
        outside = np.sqrt(mx ** 2 + my ** 2)
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        d = outside + inside - s
        # gradient
        gx = np.where(outside > 0.0,
                      np.sign(u) * mx / np.where(outside == 0, 1, outside),
                      np.where(qx >= qy, np.sign(u), 0.0))
        gy = np.where(outside > 0.0,
                      np.sign(z) * my / np.where(outside == 0, 1, outside),
                      np.where(qx >= qy, 0.0, np.sign(z)))
        return d, gx, gy

    def _distance(self, pts):
        rho = np.linalg.norm(pts[:, :2], axis=1)
        d, _, _ = self._profile(rho, pts[:, 2])
        return d

    def _gradient(self, pts):
        rho = np.linalg.norm(pts[:, :2], axis=1)
        rho_safe = np.where(rho == 0.0, 1.0, rho)
        _, gx, gy = self._profile(rho, pts[:, 2])
        g = np.empty_like(pts)
        g[:, 0] = gx * pts[:, 0] / rho_safe
        g[:, 1] = gx * pts[:, 1] / rho_safe
        g[:, 2] = gy
        return g

    def interior_anchor(self):
        return np.array([0.5 * (self.r0 + self.r1), 0.0, 0.0])

    def _build_surface_samples(self, level):
        k_theta = 2 ** level * 8
        k_t = 2 ** level * 4
        theta = np.linspace(0.0, 2 * np.pi, k_theta, endpoint=False)
        t = np.linspace(0.0, 2 * np.pi, k_t, endpoint=False)
        # profile curve of the rounded rectangle, radial parametrization
        crho = 0.5 * (self.r0 + self.r1)
        prof = np.stack([np.cos(t), np.sin(t)], axis=1)
        pp = np.stack([crho + prof[:, 0], prof[:, 1]], axis=1)
        for _ in range(60):
            d, gx, gy = self._profile(pp[:, 0], pp[:, 1])
            pp -= d[:, None] * np.stack([gx, gy], axis=1)
        pts = np.empty((k_theta * k_t, 3))
        ct, st = np.cos(theta), np.sin(theta)
        pts[:, 0] = np.outer(ct, pp[:, 0]).ravel()
        pts[:, 1] = np.outer(st, pp[:, 0]).ravel()
        pts[:, 2] = np.tile(pp[:, 1], k_theta)
        tris = []
        for i in range(k_theta):
            i2 = (i + 1) % k_theta
            for j in range(k_t):
                j2 = (j + 1) % k_t
                a, b = i * k_t + j, i * k_t + j2
                c, d2 = i2 * k_t + j, i2 * k_t + j2
                tris.append([a, c, b])
                tris.append([b, c, d2])
        return SurfaceSamples(points=pts, normals=self.normal(pts),
                              triangles=np.asarray(tris))

    def config_items(self):
        return [("r0", self.r0), ("r1", self.r1),
                ("halfheight", self.halfheight), ("smooth", self.smooth),
                ("reach", self.reach)]


class GraphCap(ImplicitDomain):
    """Domain above the graph x3 = u(x1, x2) of a quadratic
    u(y) = 0.5 (q11 y1^2 + 2 q12 y1 y2 + q22 y2^2); interior normal points
    upward, so h_S at the origin equals the quadratic's Hessian."""

    kind = "graph_cap"

    def __init__(self, q11=1.0, q22=1.0, q12=0.0, extent=3.0, reach=None, **kw):
        self.Q = np.array([[q11, q12], [q12, q22]], dtype=float)
        self.extent = float(extent)
        e = self.extent
        bbox = np.array([[-e, -e, -e], [e, e, e]])
        kmax = float(np.max(np.abs(np.linalg.eigvalsh(self.Q)))) + 1e-12
        super().__init__(bbox, reach=0.5 / kmax if reach is None else reach, **kw)

    def u(self, y):
        y = np.atleast_2d(y)
        return 0.5 * np.einsum("ni,ij,nj->n", y, self.Q, y)

    def du(self, y):
        return np.atleast_2d(y) @ self.Q.T

    def nearest_on_surface(self, pts):
        pts = np.atleast_2d(pts)
        p = pts[:, :2].copy()
        for _ in range(30):
            r = np.concatenate([p - pts[:, :2],
                                (self.u(p) - pts[:, 2])[:, None]], axis=1)
            # 2x2 Newton on the squared-distance gradient
            g = r[:, :2] + r[:, 2:3] * self.du(p)
            JQ = self.Q
            hess = (np.eye(2)[None]
                    + np.einsum("ni,nj->nij", self.du(p), self.du(p))
                    + r[:, 2][:, None, None] * JQ[None])
            step = np.linalg.solve(hess, g[:, :, None])[:, :, 0]
            p = p - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return np.concatenate([p, self.u(p)[:, None]], axis=1)

    def _distance(self, pts):
        pts = np.atleast_2d(pts)
        y = self.nearest_on_surface(pts)
        sign = np.where(pts[:, 2] > self.u(pts[:, :2]), -1.0, 1.0)
        return sign * np.linalg.norm(pts - y, axis=1)

    def _gradient(self, pts):
        pts = np.atleast_2d(pts)
        y = self.nearest_on_surface(pts)
        d = self._distance(pts)
        safe = np.where(np.abs(d) > 1e-9, d, 1.0)[:, None]
        du = self.du(y[:, :2])
        down = unit(np.concatenate([du, -np.ones((len(pts), 1))], axis=1))
        g = np.where(np.abs(d[:, None]) > 1e-9, (pts - y) / safe, down)
        return unit(g)

    def project_to_surface(self, x, max_iter=50):
        self._check_tube(x)
        x = np.asarray(x, dtype=float)
        y = self.nearest_on_surface(np.atleast_2d(x))
        return y[0] if x.ndim == 1 else y

    def interior_anchor(self):
        return np.array([0.0, 0.0, 0.5 * self.extent])

    def config_items(self):
        return [("q11", self.Q[0, 0]), ("q22", self.Q[1, 1]),
                ("q12", self.Q[0, 1]), ("extent", self.extent),
                ("reach", self.reach)]


class GridSDF(ImplicitDomain):
    """Sampled-grid fallback: trilinear interpolation of a distance grid."""

    kind = "custom_mesh_sdf"

    def __init__(self, values, origin, spacing, reach, **kw):
        self.values = np.asarray(values, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = float(spacing)
        hi = self.origin + self.spacing * (np.array(self.values.shape) - 1)
        super().__init__(np.stack([self.origin, hi]), reach=reach, **kw)

    def _distance(self, pts):
        from scipy.ndimage import map_coordinates
        idx = (np.atleast_2d(pts) - self.origin) / self.spacing
        return map_coordinates(self.values, idx.T, order=1, mode="nearest")

    def config_items(self):
        return [("reach", self.reach)]


def fmt(x):
    return format(float(x), ".17g")


# kind -> constructor from a flat {key: str} mapping; perturb.py registers
# its own kind here.
DOMAIN_LOADERS = {}


def _floats(s):
    return tuple(float(t) for t in s.split())


def _register_builtin_loaders():
    def ball(items):
        return Ball(radius=float(items.pop("radius", 1.0)),
                    center=_floats(items.pop("center", "0 0 0")),
                    reach=_maybe_float(items.pop("reach", None)),
                    tol_proj=float(items.pop("tol_proj", 1e-10)))

    def ellipsoid(items):
        return Ellipsoid(semiaxes=_floats(items.pop("semiaxes", "1 1.2 1.5")),
                         center=_floats(items.pop("center", "0 0 0")),
                         reach=_maybe_float(items.pop("reach", None)),
                         tol_proj=float(items.pop("tol_proj", 1e-10)))

    def slab(items):
        return Slab(halfheight=float(items.pop("halfheight", 1.0)),
                    halfwidth=float(items.pop("halfwidth", 2.0)),
                    reach=_maybe_float(items.pop("reach", None)),
                    tol_proj=float(items.pop("tol_proj", 1e-10)))

    def annulus_prism(items):
        return AnnulusPrism(r0=float(items.pop("r0", 1.0)),
                            r1=float(items.pop("r1", np.sqrt(2.0))),
                            halfheight=float(items.pop("halfheight", 1.0)),
                            smooth=float(items.pop("smooth", 0.05)),
                            reach=_maybe_float(items.pop("reach", None)),
                            tol_proj=float(items.pop("tol_proj", 1e-10)))

    def graph_cap(items):
        return GraphCap(q11=float(items.pop("q11", 1.0)),
                        q22=float(items.pop("q22", 1.0)),
                        q12=float(items.pop("q12", 0.0)),
                        extent=float(items.pop("extent", 3.0)),
                        reach=_maybe_float(items.pop("reach", None)),
                        tol_proj=float(items.pop("tol_proj", 1e-10)))

    def custom_mesh_sdf(items):
        data = np.load(items.pop("npz"))
        return GridSDF(values=data["values"], origin=data["origin"],
                       spacing=float(data["spacing"]),
                       reach=float(items.pop("reach")),
                       tol_proj=float(items.pop("tol_proj", 1e-10)))

    DOMAIN_LOADERS.update(ball=ball, ellipsoid=ellipsoid, slab=slab,
                          annulus_prism=annulus_prism, graph_cap=graph_cap,
                          custom_mesh_sdf=custom_mesh_sdf)


_register_builtin_loaders()


def _maybe_float(s):
    return None if s is None else float(s)


def load_domain(path):
    """Read a domain from a flat INI file with a single [domain] section."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read or "domain" not in cp:
        raise ConfigError(f"{path}: missing [domain] section")
    items = dict(cp["domain"])
    kind = items.pop("kind", None)
    if kind not in DOMAIN_LOADERS:
        raise ConfigError(f"{path}: unknown domain kind {kind!r}")
    domain = DOMAIN_LOADERS[kind](items)
    if items:
        raise ConfigError(f"{path}: unknown keys {sorted(items)}")
    if domain.reach <= 0:
        raise ConfigError(f"{path}: reach must be positive")
    return domain


def save_domain(domain, path):
    lines = ["[domain]", f"kind = {domain.kind}"]
    for key, val in domain.config_items():
        lines.append(f"{key} = {val}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
