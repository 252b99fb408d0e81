"""Orthogonal m-slices: intersection, search, and continuation.

A slice candidate is an affine plane (z, P) with P z = 0; a slice is a
connected component of the plane's intersection with the open domain. The
orthogonality defect of a component is max |P_perp nu_S| along its boundary.
The search sweeps a deterministic set of seed planes deep enough into the
domain and polishes each by damped Gauss-Newton on the defect, re-imposing
the manifold constraints by projection after every step.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._util import plane_project, projection_basis, unit
from .errors import ContinuationDiverged, EmptyIntersection, PerturbationTooLarge
from .surface import SurfaceMesh


@dataclass
class AffinePlane:
    """(z, P) with P an orthogonal rank-m projection and P z = 0."""

    z: np.ndarray
    P: np.ndarray
    m: int = 2

    @classmethod
    def make(cls, z, P, m=2):
        z, P = plane_project(np.asarray(z, dtype=float),
                             np.asarray(P, dtype=float), m)
        return cls(z=z, P=P, m=m)

    @classmethod
    def from_normal(cls, w, zeta):
        """m = n-1 plane with unit normal w at offset zeta."""
        w = unit(np.asarray(w, dtype=float))
        P = np.eye(len(w)) - np.outer(w, w)
        return cls(z=zeta * w, P=P, m=len(w) - 1)

    @classmethod
    def from_direction(cls, d, z):
        """m = 1 line with unit direction d through the offset z (z ⊥ d)."""
        d = unit(np.asarray(d, dtype=float))
        P = np.outer(d, d)
        z = np.asarray(z, dtype=float)
        return cls(z=z - P @ z, P=P, m=1)

    @property
    def basis(self):
        return projection_basis(self.P, self.m)

    @property
    def normal(self):
        """Unit normal for m = n-1 planes."""
        return projection_basis(np.eye(len(self.z)) - self.P,
                                len(self.z) - self.m)[:, 0]

    def perp(self, v):
        v = np.asarray(v, dtype=float)
        return v - v @ self.P.T

    def manifold_residual(self):
        P = self.P
        return max(float(np.max(np.abs(P - P.T))),
                   float(np.max(np.abs(P @ P - P))),
                   abs(float(np.trace(P)) - self.m),
                   float(np.max(np.abs(P @ self.z))))

    def distance_to(self, other):
        return float(np.linalg.norm(self.P - other.P)
                     + np.linalg.norm(self.z - other.z))


@dataclass
class SliceComponent:
    mesh: SurfaceMesh
    loops: list                 # list of (L, 3) closed boundary polylines
    area: float
    euler_char: int
    is_disk: bool
    ortho_residual: float
    resolved: bool = True


@dataclass
class SliceResult:
    plane: AffinePlane
    components: list
    meta: dict = field(default_factory=dict)

    @property
    def boundary_curves(self):
        return [lp for c in self.components for lp in c.loops]

    @property
    def euler_char(self):
        return sum(c.euler_char for c in self.components)

    @property
    def is_disk(self):
        return len(self.components) == 1 and self.components[0].is_disk

    @property
    def ortho_residual(self):
        if not self.components:
            return float("inf")
        return max(c.ortho_residual for c in self.components)


# ---------------------------------------------------------------------------
# plane-grid intersection (marching triangles on a quad grid split by centers)
# ---------------------------------------------------------------------------

def _plane_window(domain, plane):
    """(s, t) ranges covering the domain bbox in the plane's chart."""
    U = plane.basis
    lo, hi = domain.bbox
    corners = np.array([[a, b, c] for a in (lo[0], hi[0])
                        for b in (lo[1], hi[1]) for c in (lo[2], hi[2])])
    st = (corners - plane.z) @ U
    pad = 0.02 * domain.diameter() + 1e-9
    return st.min(axis=0) - pad, st.max(axis=0) + pad


def intersect(domain, plane, grid=256):
    """Extract the components of int(closure(Omega) ∩ (z + P)) by contouring
    d_S restricted to the plane on a grid; fills the orthogonality residual
    of every component. Raises EmptyIntersection when no grid point is
    interior."""
    U = plane.basis
    (s0, t0), (s1, t1) = _plane_window(domain, plane)
    s = np.linspace(s0, s1, grid)
    t = np.linspace(t0, t1, grid)
    S, T = np.meshgrid(s, t, indexing="ij")
    pts2 = np.stack([S.ravel(), T.ravel()], axis=1)
    f = domain.distance(plane.z + pts2 @ U.T).reshape(grid, grid)
    f = np.where(f == 0.0, 1e-300, f)
    if not np.any(f < 0):
        raise EmptyIntersection("no interior samples on this plane")
    centers = 0.25 * (f[:-1, :-1] + f[1:, :-1] + f[:-1, 1:] + f[1:, 1:])
    hx = s[1] - s[0]
    hy = t[1] - t[0]

    labels, _ = ndimage.label(f < 0)

    # vertex pool: grid nodes, cell centers and edge crossings
    pool = {}
    coords = []

    def node(key, xy):
        if key not in pool:
            pool[key] = len(coords)
            coords.append(xy)
        return pool[key]

    def grid_xy(i, j):
        return np.array([s[i], t[j]])

    segments = []      # (ia, ib, label) directed, inside on the left
    seg_label = []
    tris = []
    tri_label = []

    # subtriangle corner tables per cell: center + two adjacent corners
    for i in range(grid - 1):
        fi = f[i:i + 2]
        for j in range(grid - 1):
            vals4 = (f[i, j], f[i + 1, j], f[i + 1, j + 1], f[i, j + 1])
            if min(vals4) > 0 and centers[i, j] > 0:
                continue
            corner_keys = [("g", i, j), ("g", i + 1, j),
                           ("g", i + 1, j + 1), ("g", i, j + 1)]
            corner_xy = [grid_xy(i, j), grid_xy(i + 1, j),
                         grid_xy(i + 1, j + 1), grid_xy(i, j + 1)]
            ckey = ("c", i, j)
            cxy = 0.25 * (corner_xy[0] + corner_xy[1]
                          + corner_xy[2] + corner_xy[3])
            fc = centers[i, j]
            lab_candidates = [labels[i, j], labels[i + 1, j],
                              labels[i + 1, j + 1], labels[i, j + 1]]
            vals4 = list(vals4)
            for k in range(4):
                k2 = (k + 1) % 4
                tri_keys = (corner_keys[k], corner_keys[k2], ckey)
                tri_xy = (corner_xy[k], corner_xy[k2], cxy)
                tri_f = (vals4[k], vals4[k2], fc)
                lab = 0
                if vals4[k] < 0:
                    lab = lab_candidates[k]
                elif vals4[k2] < 0:
                    lab = lab_candidates[k2]
                _clip_triangle(tri_keys, tri_xy, tri_f, lab, node,
                               segments, seg_label, tris, tri_label)

    if not tris:
        raise EmptyIntersection("interior thinner than the grid resolution")

    coords = np.asarray(coords)
    pts3 = plane.z + coords @ U.T
    comps = _assemble_components(domain, plane, pts3, tris, tri_label,
                                 segments, seg_label, coords,
                                 cell=max(hx, hy), fgrid=f, labels=labels)
    return SliceResult(plane=plane, components=comps,
                       meta={"grid": grid, "window": (s0, t0, s1, t1)})


def _clip_triangle(keys, xy, fv, lab, node, segments, seg_label,
                   tris, tri_label):
    """Clip one subtriangle against {f < 0}; append the inside polygon (fan
    triangulated) and the zero-level segment (inside kept on the left)."""
    neg = [k for k in range(3) if fv[k] < 0]
    if not neg:
        return

    def edge_node(a, b):
        ka, kb = keys[a], keys[b]
        key = ("x", ka, kb) if ka < kb else ("x", kb, ka)
        lam = fv[a] / (fv[a] - fv[b])
        return node(key, xy[a] + lam * (np.asarray(xy[b]) - np.asarray(xy[a])))

    ids = [node(keys[k], xy[k]) for k in range(3)]
    if len(neg) == 3:
        tris.append(ids)
        tri_label.append(lab)
        return
    if len(neg) == 1:
        a = neg[0]
        b, c = (a + 1) % 3, (a + 2) % 3
        xab = edge_node(a, b)
        xca = edge_node(c, a)
        tris.append([ids[a], xab, xca])
        tri_label.append(lab)
        segments.append((xab, xca))
        seg_label.append(lab)
    else:
        c = [k for k in range(3) if k not in neg][0]
        a, b = (c + 1) % 3, (c + 2) % 3
        xbc = edge_node(b, c)
        xca = edge_node(c, a)
        tris.append([ids[a], ids[b], xbc])
        tris.append([ids[a], xbc, xca])
        tri_label.extend([lab, lab])
        segments.append((xbc, xca))
        seg_label.append(lab)


def _chain_loops(segments):
    """Chain directed segments into closed loops (lists of vertex ids)."""
    succ = {}
    for a, b in segments:
        succ.setdefault(a, []).append(b)
    loops = []
    used = set()
    for a, b in segments:
        if (a, b) in used:
            continue
        loop = [a]
        cur_a, cur_b = a, b
        ok = True
        while True:
            used.add((cur_a, cur_b))
            loop.append(cur_b)
            nxts = [n for n in succ.get(cur_b, []) if (cur_b, n) not in used]
            if not nxts:
                ok = loop[-1] == loop[0]
                break
            cur_a, cur_b = cur_b, nxts[0]
        if ok and len(loop) > 3:
            loops.append(loop[:-1])
    return loops


def _assemble_components(domain, plane, pts3, tris, tri_label, segments,
                         seg_label, coords2, cell, fgrid, labels):
    tris = np.asarray(tris)
    tri_label = np.asarray(tri_label)
    # orient level segments with the inside on the left before chaining
    oriented = []
    for (a, b), lab in zip(segments, seg_label):
        oriented.append(((a, b), lab))
    loops_ids = _chain_loops([s for s, _ in oriented])
    seg_lab_map = {}
    for (a, b), lab in oriented:
        seg_lab_map[(a, b)] = lab

    comps = []
    for lab in np.unique(tri_label):
        if lab <= 0:
            continue
        sel = tris[tri_label == lab]
        if len(sel) == 0:
            continue
        used = np.unique(sel)
        remap = -np.ones(len(pts3), dtype=np.int64)
        remap[used] = np.arange(len(used))
        mesh = SurfaceMesh(pts3[used], remap[sel], validate=False)
        my_loops = []
        for lp in loops_ids:
            pair = (lp[0], lp[1])
            lab_lp = seg_lab_map.get(pair, seg_lab_map.get((lp[1], lp[0]), 0))
            if lab_lp != lab:
                # fall back: majority of loop nodes belonging to this comp
                inmesh = np.mean([remap[i] >= 0 for i in lp])
                if inmesh < 0.5:
                    continue
            my_loops.append(pts3[np.asarray(lp)])
        area = float(np.sum(mesh.triangle_areas_normals()[0]))
        chi = mesh.euler_characteristic
        depth = float(np.max(-fgrid[labels == lab]))
        resolved = depth >= 2.0 * cell
        resid = _loops_residual(domain, plane, my_loops)
        comps.append(SliceComponent(mesh=mesh, loops=my_loops, area=area,
                                    euler_char=chi,
                                    is_disk=(len(my_loops) == 1 and chi == 1),
                                    ortho_residual=resid, resolved=resolved))
    comps.sort(key=lambda c: -c.area)
    return comps


def _loops_residual(domain, plane, loops):
    resid = 0.0
    for lp in loops:
        try:
            proj = domain.project_to_surface(lp)
        except Exception:
            return float("inf")
        nu = domain.normal(proj)
        resid = max(resid, float(np.max(np.linalg.norm(plane.perp(nu),
                                                       axis=1))))
    return resid


# ---------------------------------------------------------------------------
# fast on-surface contouring: the boundary of a slice as a level set on S
# ---------------------------------------------------------------------------

def surface_plane_loops(samples, w, zeta, min_pts=6):
    """Loops of {<w, x> = zeta} on the sampled boundary surface, with
    interpolated normals. Returns a list of (points, normals) pairs."""
    f = samples.points @ w - zeta
    f = np.where(f == 0.0, 1e-300, f)
    t = samples.triangles
    ft = f[t]
    neg = ft < 0
    cnt = neg.sum(axis=1)
    cross = (cnt == 1) | (cnt == 2)
    segs = {}
    order = []

    def edge_point(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in segs:
            lam = f[a] / (f[a] - f[b])
            p = samples.points[a] + lam * (samples.points[b] - samples.points[a])
            n = unit(samples.normals[a] + lam * (samples.normals[b]
                                                 - samples.normals[a]))
            segs[key] = (len(order), p, n)
            order.append(key)
        return segs[key][0]

    chains = []
    for tri in t[cross]:
        fv = f[tri]
        neg_ids = [v for v in tri if f[v] < 0]
        if len(neg_ids) == 1:
            a = neg_ids[0]
            others = [v for v in tri if v != a]
            chains.append((edge_point(a, others[0]), edge_point(a, others[1])))
        else:
            pos = [v for v in tri if f[v] >= 0][0]
            others = [v for v in tri if v != pos]
            chains.append((edge_point(pos, others[0]),
                           edge_point(pos, others[1])))
    if not chains:
        return []
    pts = np.array([segs[k][1] for k in order])
    nrm = np.array([segs[k][2] for k in order])
    # chain undirected segments into loops / open paths
    adj = {}
    for a, b in chains:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    visited = set()
    loops = []
    for start in range(len(order)):
        if start in visited or start not in adj:
            continue
        path = [start]
        visited.add(start)
        prev = None
        cur = start
        while True:
            nxts = [n for n in adj[cur] if n != prev and n not in visited]
            if not nxts:
                closed = start in adj.get(cur, []) and len(path) > 2
                break
            prev, cur = cur, nxts[0]
            visited.add(cur)
            path.append(cur)
        if len(path) >= min_pts:
            loops.append((pts[path], nrm[path]))
    return loops


def _resample_loop(points, normals, k):
    seg = np.linalg.norm(np.diff(np.vstack([points, points[:1]]), axis=0),
                         axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    tgt = np.linspace(0.0, total, k, endpoint=False)
    closed_p = np.vstack([points, points[:1]])
    closed_n = np.vstack([normals, normals[:1]])
    P = np.stack([np.interp(tgt, cum, closed_p[:, i]) for i in range(3)],
                 axis=1)
    N = unit(np.stack([np.interp(tgt, cum, closed_n[:, i]) for i in range(3)],
                      axis=1))
    return P, N


# ---------------------------------------------------------------------------
# Gauss-Newton search over the affine Grassmannian
# ---------------------------------------------------------------------------

def _fibonacci_hemisphere(count):
    k = np.arange(count)
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    zc = (k + 0.5) / count          # upper hemisphere only (w ~ -w)
    theta = 2.0 * np.pi * k / phi
    r = np.sqrt(1.0 - zc ** 2)
    return np.stack([r * np.cos(theta), r * np.sin(theta), zc], axis=1)


def _coarse_depth(domain, plane, grid=17):
    """Greatest interior depth of the plane, on a coarse grid; uses the
    domain's cheap distance when available (perturbed domains)."""
    dist = getattr(domain, "coarse_distance", domain.distance)
    U = plane.basis
    (s0, t0), (s1, t1) = _plane_window(domain, plane)
    s = np.linspace(s0, s1, grid)
    t = np.linspace(t0, t1, grid)
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = plane.z + np.stack([S.ravel(), T.ravel()], axis=1) @ U.T
    return float(np.max(-dist(pts)))


class _PlaneObjective:
    """Stacked orthogonality defect <w, nu> along the slice boundary for
    m = n-1 planes, with fixed per-loop resampling."""

    def __init__(self, samples, k=48):
        self.samples = samples
        self.k = k
        self.n_loops = None

    def __call__(self, w, zeta):
        loops = surface_plane_loops(self.samples, w, zeta)
        if not loops:
            return None
        if self.n_loops is None:
            self.n_loops = len(loops)
        if len(loops) != self.n_loops:
            return None
        vals = []
        for pts, nrm in loops:
            _, N = _resample_loop(pts, nrm, self.k)
            vals.append(N @ w)
        return np.concatenate(vals)


def refine_plane(domain, w0, zeta0, tol_ortho=1e-6, samples_level=5, k=48,
                 max_iter=40, halvings=20):
    """Damped Gauss-Newton polish of an m = n-1 seed plane. Returns
    (plane, max_defect) or None when the seed does not converge."""
    samples = domain.surface_samples(samples_level)
    obj = _PlaneObjective(samples, k=k)
    w = unit(np.asarray(w0, dtype=float))
    zeta = float(zeta0)
    r = obj(w, zeta)
    if r is None:
        return None
    h = 1e-6
    for it in range(max_iter):
        rms = np.sqrt(np.mean(r ** 2))
        if np.max(np.abs(r)) < tol_ortho:
            break
        if it >= 8 and rms > 0.05:
            return None  # abandon seeds far from any zero
        # chart: rotate w in its tangent plane, shift zeta
        t1 = unit(np.cross(w, [1.0, 0.0, 0.0])
                  if abs(w[0]) < 0.9 else np.cross(w, [0.0, 1.0, 0.0]))
        t2 = np.cross(w, t1)
        cols = []
        for dw, dz in ((t1, 0.0), (t2, 0.0), (None, 1.0)):
            if dw is None:
                rp = obj(w, zeta + h)
                rm = obj(w, zeta - h)
            else:
                rp = obj(unit(w + h * dw), zeta)
                rm = obj(unit(w - h * dw), zeta)
            if rp is None or rm is None or len(rp) != len(r) or len(rm) != len(r):
                return None
            cols.append((rp - rm) / (2 * h))
        J = np.stack(cols, axis=1)
        step, *_ = np.linalg.lstsq(J, -r, rcond=1e-8)
        scale = 1.0
        for _ in range(halvings):
            w_new = unit(w + scale * (step[0] * t1 + step[1] * t2))
            z_new = zeta + scale * step[2]
            r_new = obj(w_new, z_new)
            if r_new is not None and len(r_new) == len(r) \
                    and np.sqrt(np.mean(r_new ** 2)) < rms:
                w, zeta, r = w_new, z_new, r_new
                break
            scale *= 0.5
        else:
            break
        if np.linalg.norm(step) * scale < 1e-10 \
                and np.max(np.abs(r)) < tol_ortho:
            break
    if np.max(np.abs(r)) < tol_ortho:
        return AffinePlane.from_normal(w, zeta), float(np.max(np.abs(r)))
    return None


def _dedup_planes(found, threshold):
    """Union-find clustering by plane distance (symmetric and transitive);
    keeps the smallest-residual representative per cluster."""
    parent = list(range(len(found)))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(found)):
        for j in range(i + 1, len(found)):
            if found[i][0].distance_to(found[j][0]) < threshold:
                parent[root(i)] = root(j)
    best = {}
    for i, (plane, resid) in enumerate(found):
        r = root(i)
        if r not in best or resid < best[r][1]:
            best[r] = (plane, resid)
    return [best[r] for r in sorted(best)]


def find_orthogonal_slices(domain, m=2, seed_directions=32, seed_offsets=8,
                           tol_ortho=1e-6, samples_level=5, dedup_threshold=0.05,
                           full_regions=True, grid=256):
    """Deterministic sweep + Gauss-Newton refinement. Returns deduplicated
    SliceResults with ortho_residual < tol_ortho; an empty list means no
    slices were found at this resolution."""
    if m == 1:
        return _find_orthogonal_chords(domain, seed_directions, tol_ortho)
    if m != 2:
        raise NotImplementedError("only m in {1, 2} is supported")
    rho = domain.reach
    found = []
    samples = domain.surface_samples(samples_level)
    for w in _fibonacci_hemisphere(seed_directions):
        proj = samples.points @ w
        zmin, zmax = proj.min(), proj.max()
        lo, hi = zmin + 0.45 * rho, zmax - 0.45 * rho
        if hi <= lo:
            continue
        # keep only offsets whose plane reaches depth >= 0.9 reach
        cand = np.linspace(lo, hi, max(33, 4 * seed_offsets))
        feasible = [z for z in cand
                    if _coarse_depth(domain, AffinePlane.from_normal(w, z))
                    >= 0.9 * rho]
        if not feasible:
            continue
        pick = np.unique(np.linspace(0, len(feasible) - 1,
                                     seed_offsets).astype(int))
        for zeta in (feasible[i] for i in pick):
            out = refine_plane(domain, w, zeta, tol_ortho=tol_ortho,
                               samples_level=samples_level)
            if out is not None:
                found.append(out)
    found = _dedup_planes(found, dedup_threshold)
    results = []
    for plane, resid in found:
        if full_regions:
            try:
                res = intersect(domain, plane, grid=grid)
            except EmptyIntersection:
                continue
            res.meta["refined_residual"] = resid
            if res.ortho_residual < tol_ortho or resid < tol_ortho:
                results.append(res)
        else:
            results.append(SliceResult(plane=plane, components=[],
                                       meta={"refined_residual": resid}))
    return results


# ---------------------------------------------------------------------------
# m = 1: orthogonal chords
# ---------------------------------------------------------------------------

def _chord_hits(domain, z, d, n_init=200):
    """Entry/exit points of the line z + t d with the domain boundary."""
    span = 0.75 * domain.diameter()
    t = np.linspace(-span, span, n_init)
    f = domain.distance(z + t[:, None] * d[None])
    sign_change = np.where(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]
    hits = []
    for i in sign_change:
        a, b = t[i], t[i + 1]
        fa = f[i]
        for _ in range(60):
            mid = 0.5 * (a + b)
            fm = float(domain.distance(z + mid * d))
            if fa * fm <= 0:
                b = mid
            else:
                a, fa = mid, fm
        hits.append(0.5 * (a + b))
    return np.asarray(hits)


def _find_orthogonal_chords(domain, seed_directions, tol_ortho):
    found = []
    for d in _fibonacci_hemisphere(max(seed_directions, 16)):
        t1 = unit(np.cross(d, [1.0, 0.0, 0.0])
                  if abs(d[0]) < 0.9 else np.cross(d, [0.0, 1.0, 0.0]))
        t2 = np.cross(d, t1)
        params = np.zeros(4)  # rotate d by (a, b), offset z by (c1, c2)

        def residual(p):
            dd = unit(d + p[0] * t1 + p[1] * t2)
            zz = domain.interior_anchor() + p[2] * t1 + p[3] * t2
            zz = zz - (zz @ dd) * dd
            hits = _chord_hits(domain, zz, dd)
            if len(hits) < 2:
                return None, None, None
            ends = zz + hits[[0, -1], None] * dd[None]
            nu = domain.normal(domain.project_to_surface(ends))
            P = np.outer(dd, dd)
            r = (nu - nu @ P.T).ravel()
            return r, dd, zz

        r, dd, zz = residual(params)
        if r is None:
            continue
        h = 1e-6
        for _ in range(30):
            if np.max(np.abs(r)) < tol_ortho:
                break
            J = np.zeros((len(r), 4))
            for k in range(4):
                e = np.zeros(4)
                e[k] = h
                rp = residual(params + e)[0]
                rm = residual(params - e)[0]
                if rp is None or rm is None:
                    J = None
                    break
                J[:, k] = (rp - rm) / (2 * h)
            if J is None:
                break
            step, *_ = np.linalg.lstsq(J, -r, rcond=1e-8)
            params = params + step
            r, dd, zz = residual(params)
            if r is None:
                break
        if r is not None and np.max(np.abs(r)) < tol_ortho:
            hits = _chord_hits(domain, zz, dd)
            ends = zz + hits[[0, -1], None] * dd[None]
            plane = AffinePlane.from_direction(dd, zz)
            comp = SliceComponent(mesh=None, loops=[ends],
                                  area=float(hits[-1] - hits[0]),
                                  euler_char=1, is_disk=True,
                                  ortho_residual=float(np.max(np.abs(r))))
            found.append((plane, comp))
    dedup = _dedup_planes([(p, c.ortho_residual) for p, c in found], 0.05)
    keep = []
    for plane, _ in dedup:
        comp = next((c for p, c in found if p.distance_to(plane) < 1e-12),
                    None)
        keep.append(SliceResult(plane=plane,
                                components=[comp] if comp else []))
    return keep


# ---------------------------------------------------------------------------
# slice continuation under boundary perturbations
# ---------------------------------------------------------------------------

def solve_offsets(domain, plane, perturbation, points, eps1=None,
                  max_iter=40):
    """Solve F(z, P, u, v)(x) = 0 for the Fermi offsets v along the sampled
    boundary points: the perturbed-surface point over E(x, v) must lie in
    the plane. Offsets are scalars along the plane's unit normal."""
    b0 = plane.normal
    eps1 = 0.8 * domain.reach if eps1 is None else eps1
    v = np.zeros(len(points))

    def F(vv):
        E = domain.fermi(points, vv[:, None] * b0[None])
        g = perturbation.map_points(E)
        return (g - plane.z) @ b0

    r = F(v)
    h = 1e-7 * domain.diameter()
    for _ in range(max_iter):
        if np.max(np.abs(r)) < 1e-12 * domain.diameter():
            return v
        drdv = (F(v + h) - F(v - h)) / (2 * h)
        drdv = np.where(np.abs(drdv) < 1e-12, 1.0, drdv)
        v_new = v - r / drdv
        if np.max(np.abs(v_new)) > eps1:
            raise ContinuationDiverged("Fermi offsets left the tube")
        v, r = v_new, F(v_new)
    raise ContinuationDiverged("offset Newton did not converge")


def continue_slice(domain, slice_result, perturbation, k=64, tol=1e-8,
                   max_iter=30, delta1=None):
    """Continue an orthogonal slice onto the perturbed boundary: solve the
    in-plane condition pointwise by Newton in the Fermi offset, then re-solve
    the orthogonality system for the plane on the perturbed surface."""
    delta1 = 0.25 * domain.reach if delta1 is None else delta1
    if perturbation.c2_norm() > delta1:
        raise PerturbationTooLarge(
            f"|u|_C2 = {perturbation.c2_norm():.3g} > {delta1:.3g}")
    plane0 = slice_result.plane
    loops = slice_result.boundary_curves
    if not loops:
        raise ContinuationDiverged("slice has no boundary curve")
    pts = np.concatenate([_resample_loop(lp, np.zeros_like(lp), k)[0]
                          for lp in loops])
    pts = domain.project_to_surface(pts)
    w0 = plane0.normal
    zeta0 = float(plane0.z @ w0)

    def defect(w, zeta):
        plane = AffinePlane.from_normal(w, zeta)
        v = solve_offsets(domain, plane, perturbation, pts)
        E = domain.fermi(pts, v[:, None] * plane.normal[None])
        nu_u = perturbation.normal_at(E, domain)
        return nu_u @ w, v

    w, zeta = w0, zeta0
    r, v = defect(w, zeta)
    h = 1e-6
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            break
        t1 = unit(np.cross(w, [1.0, 0.0, 0.0])
                  if abs(w[0]) < 0.9 else np.cross(w, [0.0, 1.0, 0.0]))
        t2 = np.cross(w, t1)
        cols = []
        for dw, dz in ((t1, 0.0), (t2, 0.0), (None, 1.0)):
            if dw is None:
                rp = defect(w, zeta + h)[0]
                rm = defect(w, zeta - h)[0]
            else:
                rp = defect(unit(w + h * dw), zeta)[0]
                rm = defect(unit(w - h * dw), zeta)[0]
            cols.append((rp - rm) / (2 * h))
        J = np.stack(cols, axis=1)
        step, *_ = np.linalg.lstsq(J, -r, rcond=1e-8)
        rms = np.sqrt(np.mean(r ** 2))
        scale = 1.0
        for _ in range(20):
            w_new = unit(w + scale * (step[0] * t1 + step[1] * t2))
            z_new = zeta + scale * step[2]
            r_new, v_new = defect(w_new, z_new)
            if np.sqrt(np.mean(r_new ** 2)) < rms:
                w, zeta, r, v = w_new, z_new, r_new, v_new
                break
            scale *= 0.5
        else:
            break
    plane = AffinePlane.from_normal(w, zeta)
    E = domain.fermi(pts, v[:, None] * plane.normal[None])
    curve = perturbation.map_points(E)
    comp = SliceComponent(mesh=None, loops=[curve], area=float("nan"),
                          euler_char=1, is_disk=True,
                          ortho_residual=float(np.max(np.abs(r))))
    return SliceResult(plane=plane, components=[comp],
                       meta={"offsets": v, "g_residual": float(np.max(np.abs(r)))})
