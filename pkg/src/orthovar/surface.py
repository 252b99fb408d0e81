"""Oriented triangle meshes with boundary: the discrete surfaces.

Vertices are rows of an (V, n) float array (n = 3 default, up to 5),
triangles are oriented index triples. Boundary loops are extracted once and
cached; all per-vertex quantities (areas, normals) are lumped barycentric.
"""

import numpy as np
from scipy import sparse

from .errors import NonManifoldVertex, OrthovarError


class SurfaceMesh:
    """Immutable-ish oriented triangle mesh with boundary loops."""

    def __init__(self, vertices, triangles, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise OrthovarError("triangles must be (F, 3) indices")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise OrthovarError("triangle index exceeds vertex count")
        self._cache = {}
        if validate:
            self._validate()

    # -- combinatorics ------------------------------------------------------

    def _directed_edges(self):
        t = self.triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def _validate(self):
        de = self._directed_edges()
        und = np.sort(de, axis=1)
        _, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise NonManifoldVertex("edge shared by more than two triangles")
        # consistent orientation: no directed edge may repeat
        _, dcounts = np.unique(de, axis=0, return_counts=True)
        if np.any(dcounts > 1):
            raise OrthovarError("inconsistent triangle orientation")

    @property
    def edges(self):
        if "edges" not in self._cache:
            und = np.unique(np.sort(self._directed_edges(), axis=1), axis=0)
            self._cache["edges"] = und
        return self._cache["edges"]

    @property
    def euler_characteristic(self):
        return len(self.vertices) - len(self.edges) + len(self.triangles)

    @property
    def boundary_edges(self):
        """Directed boundary edges, oriented as they appear in triangles."""
        if "bedges" not in self._cache:
            de = self._directed_edges()
            und = np.sort(de, axis=1)
            uniq, inv, counts = np.unique(und, axis=0, return_inverse=True,
                                          return_counts=True)
            self._cache["bedges"] = de[counts[inv] == 1]
        return self._cache["bedges"]

    @property
    def boundary_loops(self):
        """Ordered vertex-index cycles partitioning the boundary edges."""
        if "loops" not in self._cache:
            succ = {int(a): int(b) for a, b in self.boundary_edges}
            loops = []
            seen = set()
            for start in sorted(succ):
                if start in seen:
                    continue
                loop = [start]
                seen.add(start)
                cur = succ[start]
                while cur != start:
                    loop.append(cur)
                    seen.add(cur)
                    cur = succ[cur]
                loops.append(np.asarray(loop, dtype=np.int64))
            self._cache["loops"] = loops
        return self._cache["loops"]

    @property
    def is_boundary_vertex(self):
        if "isb" not in self._cache:
            isb = np.zeros(len(self.vertices), dtype=bool)
            if len(self.boundary_edges):
                isb[np.unique(self.boundary_edges)] = True
            self._cache["isb"] = isb
        return self._cache["isb"]

    @property
    def vertex_class(self):
        return np.where(self.is_boundary_vertex, "boundary", "interior")

    # -- metric quantities ---------------------------------------------------

    def triangle_areas_normals(self):
        """Areas, and unit normals when the ambient dimension is 3."""
        if "tan" not in self._cache:
            v = self.vertices
            t = self.triangles
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            if v.shape[1] == 3:
                cr = np.cross(e1, e2)
                areas = 0.5 * np.linalg.norm(cr, axis=1)
                safe = np.where(areas == 0.0, 1.0, 2.0 * areas)
                normals = cr / safe[:, None]
            else:
                g11 = np.sum(e1 * e1, axis=1)
                g12 = np.sum(e1 * e2, axis=1)
                g22 = np.sum(e2 * e2, axis=1)
                areas = 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 ** 2, 0.0))
                normals = None
            self._cache["tan"] = (areas, normals)
        return self._cache["tan"]

    @property
    def vertex_areas(self):
        """Lumped barycentric vertex areas (one third of incident triangles)."""
        if "varea" not in self._cache:
            areas, _ = self.triangle_areas_normals()
            w = np.zeros(len(self.vertices))
            np.add.at(w, self.triangles.ravel(), np.repeat(areas / 3.0, 3))
            self._cache["varea"] = w
        return self._cache["varea"]

    @property
    def vertex_normals(self):
        """Area-weighted vertex normals (ambient dimension 3 only)."""
        if "vnorm" not in self._cache:
            areas, tn = self.triangle_areas_normals()
            if tn is None:
                raise OrthovarError("vertex normals need ambient dimension 3")
            acc = np.zeros_like(self.vertices)
            np.add.at(acc, self.triangles.ravel(),
                      np.repeat(tn * areas[:, None], 3, axis=0))
            nrm = np.linalg.norm(acc, axis=1, keepdims=True)
            self._cache["vnorm"] = acc / np.where(nrm == 0.0, 1.0, nrm)
        return self._cache["vnorm"]

    @property
    def area(self):
        return float(np.sum(self.triangle_areas_normals()[0]))

    @property
    def boundary_length(self):
        be = self.boundary_edges
        if len(be) == 0:
            return 0.0
        seg = self.vertices[be[:, 1]] - self.vertices[be[:, 0]]
        return float(np.sum(np.linalg.norm(seg, axis=1)))

    def neighbor_rings(self, depth=2):
        """Padded (V, K) index array of the `depth`-ring neighborhoods
        (vertex itself excluded) plus a boolean mask of valid entries."""
        key = ("rings", depth)
        if key not in self._cache:
            V = len(self.vertices)
            e = self.edges
            ij = np.concatenate([e, e[:, ::-1]])
            A = sparse.csr_matrix(
                (np.ones(len(ij), dtype=bool), (ij[:, 0], ij[:, 1])),
                shape=(V, V))
            R = A.copy()
            for _ in range(depth - 1):
                R = ((R @ A) + R).astype(bool)
            R = R.tolil()
            R.setdiag(False)
            R = R.tocsr()
            counts = np.diff(R.indptr)
            K = int(counts.max()) if V else 0
            idx = np.zeros((V, K), dtype=np.int64)
            mask = np.zeros((V, K), dtype=bool)
            for i in range(V):
                lo, hi = R.indptr[i], R.indptr[i + 1]
                k = hi - lo
                idx[i, :k] = R.indices[lo:hi]
                mask[i, :k] = True
            self._cache[key] = (idx, mask)
        return self._cache[key]

    # -- transformations ------------------------------------------------------

    def copy(self):
        return SurfaceMesh(self.vertices.copy(), self.triangles.copy(),
                           validate=False)

    def with_vertices(self, vertices):
        return SurfaceMesh(vertices, self.triangles, validate=False)

    def transformed(self, scale=1.0, rotation=None, translation=None):
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return self.with_vertices(v)


def refine(mesh, projector=None, domain=None):
    """Midpoint 1:4 subdivision. New vertices may be mapped by `projector`
    (a points -> points callable, e.g. the projection onto the smooth surface
    the mesh discretizes); boundary vertices are additionally projected onto
    the domain boundary when `domain` is given."""
    v = mesh.vertices
    t = mesh.triangles
    edges = mesh.edges
    edge_id = {tuple(e): i for i, e in enumerate(map(tuple, edges))}
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
    if projector is not None:
        mid = np.asarray(projector(mid))
    new_tris = []
    off = len(v)
    for a, b, c in t:
        mab = off + edge_id[(min(a, b), max(a, b))]
        mbc = off + edge_id[(min(b, c), max(b, c))]
        mca = off + edge_id[(min(c, a), max(c, a))]
        new_tris.extend([[a, mab, mca], [b, mbc, mab],
                         [c, mca, mbc], [mab, mbc, mca]])
    out = SurfaceMesh(np.concatenate([v, mid]), np.asarray(new_tris),
                      validate=False)
    if domain is not None:
        verts = out.vertices.copy()
        isb = out.is_boundary_vertex
        verts[isb] = domain.project_to_surface(verts[isb])
        out = SurfaceMesh(verts, out.triangles, validate=False)
    return out


def read_off(path):
    """Read an ASCII OFF mesh."""
    with open(path) as f:
        tokens = []
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if tokens[0] != "OFF":
        raise OrthovarError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        k = int(tokens[pos])
        if k != 3:
            raise OrthovarError(f"{path}: only triangle faces supported")
        tris.append([int(tokens[pos + 1]), int(tokens[pos + 2]),
                     int(tokens[pos + 3])])
        pos += k + 1
    return SurfaceMesh(verts, np.asarray(tris))


def write_off(mesh, path):
    v, t = mesh.vertices, mesh.triangles
    lines = ["OFF", f"{len(v)} {len(t)} {len(mesh.edges)}"]
    for p in v:
        lines.append(" ".join(format(c, ".17g") for c in p))
    for tri in t:
        lines.append("3 " + " ".join(str(i) for i in tri))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
