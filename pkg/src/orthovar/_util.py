"""Small shared helpers: frames, Grassmannian projection, CSV output."""

import hashlib

import numpy as np


def unit(v, axis=-1):
    """Normalize vectors along `axis`; zero vectors are returned unchanged."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    n = np.where(n == 0.0, 1.0, n)
    return v / n


def tangent_basis(normal):
    """Two orthonormal vectors spanning the plane orthogonal to `normal`.

    Works on a single vector or an (N, 3) batch; deterministic choice.
    """
    n = unit(np.atleast_2d(normal))
    # pick the coordinate axis least aligned with n, per row
    k = np.argmin(np.abs(n), axis=1)
    e = np.zeros_like(n)
    e[np.arange(len(n)), k] = 1.0
    t1 = unit(np.cross(n, e))
    t2 = np.cross(n, t1)
    if np.asarray(normal).ndim == 1:
        return t1[0], t2[0]
    return t1, t2


def complete_basis(vectors):
    """Orthonormal basis of the orthogonal complement of the given row vectors."""
    vectors = np.atleast_2d(vectors)
    n = vectors.shape[1]
    q, _ = np.linalg.qr(np.concatenate([vectors.T, np.eye(n)], axis=1))
    k = np.linalg.matrix_rank(vectors)
    return q[:, k:].T


def grassmannian_project(P, m):
    """Nearest rank-m orthogonal projection matrix: symmetrize then
    eigen-truncate to the top m eigenvalues."""
    P = 0.5 * (P + P.T)
    w, v = np.linalg.eigh(P)
    top = v[:, np.argsort(w)[::-1][:m]]
    return top @ top.T


def plane_project(z, P, m):
    """Project (z, P) onto the affine-plane manifold: P to the Grassmannian,
    z to ker P."""
    P = grassmannian_project(P, m)
    z = np.asarray(z, dtype=float)
    return z - P @ z, P


def projection_basis(P, m):
    """Orthonormal basis (columns) of the range of the projection P."""
    w, v = np.linalg.eigh(0.5 * (P + P.T))
    return v[:, np.argsort(w)[::-1][:m]]


def fmt12(x):
    """Fixed 12-significant-digit float formatting used in all CSV output."""
    return format(float(x), ".12g")


def config_hash(parts):
    """Short deterministic hash of a config, for CSV metadata comments."""
    text = "|".join(str(p) for p in parts)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_csv(path, header, rows, config_parts=()):
    """Write a CSV with a header row, 12-digit floats and a trailing
    metadata comment carrying the config hash."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for c in row:
            if isinstance(c, (float, np.floating)):
                cells.append(fmt12(c))
            elif isinstance(c, (int, np.integer, bool, np.bool_)):
                cells.append(str(int(c)))
            else:
                cells.append(str(c))
        lines.append(",".join(cells))
    lines.append("# config_hash=" + config_hash(config_parts))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
