"""Local surface descriptors: covariance, 3x3 symmetric eigendecomposition,
pseudo-normal and pseudo-curvature.

Descriptors are computed on raw coordinates and carry no gradient. All
routines have a batched form working on stacks of shape (B, ...) so a whole
stage's neighborhoods are handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSymmetric, TooFewNeighbors

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class SurfaceDescriptor:
    normal: np.ndarray
    curvature: np.ndarray
    eigenvalues: np.ndarray


def local_covariance(neighbor_points) -> np.ndarray:
    """Covariance ``(1/k) sum p p^T - pbar pbar^T`` of a k x 3 neighborhood,
    or of a (B, k, 3) stack.

    Evaluated in the algebraically identical centered form
    ``(1/k) sum (p - pbar)(p - pbar)^T``, which avoids cancellation for
    neighborhoods far from the origin.
    """
    p = np.asarray(neighbor_points, dtype=np.float64)
    if p.shape[-2] < 3:
        raise TooFewNeighbors(f"covariance needs at least 3 points, got {p.shape[-2]}")
    q = p - p.mean(axis=-2, keepdims=True)
    cov = np.swapaxes(q, -1, -2) @ q / p.shape[-2]
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each vector (last axis) so its largest-magnitude component is
    positive. Components within 1e-12 of the maximum magnitude count as tied
    and are resolved in z, y, x preference order."""
    v = np.asarray(vectors, dtype=np.float64)
    mag = np.abs(v)
    top = mag.max(axis=-1, keepdims=True)
    tied = mag >= top - 1e-12
    # reversed argmax picks the highest tied axis (z before y before x)
    axis = v.shape[-1] - 1 - np.argmax(tied[..., ::-1], axis=-1)
    pivot = np.take_along_axis(v, axis[..., None], axis=-1)
    return np.where(pivot < 0, -v, v)


def _gram_schmidt(vecs: np.ndarray) -> np.ndarray:
    """Re-orthonormalize the columns of each 3x3 matrix in column order."""
    out = np.empty_like(vecs)
    for j in range(3):
        col = vecs[:, :, j].copy()
        for i in range(j):
            prev = out[:, :, i]
            col -= (prev * col).sum(axis=1, keepdims=True) * prev
        out[:, :, j] = col / np.linalg.norm(col, axis=1, keepdims=True)
    return out


def sym_eigen_3x3_batch(mats) -> tuple:
    """Cyclic Jacobi eigendecomposition of a (B, 3, 3) stack of symmetric
    matrices.

    Returns eigenvalues (B, 3) in descending order, clamped at zero, and
    eigenvectors (B, 3, 3) as sign-canonicalized orthonormal columns.
    """
    a = np.array(mats, dtype=np.float64).reshape(-1, 3, 3)
    scale = np.maximum(np.abs(a).max(axis=(1, 2)), 1.0)
    if (np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2)) > 1e-9 * scale).any():
        raise NotSymmetric("matrix is not symmetric within 1e-9")
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    b = a.shape[0]
    v = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
    fro = np.sqrt((a * a).sum(axis=(1, 2)))
    rows = np.arange(b)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(2.0 * (a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2))
        if (off <= JACOBI_TOL * fro).all():
            break
        for p, q in _PAIRS:
            apq = a[:, p, q]
            live = apq != 0.0
            safe = np.where(live, apq, 1.0)
            with np.errstate(over="ignore"):
                # theta may overflow to inf for negligible apq; t -> 0 then
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(live, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
            rot[:, p, p] = c
            rot[:, q, q] = c
            rot[:, p, q] = s
            rot[:, q, p] = -s
            a = np.swapaxes(rot, 1, 2) @ a @ rot
            a[rows[live], p, q] = 0.0
            a[rows[live], q, p] = 0.0
            v = v @ rot
    vals = np.diagonal(a, axis1=1, axis2=2)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    v = _gram_schmidt(v)
    v = np.swapaxes(canonical_sign(np.swapaxes(v, 1, 2)), 1, 2)
    return np.maximum(vals, 0.0), v


def sym_eigen_3x3(mat) -> tuple:
    """Eigenvalues (descending, >= 0) and eigenvector columns of one
    symmetric 3x3 matrix."""
    vals, vecs = sym_eigen_3x3_batch(np.asarray(mat, dtype=np.float64)[None])
    return vals[0], vecs[0]


def pseudo_normal(eigenvectors, eigenvalues) -> np.ndarray:
    """Eigenvector of the smallest eigenvalue, sign-canonicalized. Accepts a
    single decomposition or a batch."""
    vecs = np.asarray(eigenvectors, dtype=np.float64)
    vals = np.asarray(eigenvalues, dtype=np.float64)
    idx = np.argmin(vals[..., ::-1], axis=-1)
    idx = vals.shape[-1] - 1 - idx  # last of the tied minima
    normal = np.take_along_axis(vecs, idx[..., None, None], axis=-1)[..., 0]
    return canonical_sign(normal)


def pseudo_curvature(eigenvalues) -> np.ndarray:
    """Eigenvalues normalized to sum to one; uniform thirds when the sum is
    below 1e-12."""
    vals = np.asarray(eigenvalues, dtype=np.float64)
    total = vals.sum(axis=-1, keepdims=True)
    flat = total < 1e-12
    return np.where(flat, 1.0 / 3.0, vals / np.where(flat, 1.0, total))


def describe_batch(neighbor_points) -> tuple:
    """Normals (B, 3), curvatures (B, 3) and eigenvalues (B, 3) for a
    (B, k, 3) stack of neighborhoods."""
    cov = local_covariance(neighbor_points)
    vals, vecs = sym_eigen_3x3_batch(cov)
    lam = np.diagonal(np.swapaxes(vecs, 1, 2) @ cov @ vecs, axis1=1, axis2=2)
    assert np.allclose(cov @ vecs, vecs * lam[:, None, :], rtol=0.0,
                       atol=1e-8 * max(1.0, float(np.abs(cov).max(initial=0.0)))), "eigen residual"
    return pseudo_normal(vecs, vals), pseudo_curvature(vals), vals


def describe(neighbor_points) -> SurfaceDescriptor:
    normals, curv, vals = describe_batch(np.asarray(neighbor_points, dtype=np.float64)[None])
    return SurfaceDescriptor(normals[0], curv[0], vals[0])
