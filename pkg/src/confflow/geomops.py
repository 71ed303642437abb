"""Rigid-body canonicalisation of point clouds: centring, Kabsch rotation and
aligned RMSD.

Clouds are ``(K, 3)`` float arrays. Rotations act on row vectors from the
right, ``moved = q @ R``.
"""

import numpy as np

from . import kernels

CENTER_TOL = 1e-9


def as_cloud(p, name="cloud"):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
        raise ValueError(f"{name} must have shape (K, 3) with K >= 1, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has non-finite coordinates")
    return p


def zero_com(p):
    """Subtract the centroid (unit masses)."""
    p = np.asarray(p, dtype=np.float64)
    return p - p.mean(axis=-2, keepdims=True)


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=np.float64)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def _check_pair(p, q):
    p = as_cloud(p, "p")
    q = as_cloud(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"atom count mismatch: {p.shape[0]} vs {q.shape[0]}")
    return p, q


def kabsch_rotation(p, q):
    """Proper rotation ``R`` minimising ``||p - q @ R||_F``.

    Both clouds must already be centred. The smallest singular direction is
    flipped when needed so that ``det(R) = +1``.
    """
    p, q = _check_pair(p, q)
    for name, c in (("p", p), ("q", q)):
        if np.abs(c.mean(axis=0)).max() > CENTER_TOL:
            raise ValueError(f"{name} is not centred (apply zero_com first)")
    U, _, Vt = np.linalg.svd(q.T @ p)
    d = 1.0 if np.linalg.det(U) * np.linalg.det(Vt) >= 0.0 else -1.0
    D = np.diag([1.0, 1.0, d])
    return U @ D @ Vt


def kabsch_align(reference, mobile):
    """Centre both clouds and rotate ``mobile`` onto ``reference``.

    Returns ``(reference_centred, mobile_aligned)``.
    """
    p, q = _check_pair(reference, mobile)
    p = zero_com(p)
    q = zero_com(q)
    return p, q @ kabsch_rotation(p, q)


def rmsd(p, q):
    """Plain coordinate RMSD, no alignment."""
    d = np.asarray(p) - np.asarray(q)
    return float(np.sqrt(np.einsum("ij,ij->", d, d) / d.shape[0]))


def aligned_rmsd(p, q):
    """RMSD after centring both clouds and Kabsch-rotating ``q`` onto ``p``."""
    pc, qa = kabsch_align(p, q)
    return rmsd(pc, qa)


def conformer_cost_matrix(noise, truth):
    """``C[i, j] = aligned_rmsd(noise[i], truth[j])``."""
    noise = [as_cloud(c, "noise cloud") for c in noise]
    truth = [as_cloud(c, "truth cloud") for c in truth]
    if len(noise) != len(truth):
        raise ValueError(f"list lengths differ: {len(noise)} vs {len(truth)}")
    return rmsd_matrix(noise, truth)


def rmsd_matrix(A, B):
    """Aligned RMSD between every cloud of ``A`` (rows) and of ``B`` (columns)."""
    A = np.asarray([np.asarray(a, dtype=np.float64) for a in A])
    B = np.asarray([np.asarray(b, dtype=np.float64) for b in B])
    if A.ndim != 3 or B.ndim != 3 or A.shape[1:] != B.shape[1:] or A.shape[2] != 3:
        raise ValueError("all clouds must share the same (K, 3) shape")
    return kernels.kabsch_rmsd_matrix(zero_com(A), zero_com(B))


def random_rotation(rng):
    """Haar-uniform rotation from a normalised Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
