"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. ``hungarian``, ``kabsch_rmsd_matrix`` and
``scatter_add`` pick one according to :mod:`confflow._accel`; both variants
stay importable so the benchmark and the tests can compare them directly.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# Hungarian algorithm (shortest augmenting path with potentials, O(n^3))
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hungarian_loops(cost):
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1
    return assignment, u[1:].copy(), v[1:].copy()


def _hungarian_numpy(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cols = np.flatnonzero(free)
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    assignment[p[1:] - 1] = np.arange(n)
    return assignment, u[1:].copy(), v[1:].copy()


def hungarian(cost):
    """Minimum-cost perfect matching on a square matrix.

    Returns ``(assignment, u, v)`` where ``assignment[i]`` is the column of row
    ``i`` and ``u``/``v`` are optimal dual potentials: ``cost - u[:, None] -
    v[None, :] >= 0`` with equality on every assigned cell.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if HAVE_NUMBA:
        return _hungarian_loops(cost)
    return _hungarian_numpy(cost)


# ---------------------------------------------------------------------------
# Kabsch-aligned RMSD between every pair of two centred cloud stacks
# ---------------------------------------------------------------------------


@njit(cache=True)
def _kabsch_rmsd_loops(P, Q):
    n, k = P.shape[0], P.shape[1]
    m = Q.shape[0]
    out = np.empty((n, m))
    H = np.empty((3, 3))
    D = np.eye(3)
    for i in range(n):
        for j in range(m):
            for a in range(3):
                for b in range(3):
                    s = 0.0
                    for r in range(k):
                        s += Q[j, r, a] * P[i, r, b]
                    H[a, b] = s
            U, S, Vt = np.linalg.svd(H)
            D[2, 2] = 1.0 if np.linalg.det(U) * np.linalg.det(Vt) >= 0.0 else -1.0
            R = U @ D @ Vt
            acc = 0.0
            for r in range(k):
                for b in range(3):
                    y = Q[j, r, 0] * R[0, b] + Q[j, r, 1] * R[1, b] + Q[j, r, 2] * R[2, b]
                    d = P[i, r, b] - y
                    acc += d * d
            out[i, j] = np.sqrt(acc / k)
    return out


def _kabsch_rmsd_numpy(P, Q):
    n, k, _ = P.shape
    m = Q.shape[0]
    H = np.einsum("jra,irb->ijab", Q, P)
    U, _, Vt = np.linalg.svd(H)
    d = np.where(np.linalg.det(U) * np.linalg.det(Vt) >= 0.0, 1.0, -1.0)
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    R = U @ Vt
    moved = np.einsum("jra,ijab->ijrb", Q, R)
    diff = P[:, None] - moved
    return np.sqrt(np.einsum("ijrb,ijrb->ij", diff, diff) / k)


def kabsch_rmsd_matrix(P, Q):
    """``out[i, j]`` = RMSD between ``P[i]`` and ``Q[j]`` after rotating ``Q[j]`` onto ``P[i]``.

    Both stacks have shape ``(n, K, 3)`` and must already be centred.
    Reflections are excluded.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    if HAVE_NUMBA:
        return _kabsch_rmsd_loops(P, Q)
    return _kabsch_rmsd_numpy(P, Q)


# ---------------------------------------------------------------------------
# Scatter-add along the leading axis (message aggregation and its adjoint)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scatter_add_loops(values, index, n):
    out = np.zeros((n, values.shape[1]))
    for e in range(values.shape[0]):
        row = index[e]
        for c in range(values.shape[1]):
            out[row, c] += values[e, c]
    return out


def _scatter_add_numpy(values, index, n):
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, index, values)
    return out


def scatter_add(values, index, n):
    """Sum rows of ``values`` into ``n`` buckets given by ``index`` (trailing dims kept)."""
    values = np.asarray(values, dtype=np.float64)
    tail = values.shape[1:]
    if values.shape[0] == 0:
        return np.zeros((n,) + tail)
    flat = np.ascontiguousarray(values.reshape(values.shape[0], -1))
    index = np.ascontiguousarray(index, dtype=np.int64)
    if HAVE_NUMBA:
        out = _scatter_add_loops(flat, index, n)
    else:
        out = _scatter_add_numpy(flat, index, n)
    return out.reshape((n,) + tail)
