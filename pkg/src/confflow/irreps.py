"""Real SO(3) irreps: spherical harmonics, Wigner-D matrices, Clebsch-Gordan
coefficients and depth-wise tensor products.

Conventions (stored in checkpoints as :data:`CONVENTION`):

* real basis, components ordered ``m = -L, ..., L``; for ``L = 1`` this is
  ``(y, z, x)``;
* component normalisation, ``|Y^L(u)|^2 = 2L + 1`` for every unit ``u``;
* ``Y^L(R u) = D^L(R) Y^L(u)``, so ``D(R1 R2) = D(R1) D(R2)``.
"""

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

CONVENTION = "real-sh/m-ascending/yzx/component-norm/v1"
MAX_DEGREE = 12

_lock = threading.Lock()


def _check_degree(L):
    if not isinstance(L, (int, np.integer)) or L < 0:
        raise ValueError(f"degree must be a non-negative integer, got {L!r}")
    if L > MAX_DEGREE:
        raise ValueError(f"degree {L} exceeds supported maximum {MAX_DEGREE}")
    return int(L)


# ---------------------------------------------------------------------------
# Layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IrrepsLayout:
    """Ordered ``(L, channels)`` blocks; flat storage is ``[L][c][m]``."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((int(L), int(c)) for L, c in self.entries)
        degs = [L for L, _ in entries]
        if any(L < 0 for L in degs) or any(c < 1 for _, c in entries):
            raise ValueError(f"invalid irreps layout {entries}")
        if degs != sorted(set(degs)):
            raise ValueError("layout degrees must be unique and ascending")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def uniform(cls, l_max, channels):
        return cls(tuple((L, channels) for L in range(l_max + 1)))

    @property
    def dim(self):
        return sum(c * (2 * L + 1) for L, c in self.entries)

    @property
    def degrees(self):
        return tuple(L for L, _ in self.entries)

    def channels(self, L):
        for deg, c in self.entries:
            if deg == L:
                return c
        raise KeyError(L)

    def slices(self):
        """``{L: slice}`` into the flat vector."""
        out, start = {}, 0
        for L, c in self.entries:
            n = c * (2 * L + 1)
            out[L] = slice(start, start + n)
            start += n
        return out


@dataclass(frozen=True, eq=False)
class IrrepsTensor:
    layout: IrrepsLayout
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape[-1] != self.layout.dim:
            raise ValueError(f"data length {data.shape[-1]} does not match layout dim {self.layout.dim}")
        if not np.all(np.isfinite(data)):
            raise ValueError("irreps tensor has non-finite entries")
        object.__setattr__(self, "data", data)

    def block(self, L):
        """``(..., C_L, 2L+1)`` view of degree ``L``."""
        sl = self.layout.slices()[L]
        c = self.layout.channels(L)
        return self.data[..., sl].reshape(self.data.shape[:-1] + (c, 2 * L + 1))

    @classmethod
    def from_blocks(cls, layout, blocks):
        parts = []
        for L, c in layout.entries:
            b = np.asarray(blocks[L], dtype=np.float64)
            parts.append(b.reshape(b.shape[:-2] + (c * (2 * L + 1),)))
        return cls(layout, np.concatenate(parts, axis=-1))

    def rotate(self, R):
        """Apply ``D^L(R)`` to every block."""
        blocks = {L: self.block(L) @ wigner_d(L, R).T for L in self.layout.degrees}
        return IrrepsTensor.from_blocks(self.layout, blocks)


# ---------------------------------------------------------------------------
# Spherical harmonics
# ---------------------------------------------------------------------------


def _sh_all(l_max, u):
    """Real SH for degrees ``0..l_max`` on unit vectors ``u`` of shape (N, 3).

    Uses the Cartesian form ``P_l^m(z) = sin^m(theta) Q_l^m(z)`` with
    ``sin^m(theta) e^{i m phi} = (x + i y)^m``, which has no pole singularity.
    Returns a list of ``(N, 2l+1)`` arrays.
    """
    x, y, z = u[:, 0], u[:, 1], u[:, 2]
    n = u.shape[0]
    # A_m + i B_m = (x + i y)^m
    A = [np.ones(n)]
    B = [np.zeros(n)]
    for m in range(1, l_max + 1):
        A.append(A[m - 1] * x - B[m - 1] * y)
        B.append(A[m - 1] * y + B[m - 1] * x)
    # Q[l][m] polynomials without the Condon-Shortley phase
    Q = [[None] * (l_max + 1) for _ in range(l_max + 1)]
    for m in range(l_max + 1):
        Q[m][m] = np.full(n, float(_double_factorial(2 * m - 1)))
        if m + 1 <= l_max:
            Q[m + 1][m] = (2 * m + 1) * z * Q[m][m]
        for l in range(m + 2, l_max + 1):
            Q[l][m] = ((2 * l - 1) * z * Q[l - 1][m] - (l + m - 1) * Q[l - 2][m]) / (l - m)
    out = []
    for l in range(l_max + 1):
        Y = np.empty((n, 2 * l + 1))
        for m in range(l + 1):
            # component normalisation: sqrt(4 pi) * N_lm
            norm = math.sqrt((2 * l + 1) * math.factorial(l - m) / math.factorial(l + m))
            if m == 0:
                Y[:, l] = norm * Q[l][0]
            else:
                Y[:, l + m] = math.sqrt(2.0) * norm * Q[l][m] * A[m]
                Y[:, l - m] = math.sqrt(2.0) * norm * Q[l][m] * B[m]
        out.append(Y)
    return out


def _double_factorial(k):
    r = 1
    while k > 1:
        r *= k
        k -= 2
    return r


def _as_unit(u, tol):
    u = np.asarray(u, dtype=np.float64)
    flat = u.reshape(-1, 3)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("spherical harmonics need unit vectors")
    return flat


def sh_eval(L, u, tol=1e-9):
    """Degree-``L`` real spherical harmonics of unit vector(s) ``u``.

    ``u`` may be a single 3-vector or an array ``(..., 3)``; the result has
    shape ``(..., 2L+1)``.
    """
    L = _check_degree(L)
    flat = _as_unit(u, tol)
    Y = _sh_all(L, flat)[L]
    return Y.reshape(np.shape(u)[:-1] + (2 * L + 1,))


def sh_concat(l_max, u, tol=1e-9):
    """Degrees ``0..l_max`` stacked along the last axis, ``(..., (l_max+1)^2)``."""
    l_max = _check_degree(l_max)
    flat = _as_unit(u, tol)
    Y = np.concatenate(_sh_all(l_max, flat), axis=1)
    return Y.reshape(np.shape(u)[:-1] + ((l_max + 1) ** 2,))


# ---------------------------------------------------------------------------
# Change of basis and generators
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def complex_to_real(L):
    """Unitary ``C`` with ``Y_real = C @ Y_complex`` (Condon-Shortley complex basis)."""
    n = 2 * L + 1
    C = np.zeros((n, n), dtype=np.complex128)
    s = 1.0 / math.sqrt(2.0)
    C[L, L] = 1.0
    for m in range(1, L + 1):
        sign = (-1) ** m
        C[L + m, L + m] = sign * s
        C[L + m, L - m] = s
        C[L - m, L - m] = 1j * s
        C[L - m, L + m] = -1j * sign * s
    C.setflags(write=False)
    return C


@lru_cache(maxsize=None)
def _generators(L):
    """Real antisymmetric ``G_a`` with ``D(exp(theta [e_a]_x)) = expm(theta G_a)``."""
    n = 2 * L + 1
    m = np.arange(-L, L + 1, dtype=np.float64)
    Jz = np.diag(m).astype(np.complex128)
    Jp = np.zeros((n, n), dtype=np.complex128)
    for k in range(n - 1):
        mm = m[k]
        Jp[k + 1, k] = math.sqrt((L - mm) * (L + mm + 1))
    Jm = Jp.conj().T
    Jx = (Jp + Jm) / 2
    Jy = (Jp - Jm) / 2j
    C = complex_to_real(L)
    gens = []
    # Y(u) transforms in the conjugate of the ket representation
    for J in (Jx, Jy, Jz):
        G = C @ (-(1j * J).conj()) @ C.conj().T
        if np.abs(G.imag).max() > 1e-12:
            raise AssertionError("real-basis generator is not real")
        G = np.ascontiguousarray(G.real)
        G.setflags(write=False)
        gens.append(G)
    return tuple(gens)


def rotation_to_axis_angle(R):
    """Return ``(axis, angle)`` via a quaternion, stable near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    # Shepperd: pick the largest quaternion component to divide by
    diag = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(diag))
    if k == 0:
        w = 0.5 * math.sqrt(max(1.0 + tr, 0.0))
        x = (R[2, 1] - R[1, 2]) / (4 * w)
        y = (R[0, 2] - R[2, 0]) / (4 * w)
        z = (R[1, 0] - R[0, 1]) / (4 * w)
    elif k == 1:
        x = 0.5 * math.sqrt(max(1.0 + 2 * R[0, 0] - tr, 0.0))
        w = (R[2, 1] - R[1, 2]) / (4 * x)
        y = (R[0, 1] + R[1, 0]) / (4 * x)
        z = (R[0, 2] + R[2, 0]) / (4 * x)
    elif k == 2:
        y = 0.5 * math.sqrt(max(1.0 + 2 * R[1, 1] - tr, 0.0))
        w = (R[0, 2] - R[2, 0]) / (4 * y)
        x = (R[0, 1] + R[1, 0]) / (4 * y)
        z = (R[1, 2] + R[2, 1]) / (4 * y)
    else:
        z = 0.5 * math.sqrt(max(1.0 + 2 * R[2, 2] - tr, 0.0))
        w = (R[1, 0] - R[0, 1]) / (4 * z)
        x = (R[0, 2] + R[2, 0]) / (4 * z)
        y = (R[1, 2] + R[2, 1]) / (4 * z)
    v = np.array([x, y, z])
    s = np.linalg.norm(v)
    if s < 1e-300:
        return np.array([0.0, 0.0, 1.0]), 0.0
    angle = 2.0 * math.atan2(s, w)
    return v / s, angle


def wigner_d(L, R, tol=1e-9):
    """Real Wigner-D matrix of degree ``L`` for proper rotation ``R``."""
    L = _check_degree(L)
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    if L == 0:
        return np.ones((1, 1))
    axis, angle = rotation_to_axis_angle(R)
    Gx, Gy, Gz = _generators(L)
    return expm(angle * (axis[0] * Gx + axis[1] * Gy + axis[2] * Gz))


# ---------------------------------------------------------------------------
# Clebsch-Gordan
# ---------------------------------------------------------------------------


def selection_rule(L1, L2, L3):
    return abs(L1 - L2) <= L3 <= L1 + L2


def _cg_complex(j1, m1, j2, m2, j3, m3):
    """Condon-Shortley ``<j1 m1 j2 m2 | j3 m3>`` by the Racah formula (exact rationals)."""
    if m1 + m2 != m3 or not selection_rule(j1, j2, j3):
        return 0.0
    f = math.factorial
    pre = Fraction(
        (2 * j3 + 1) * f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3),
        f(j1 + j2 + j3 + 1),
    )
    pre *= f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    total = Fraction(0)
    for k in range(0, j1 + j2 - j3 + 1):
        dens = (k, j1 + j2 - j3 - k, j1 - m1 - k, j2 + m2 - k, j3 - j2 + m1 + k, j3 - j1 - m2 + k)
        if min(dens) < 0:
            continue
        d = 1
        for v in dens:
            d *= f(v)
        total += Fraction((-1) ** k, d)
    # sqrt of a rational: split to keep precision
    return float(total) * math.sqrt(pre.numerator) / math.sqrt(pre.denominator)


_CG_CACHE = {}


def cg_table(L1, L2, L3):
    """Real-basis coupling tensor ``Q[m1, m2, m3]`` (read-only, cached).

    Obtained from the complex CG table by the change of basis; for odd
    ``L1 + L2 + L3`` the transformed table is purely imaginary and its
    imaginary part is taken. Each ``Q[:, :, m3]`` has unit Frobenius norm.
    Returns zeros when the selection rule fails.
    """
    L1, L2, L3 = (_check_degree(L) for L in (L1, L2, L3))
    key = (L1, L2, L3)
    table = _CG_CACHE.get(key)
    if table is not None:
        return table
    with _lock:
        table = _CG_CACHE.get(key)
        if table is not None:
            return table
        shape = (2 * L1 + 1, 2 * L2 + 1, 2 * L3 + 1)
        if not selection_rule(L1, L2, L3):
            table = np.zeros(shape)
        else:
            Cc = np.zeros(shape, dtype=np.complex128)
            for a, m1 in enumerate(range(-L1, L1 + 1)):
                for b, m2 in enumerate(range(-L2, L2 + 1)):
                    m3 = m1 + m2
                    if abs(m3) <= L3:
                        Cc[a, b, m3 + L3] = _cg_complex(L1, m1, L2, m2, L3, m3)
            A, B, C = complex_to_real(L1), complex_to_real(L2), complex_to_real(L3)
            Qc = np.einsum("ia,jb,kc,abc->ijk", A.conj(), B.conj(), C, Cc)
            if (L1 + L2 + L3) % 2 == 0:
                table = Qc.real.copy()
            else:
                table = Qc.imag.copy()
            table[np.abs(table) < 1e-15] = 0.0
            table /= np.linalg.norm(table.reshape(-1, shape[2]), axis=0)[None, None, :]
        table.setflags(write=False)
        _CG_CACHE[key] = table
        return table


def cg_coefficient(L1, m1, L2, m2, L3, m3):
    for L, m in ((L1, m1), (L2, m2), (L3, m3)):
        _check_degree(L)
        if abs(m) > L:
            raise ValueError(f"order {m} outside [-{L}, {L}]")
    return float(cg_table(L1, L2, L3)[m1 + L1, m2 + L2, m3 + L3])


# ---------------------------------------------------------------------------
# Depth-wise tensor product
# ---------------------------------------------------------------------------


def all_paths(degrees1, degrees2, degrees3):
    return tuple(
        (L1, L2, L3)
        for L1 in degrees1
        for L2 in degrees2
        for L3 in degrees3
        if selection_rule(L1, L2, L3)
    )


class TensorProduct:
    """Channel-matched CG product ``f (x) g`` with one scalar weight per path.

    ``f`` must carry the same channel count ``C`` at every degree; each
    degree of ``g`` has either ``C`` channels (paired channel by channel) or a
    single channel (shared by all). Outputs have ``C`` channels per degree.
    Paths feeding the same output degree are summed and scaled by
    ``1/sqrt(n_paths)``. Illegal paths are rejected here, at construction.
    """

    def __init__(self, in1, in2, out, paths=None):
        chans = {c for _, c in in1.entries}
        if len(chans) != 1:
            raise ValueError("first input must have the same channel count at every degree")
        (C,) = chans
        for L, c in in2.entries:
            if c not in (1, C):
                raise ValueError(f"second input degree {L} has {c} channels, expected 1 or {C}")
        for L, c in out.entries:
            if c != C:
                raise ValueError(f"output degree {L} has {c} channels, expected {C}")
        if paths is None:
            paths = all_paths(in1.degrees, in2.degrees, out.degrees)
        paths = tuple(tuple(int(v) for v in p) for p in paths)
        for L1, L2, L3 in paths:
            if L1 not in in1.degrees or L2 not in in2.degrees or L3 not in out.degrees:
                raise ValueError(f"path {(L1, L2, L3)} uses a degree missing from the layouts")
            if not selection_rule(L1, L2, L3):
                raise ValueError(f"path {(L1, L2, L3)} violates |L1 - L2| <= L3 <= L1 + L2")
        fed = {p[2] for p in paths}
        for L3 in out.degrees:
            if L3 not in fed:
                raise ValueError(f"no path produces output degree {L3}")
        self.in1, self.in2, self.out = in1, in2, out
        self.channels = C
        self.paths = paths
        self.path_norm = {L3: 1.0 / math.sqrt(sum(1 for p in paths if p[2] == L3)) for L3 in fed}

    @property
    def num_paths(self):
        return len(self.paths)

    def __call__(self, f, g, weights):
        if f.layout != self.in1 or g.layout != self.in2:
            raise ValueError("input layouts do not match this tensor product")
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != self.num_paths:
            raise ValueError(f"expected {self.num_paths} path weights, got {weights.shape[0]}")
        lead = np.broadcast_shapes(f.data.shape[:-1], g.data.shape[:-1])
        blocks = {L: np.zeros(lead + (self.channels, 2 * L + 1)) for L in self.out.degrees}
        for w, (L1, L2, L3) in zip(weights, self.paths):
            Q = cg_table(L1, L2, L3)
            h = np.einsum("ijk,...ci,...cj->...ck", Q, f.block(L1), g.block(L2))
            blocks[L3] = blocks[L3] + (w * self.path_norm[L3]) * h
        return IrrepsTensor.from_blocks(self.out, blocks)


@lru_cache(maxsize=64)
def _tp_cached(in1, in2, out, paths):
    return TensorProduct(in1, in2, out, paths)


def tensor_product(f, g, out_layout, weights, paths=None):
    """Evaluate ``f (x) g`` into ``out_layout``; see :class:`TensorProduct`."""
    return _tp_cached(f.layout, g.layout, out_layout, None if paths is None else tuple(map(tuple, paths)))(
        f, g, weights
    )


def flat_offset(L):
    return L * L


def degree_index(l_max):
    """Degree of every component in the flat ``0..l_max`` ordering."""
    return np.concatenate([np.full(2 * L + 1, L) for L in range(l_max + 1)])


def flat_coupling(l_max_in, l_max_edge, l_max_out):
    """Dense coupling tensors over flat ``(l+1)^2`` indices.

    Returns ``(paths, W)`` where ``W[p, i, j, k]`` holds the real CG table of
    path ``p`` already scaled by its ``1/sqrt(n_paths)`` normalisation.
    """
    paths = all_paths(range(l_max_in + 1), range(l_max_edge + 1), range(l_max_out + 1))
    mult = {}
    for p in paths:
        mult[p[2]] = mult.get(p[2], 0) + 1
    W = np.zeros((len(paths), (l_max_in + 1) ** 2, (l_max_edge + 1) ** 2, (l_max_out + 1) ** 2))
    for n, (L1, L2, L3) in enumerate(paths):
        W[
            n,
            flat_offset(L1) : flat_offset(L1 + 1),
            flat_offset(L2) : flat_offset(L2 + 1),
            flat_offset(L3) : flat_offset(L3 + 1),
        ] = cg_table(L1, L2, L3) / math.sqrt(mult[L3])
    W.setflags(write=False)
    return paths, W
