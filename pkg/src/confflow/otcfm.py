"""Optimal-transport coupling between noise clouds and conformers, and the
straight-line conditional flow-matching path.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geomops import conformer_cost_matrix, kabsch_align, zero_com

MAX_CONFORMERS = 20


@dataclass(frozen=True, eq=False)
class CouplingPlan:
    """``permutation[i]`` is the truth index matched to noise index ``i``."""

    cost: np.ndarray
    permutation: np.ndarray
    total_cost: float

    def pairs(self):
        return [(int(i), int(j)) for i, j in enumerate(self.permutation)]

    def to_dict(self):
        return {
            "cost": self.cost.tolist(),
            "permutation": [int(j) for j in self.permutation],
            "total_cost": self.total_cost,
        }


@dataclass(frozen=True, eq=False)
class PathSample:
    x_t: np.ndarray
    t: float
    u_t: np.ndarray
    pair_ids: tuple


def _lexicographic_matching(tight):
    """Smallest permutation (row by row) using only allowed cells, or None."""
    n = tight.shape[0]

    def completable(rows, used):
        # Kuhn's augmenting paths on the remaining rows/columns
        match_col = {}

        def try_row(r, seen):
            for c in np.flatnonzero(tight[r]):
                c = int(c)
                if c in used or c in seen:
                    continue
                seen.add(c)
                if c not in match_col or try_row(match_col[c], seen):
                    match_col[c] = r
                    return True
            return False

        return all(try_row(r, set()) for r in rows)

    perm = np.empty(n, dtype=np.int64)
    used = set()
    for r in range(n):
        for c in np.flatnonzero(tight[r]):
            c = int(c)
            if c in used:
                continue
            if completable(range(r + 1, n), used | {c}):
                perm[r] = c
                used.add(c)
                break
        else:
            return None
    return perm


def solve_assignment(cost, tol=1e-12):
    """Exact minimum-cost perfect matching; ties go to the lexicographically
    smallest permutation.

    Optimal permutations are exactly the perfect matchings that use only
    cells with zero reduced cost under the optimal duals, so the tie-break is
    a greedy search over that tight subgraph.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ValueError(f"cost matrix must be square and non-empty, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    assignment, u, v = kernels.hungarian(cost)
    reduced = cost - u[:, None] - v[None, :]
    scale = max(1.0, float(np.abs(cost).max()))
    tight = reduced <= tol * scale * cost.shape[0]
    tight[np.arange(cost.shape[0]), assignment] = True
    perm = _lexicographic_matching(tight)
    if perm is None:  # pragma: no cover - tight graph always holds the Hungarian matching
        perm = assignment
    total = float(cost[np.arange(cost.shape[0]), perm].sum())
    return CouplingPlan(cost, perm, total)


def num_pairs(m, max_conformers=MAX_CONFORMERS):
    """``min(m, N)`` conformers per molecule per step."""
    return min(int(m), int(max_conformers))


def derive_seed(*parts):
    """Stable integer seed from ints and strings (strings hashed with CRC32)."""
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode()))
        else:
            words.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


def couple(x0, x1, variant="otcfm", rng=None):
    """Pair noise clouds with conformers and align each conformer onto its noise.

    Both stacks are centred first. ``variant="otcfm"`` matches by minimum
    total aligned RMSD; ``"cfm"`` uses a uniformly random pairing drawn from
    ``rng``. Returns ``(pairs, plan)``; ``plan`` is None for ``cfm``.
    """
    x0 = zero_com(np.asarray(x0, dtype=np.float64))
    x1 = zero_com(np.asarray(x1, dtype=np.float64))
    n = x0.shape[0]
    if x1.shape[0] != n:
        raise ValueError("noise and conformer stacks must have equal length")
    if variant == "otcfm":
        plan = solve_assignment(conformer_cost_matrix(list(x0), list(x1)))
        perm = plan.permutation
    elif variant == "cfm":
        plan = None
        perm = rng.permutation(n) if n > 1 else np.zeros(1, dtype=np.int64)
    else:
        raise ValueError(f"unknown flow matcher {variant!r}")
    pairs = []
    for i, j in enumerate(perm):
        a, b = kabsch_align(x0[i], x1[j])
        pairs.append((a, b))
    return pairs, plan


def draw_coupling(mol, n, rng_seed, variant="otcfm"):
    """Noise draw, conformer subset and coupling for one molecule.

    Returns ``(pairs, plan, rng)``; the generator is returned so callers keep
    drawing from the same stream (times, path noise).
    """
    m = mol.num_conformers
    if m < 1:
        raise ValueError(f"molecule {mol.id!r} has no conformers")
    if not 1 <= n <= m:
        raise ValueError(f"cannot draw {n} of {m} conformers for {mol.id!r}")
    rng = np.random.default_rng(rng_seed)
    x0 = rng.standard_normal((n, mol.num_atoms, 3))
    chosen = np.sort(rng.choice(m, size=n, replace=False))
    x1 = mol.conformers[chosen]
    pairs, plan = couple(x0, x1, variant, rng)
    return pairs, plan, rng


def sample_coupling(mol, n, rng_seed, variant="otcfm"):
    """``n`` (noise, conformer) pairs for ``mol`` coupled by aligned-RMSD OT."""
    return draw_coupling(mol, n, rng_seed, variant)[0]


def cond_path_sample(pair, t, sigma=0.0, rng=None, pair_ids=(0, 0)):
    """Point on the straight path from ``x0`` to ``x1`` at time ``t``.

    ``x_t = x0 + t (x1 - x0) + sigma * eps`` and ``u_t = x1 - x0``. The noise
    ``eps`` is centred so ``x_t`` stays on the zero-CoM subspace.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x0, x1 = (np.asarray(a, dtype=np.float64) for a in pair)
    u = x1 - x0
    x_t = x0 + t * u
    if sigma > 0:
        if rng is None:
            raise ValueError("sigma > 0 needs an rng")
        x_t = x_t + sigma * zero_com(rng.standard_normal(x0.shape))
    return PathSample(x_t, t, u, tuple(pair_ids))


def cfm_loss(v, u):
    """Mean squared error over all components."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if v.shape != u.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {u.shape}")
    d = v - u
    return float(np.mean(d * d))
