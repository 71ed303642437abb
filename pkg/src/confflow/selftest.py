"""Quick runtime checks of a build: representation algebra, Kabsch, assignment,
gradients and network equivariance. Each suite returns ``(ok, detail)``."""

import itertools
import time

import numpy as np

from .equinet import GraphBatch, ModelConfig, forward, init_params, loss_and_grad
from .geomops import aligned_rmsd, random_rotation, zero_com
from .irreps import cg_table, selection_rule, sh_eval, wigner_d
from .moldata import Molecule
from .otcfm import solve_assignment


def _rng():
    return np.random.default_rng(20240611)


def check_representations(l_max=4, trials=20):
    rng = _rng()
    worst = 0.0
    for _ in range(trials):
        R1, R2 = random_rotation(rng), random_rotation(rng)
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        for L in range(l_max + 1):
            D1 = wigner_d(L, R1)
            worst = max(worst, np.abs(sh_eval(L, R1 @ u) - D1 @ sh_eval(L, u)).max())
            worst = max(worst, np.abs(wigner_d(L, R1 @ R2) - D1 @ wigner_d(L, R2)).max())
    return worst < 1e-9, f"max error {worst:.2e}"


def check_clebsch_gordan(l_max=3):
    nonzero_outside = 0
    worst = 0.0
    R = random_rotation(_rng())
    for L1, L2, L3 in itertools.product(range(l_max + 1), repeat=3):
        C = cg_table(L1, L2, L3)
        if not selection_rule(L1, L2, L3):
            nonzero_outside += int(np.count_nonzero(C))
            continue
        lhs = np.einsum("ijk,ia,jb->abk", C, wigner_d(L1, R), wigner_d(L2, R))
        rhs = np.einsum("abk,lk->abl", C, wigner_d(L3, R))
        worst = max(worst, np.abs(lhs - rhs).max())
    return nonzero_outside == 0 and worst < 1e-9, f"{nonzero_outside} forbidden nonzeros, equivariance error {worst:.2e}"


def check_kabsch(trials=20):
    rng = _rng()
    worst = 0.0
    for _ in range(trials):
        p = rng.standard_normal((6, 3))
        q = p @ random_rotation(rng).T + rng.standard_normal(3)
        worst = max(worst, aligned_rmsd(p, q))
    chiral = rng.standard_normal((5, 3))
    mirror = aligned_rmsd(chiral, chiral * np.array([1.0, 1.0, -1.0]))
    return worst < 1e-10 and mirror > 1e-3, f"rigid-motion RMSD {worst:.2e}, mirror RMSD {mirror:.3f}"


def check_assignment(trials=100, max_n=6):
    rng = _rng()
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        C = rng.integers(0, 5, size=(n, n)).astype(float)
        best = min(itertools.permutations(range(n)), key=lambda p: sum(C[i, p[i]] for i in range(n)))
        if tuple(solve_assignment(C).permutation) != best:
            return False, f"mismatch on {C.tolist()}"
    return True, f"{trials} matrices match brute force"


def _tiny():
    cfg = ModelConfig(l_max=1, channels=2, num_blocks=2, atom_vocab=9, time_dim=2, hidden=4, num_rbf=2)
    rng = _rng()
    x = zero_com(rng.standard_normal((4, 3)))
    mol = Molecule("probe", [6, 6, 7, 8], [(0, 1, "single"), (1, 2, "double"), (1, 3, "single")], x)
    batch = GraphBatch.from_molecules([mol], [x], 0.3)
    return cfg, batch, rng


def check_gradients(h=1e-5):
    cfg, batch, rng = _tiny()
    params = init_params(cfg, 3)
    u = zero_com(rng.standard_normal((batch.num_nodes, 3)))
    _, grads = loss_and_grad(params, batch, u)
    worst = 0.0
    for name, arr in params.tensors.items():
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                q = params.copy()
                q.tensors[name][idx] += sign * h
                v = forward(q, batch)
                vals.append(float(np.mean((v - u) ** 2)))
            fd = (vals[0] - vals[1]) / (2 * h)
            g = grads[name][idx]
            scale = max(abs(g), abs(fd))
            if scale > 0:
                worst = max(worst, abs(g - fd) / scale)
    n = params.num_parameters()
    return worst < 1e-5, f"{n} parameters, max relative error {worst:.2e}"


def check_network_equivariance(trials=5):
    cfg, batch, rng = _tiny()
    params = init_params(cfg, 1)
    v = forward(params, batch)
    worst = 0.0
    for _ in range(trials):
        R = random_rotation(rng)
        vr = forward(params, batch.with_coords(batch.x @ R.T))
        worst = max(worst, np.abs(vr - v @ R.T).max() / (np.abs(v).max() + 1e-12))
    return worst < 1e-8, f"relative deviation {worst:.2e}"


SUITES = (
    ("representations", check_representations),
    ("clebsch-gordan", check_clebsch_gordan),
    ("kabsch", check_kabsch),
    ("assignment", check_assignment),
    ("gradients", check_gradients),
    ("equivariance", check_network_equivariance),
)


def run_all(out=print):
    """Run every suite, report one line each, return True when all pass."""
    all_ok = True
    for name, fn in SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed suite, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name:<16} {detail} ({time.perf_counter() - t0:.2f}s)")
    return all_ok


