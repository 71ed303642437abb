"""Small synthetic molecule sets for smoke tests and the toy training run.

Molecules are random heavy-atom trees built from internal coordinates (bond
length, bond angle, torsion). Conformers of one molecule share the tree and
differ only in their torsions, so they are distinct low-energy-looking shapes
with identical topology.
"""

import math

import numpy as np

from .moldata import DatasetIndex, Molecule, Provenance

BOND_LENGTH = 1.5
BOND_ANGLE = math.radians(111.0)
MIN_NONBONDED = 1.9
_ELEMENTS = (6, 6, 6, 6, 7, 8)


def _place(a, b, c, length, angle, torsion):
    """Position of ``d`` bonded to ``c`` with angle ``b-c-d`` and torsion ``a-b-c-d``."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    nn = np.linalg.norm(n)
    if nn < 1e-8:
        # collinear reference: pick any perpendicular
        n = np.cross(bc, [1.0, 0.0, 0.0] if abs(bc[0]) < 0.9 else [0.0, 1.0, 0.0])
        nn = np.linalg.norm(n)
    n /= nn
    m = np.cross(n, bc)
    d2 = np.array(
        [
            -length * math.cos(angle),
            length * math.sin(angle) * math.cos(torsion),
            length * math.sin(angle) * math.sin(torsion),
        ]
    )
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def _random_tree(k, rng):
    """Parent array of a tree with max degree 4 and a backbone of >= 3 atoms."""
    parent = [-1, 0, 1]
    degree = [1, 2, 1]
    for i in range(3, k):
        choices = [a for a in range(i) if degree[a] < 4 and a > 0]
        # prefer extending the chain end so molecules stay elongated
        p = i - 1 if rng.random() < 0.6 and degree[i - 1] < 4 else int(rng.choice(choices))
        parent.append(p)
        degree[p] += 1
        degree.append(1)
    return parent


def _coords(parent, torsions):
    k = len(parent)
    x = np.zeros((k, 3))
    x[1] = [BOND_LENGTH, 0.0, 0.0]
    x[2] = x[1] + BOND_LENGTH * np.array([-math.cos(BOND_ANGLE), math.sin(BOND_ANGLE), 0.0])
    children = {}
    for i in range(3, k):
        p = parent[i]
        g = parent[p] if parent[p] >= 0 else 1
        h = parent[g] if parent[g] >= 0 else -1
        if h < 0 or h in (p, g):
            h = next(c for c in range(i) if c not in (p, g))
        slot = children.setdefault(p, 0)
        children[p] += 1
        x[i] = _place(x[h], x[g], x[p], BOND_LENGTH, BOND_ANGLE, torsions[i] + slot * 2.0 * math.pi / 3.0)
    return x


def _clash_free(x, parent):
    bonded = {(min(i, p), max(i, p)) for i, p in enumerate(parent) if p >= 0}
    k = len(parent)
    for i in range(k):
        for j in range(i + 1, k):
            if (i, j) not in bonded and np.linalg.norm(x[i] - x[j]) < MIN_NONBONDED:
                return False
    return True


def make_molecule(mol_id, num_atoms, num_conformers, rng):
    """One tree molecule with ``num_conformers`` torsion variants."""
    if num_atoms < 3:
        raise ValueError("need at least 3 atoms")
    for _ in range(100):
        parent = _random_tree(num_atoms, rng)
        confs = []
        for _ in range(50 * num_conformers):
            rot = rng.choice([math.pi / 3, math.pi, 5 * math.pi / 3], size=num_atoms)
            rot = rot + rng.normal(0.0, math.radians(8.0), size=num_atoms)
            x = _coords(parent, rot)
            if not _clash_free(x, parent):
                continue
            if any(np.abs(x - c).max() < 0.3 for c in confs):
                continue
            confs.append(x)
            if len(confs) == num_conformers:
                break
        if len(confs) == num_conformers:
            break
    else:  # pragma: no cover
        raise RuntimeError(f"could not build {num_conformers} conformers for {mol_id}")
    atoms = [6] + [int(rng.choice(_ELEMENTS)) for _ in range(num_atoms - 1)]
    bonds = [(p, i, "single") for i, p in enumerate(parent) if p >= 0]
    confs = np.stack(confs)
    return Molecule(mol_id, atoms, bonds, confs - confs.mean(axis=1, keepdims=True))


def toy_dataset(num_molecules=20, atoms=(4, 8), conformers=(1, 5), seed=0):
    """``num_molecules`` molecules with atom and conformer counts drawn uniformly
    from the inclusive ranges."""
    rng = np.random.default_rng(seed)
    mols = []
    for i in range(num_molecules):
        k = int(rng.integers(atoms[0], atoms[1] + 1))
        m = int(rng.integers(conformers[0], conformers[1] + 1))
        mols.append(make_molecule(f"toy-{i:03d}", k, m, rng))
    return DatasetIndex(mols, "unsplit", Provenance(f"synthetic:seed={seed}"))
