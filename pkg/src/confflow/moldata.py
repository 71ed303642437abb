"""Molecule records: JSONL ingestion, identity grouping, hydrogen stripping,
splitting and XYZ export.

A dataset file holds one JSON object per line::

    {"id": "CCO", "atoms": [6, 6, 8],
     "bonds": [[0, 1, "single"], [1, 2, "single"]],
     "conformers": [[[x, y, z], [x, y, z], [x, y, z]], ...]}

``id`` is an opaque identity string (a SMILES in the source data); it is used
verbatim as the grouping key.
"""

import hashlib
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ParseError, ValidationError

FORMAT_VERSION = 1

SYMBOLS = (
    "X",
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
)
ATOMIC_NUMBERS = {s: z for z, s in enumerate(SYMBOLS) if z > 0}


class BondOrder(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"

    @property
    def code(self):
        return _BOND_INDEX[self]


_BOND_INDEX = {b: i for i, b in enumerate(BondOrder)}
NUM_BOND_ORDERS = len(_BOND_INDEX)


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Molecule:
    """One chemical identity: atoms, bonds and ``m >= 1`` conformers.

    ``conformers`` has shape ``(m, K, 3)`` in Angstrom. Bonds are stored with
    ``i < j`` and sorted, so two molecules with the same bond set compare equal.
    """

    id: str
    atom_types: np.ndarray
    bonds: tuple
    conformers: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atom_types, dtype=np.int64).reshape(-1)
        conf = np.asarray(self.conformers, dtype=np.float64)
        k = atoms.shape[0]
        if k == 0:
            raise ValidationError("molecule has no atoms", self.id)
        if conf.ndim == 2:
            conf = conf[None]
        if conf.ndim != 3 or conf.shape[0] == 0:
            raise ValidationError("conformer list must be non-empty", self.id)
        if conf.shape[1:] != (k, 3):
            raise ValidationError(
                f"conformers have shape {conf.shape[1:]}, expected ({k}, 3)", self.id
            )
        if not np.all(np.isfinite(conf)):
            raise ValidationError("non-finite conformer coordinate", self.id)
        if np.any(atoms < 1) or np.any(atoms >= len(SYMBOLS)):
            raise ValidationError("atomic number out of range", self.id)
        bonds = []
        seen = set()
        for b in self.bonds:
            if isinstance(b, Bond):
                i, j, order = b.i, b.j, b.order
            else:
                i, j, order = b
            i, j = int(i), int(j)
            try:
                order = BondOrder(order)
            except ValueError:
                raise ValidationError(f"unknown bond order {order!r}", self.id) from None
            if not (0 <= i < k and 0 <= j < k):
                raise ValidationError(f"bond ({i}, {j}) references a missing atom", self.id)
            if i == j:
                raise ValidationError(f"self-bond on atom {i}", self.id)
            i, j = min(i, j), max(i, j)
            if (i, j) in seen:
                raise ValidationError(f"duplicate bond ({i}, {j})", self.id)
            seen.add((i, j))
            bonds.append(Bond(i, j, order))
        bonds.sort(key=lambda b: (b.i, b.j))
        object.__setattr__(self, "atom_types", _readonly(atoms))
        object.__setattr__(self, "bonds", tuple(bonds))
        object.__setattr__(self, "conformers", _readonly(conf))

    @property
    def num_atoms(self):
        return int(self.atom_types.shape[0])

    @property
    def num_conformers(self):
        return int(self.conformers.shape[0])

    @property
    def symbols(self):
        return [SYMBOLS[z] for z in self.atom_types]

    def bond_array(self):
        """``(B, 3)`` int array of ``(i, j, order_index)``."""
        if not self.bonds:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array([(b.i, b.j, b.order.code) for b in self.bonds], dtype=np.int64)

    def topology_key(self):
        return (tuple(int(z) for z in self.atom_types), self.bonds)

    def with_conformers(self, conformers):
        return Molecule(self.id, self.atom_types, self.bonds, conformers)

    def to_record(self):
        return {
            "id": self.id,
            "atoms": [int(z) for z in self.atom_types],
            "bonds": [[b.i, b.j, b.order.value] for b in self.bonds],
            "conformers": self.conformers.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, Molecule):
            return NotImplemented
        return (
            self.id == other.id
            and self.topology_key() == other.topology_key()
            and self.conformers.shape == other.conformers.shape
            and bool(np.array_equal(self.conformers, other.conformers))
        )

    __hash__ = None


@dataclass(frozen=True)
class Provenance:
    source: str
    format_version: int = FORMAT_VERSION


@dataclass
class DatasetIndex:
    molecules: list
    split_tag: str = "unsplit"
    provenance: Provenance = field(default_factory=lambda: Provenance("<memory>"))

    def __post_init__(self):
        if self.split_tag not in ("train", "val", "test", "unsplit"):
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        ids = [m.id for m in self.molecules]
        dupes = [i for i, c in Counter(ids).items() if c > 1]
        if dupes:
            raise ValidationError("duplicate molecule id within a split", dupes[0])

    def __len__(self):
        return len(self.molecules)

    def __iter__(self):
        return iter(self.molecules)

    def get(self, mol_id):
        for m in self.molecules:
            if m.id == mol_id:
                return m
        raise KeyError(mol_id)

    def content_hash(self):
        """SHA-256 over the canonical JSONL serialisation of the molecules."""
        h = hashlib.sha256()
        for m in self.molecules:
            h.update(json.dumps(m.to_record(), sort_keys=True, separators=(",", ":")).encode())
            h.update(b"\n")
        return h.hexdigest()


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------


def _iter_lines(source):
    if isinstance(source, (bytes, str)):
        source = io.BytesIO(source.encode() if isinstance(source, str) else source)
    for lineno, line in enumerate(source, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8: {exc}", lineno) from None
        yield lineno, line


def _record_to_molecule(rec, lineno):
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", lineno)
    missing = [k for k in ("id", "atoms", "bonds", "conformers") if k not in rec]
    if missing:
        raise ParseError(f"missing field(s) {missing}", lineno)
    mol_id = rec["id"]
    if not isinstance(mol_id, str):
        raise ParseError("field 'id' must be a string", lineno)
    atoms = rec["atoms"]
    if not isinstance(atoms, list) or not all(isinstance(z, int) for z in atoms):
        raise ParseError("field 'atoms' must be a list of atomic numbers", lineno)
    bonds = rec["bonds"]
    if not isinstance(bonds, list) or not all(isinstance(b, list) and len(b) == 3 for b in bonds):
        raise ParseError("field 'bonds' must be a list of [i, j, order]", lineno)
    confs = rec["conformers"]
    if not isinstance(confs, list) or not confs:
        raise ValidationError("conformer list must be non-empty", mol_id)
    k = len(atoms)
    arrays = []
    for c_idx, conf in enumerate(confs):
        try:
            arr = np.asarray(conf, dtype=np.float64)
        except (TypeError, ValueError):
            raise ParseError(f"conformer {c_idx} is not a numeric array", lineno) from None
        if arr.shape != (k, 3):
            raise ValidationError(
                f"conformer {c_idx} has shape {arr.shape}, expected ({k}, 3)", mol_id
            )
        arrays.append(arr)
    return Molecule(mol_id, atoms, bonds, np.stack(arrays))


def read_jsonl(source):
    """Parse every record; duplicate ids are allowed (raw, ungrouped data)."""
    mols = []
    for lineno, line in _iter_lines(source):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
        mols.append(_record_to_molecule(rec, lineno))
    return mols


def parse_dataset(source, format="jsonl", name=None):
    """Read a grouped dataset (unique ids) into an unsplit :class:`DatasetIndex`."""
    if format != "jsonl":
        raise ValueError(f"unsupported dataset format {format!r}")
    if name is None:
        name = getattr(source, "name", "<stream>")
    return DatasetIndex(read_jsonl(source), "unsplit", Provenance(str(name), FORMAT_VERSION))


def load_dataset(path):
    with open(path, "rb") as fh:
        return parse_dataset(fh, name=str(path))


def write_jsonl(molecules, sink):
    for m in molecules:
        line = json.dumps(m.to_record(), separators=(",", ":")) + "\n"
        sink.write(line if isinstance(sink, io.TextIOBase) else line.encode())


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------


@dataclass
class GroupStats:
    records_in: int = 0
    molecules_out: int = 0
    dropped: dict = field(default_factory=dict)

    @property
    def total_dropped(self):
        return sum(self.dropped.values())


def group_and_clean(records):
    """Merge records sharing an identity string into single molecules.

    Within a group, the majority topology (atom list + bond set) wins; records
    that disagree with it are dropped and counted. On a tie the topology seen
    first wins. Multi-conformer inputs are expanded to one record per
    conformer, which makes the function idempotent.

    Returns ``(molecules, stats)`` in order of first appearance.
    """
    groups = {}
    stats = GroupStats()
    for rec in records:
        for conf in rec.conformers:
            groups.setdefault(rec.id, []).append((rec.topology_key(), rec, conf))
            stats.records_in += 1
    out = []
    for mol_id, items in groups.items():
        counts = Counter(key for key, _, _ in items)
        best = max(counts.values())
        winner = next(key for key, _, _ in items if counts[key] == best)
        kept = [(rec, conf) for key, rec, conf in items if key == winner]
        n_drop = len(items) - len(kept)
        if n_drop:
            stats.dropped[mol_id] = n_drop
        proto = kept[0][0]
        out.append(Molecule(mol_id, proto.atom_types, proto.bonds, np.stack([c for _, c in kept])))
    stats.molecules_out = len(out)
    return out, stats


def strip_hydrogens(mol):
    """Remove hydrogens, their bonds, and the matching conformer rows."""
    keep = mol.atom_types != 1
    if not np.any(keep):
        raise ValidationError("no atoms left after removing hydrogens", mol.id)
    new_index = np.cumsum(keep) - 1
    bonds = [
        (int(new_index[b.i]), int(new_index[b.j]), b.order)
        for b in mol.bonds
        if keep[b.i] and keep[b.j]
    ]
    return Molecule(mol.id, mol.atom_types[keep], bonds, mol.conformers[:, keep, :])


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_sizes(n, fractions):
    """Floor each share, then hand out the remainder one by one in declared order."""
    sizes = [int(math.floor(f * n + 1e-9)) for f in fractions]
    rem = n - sum(sizes)
    i = 0
    while rem > 0:
        sizes[i % len(sizes)] += 1
        rem -= 1
        i += 1
    return sizes


def split_dataset(mols, fractions=(0.8, 0.1, 0.1), seed=0):
    """Deterministic train/val/test partition by molecule id."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("expected three split fractions")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {fractions}")
    mols = list(mols)
    ids = [m.id for m in mols]
    if len(set(ids)) != len(ids):
        dup = next(i for i, c in Counter(ids).items() if c > 1)
        raise ValidationError("duplicate id; group records before splitting", dup)
    sizes = split_sizes(len(mols), fractions)
    if min(sizes) == 0:
        raise ValidationError(
            f"{len(mols)} molecules cannot fill three non-empty splits with fractions {fractions}"
        )
    order = np.random.default_rng(seed).permutation(len(mols))
    bounds = np.cumsum([0] + sizes)
    out = []
    for tag, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        out.append(DatasetIndex([mols[i] for i in sorted(order[lo:hi])], tag))
    return tuple(out)


# ---------------------------------------------------------------------------
# XYZ
# ---------------------------------------------------------------------------


def format_xyz(mol, conformer_index=0, comment=None):
    if not 0 <= conformer_index < mol.num_conformers:
        raise IndexError(
            f"conformer index {conformer_index} out of range for {mol.id!r} "
            f"({mol.num_conformers} conformers)"
        )
    coords = mol.conformers[conformer_index]
    lines = [str(mol.num_atoms), mol.id if comment is None else comment]
    for sym, (x, y, z) in zip(mol.symbols, coords):
        lines.append(f"{sym} {x:.6f} {y:.6f} {z:.6f}")
    return "\n".join(lines) + "\n"


def export_xyz(mol, conformer_index, sink):
    text = format_xyz(mol, conformer_index)
    sink.write(text if isinstance(sink, io.TextIOBase) else text.encode())


def read_xyz(source):
    """Parse a single-frame XYZ file. Returns ``(atomic_numbers, coords, comment)``."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    if isinstance(text, bytes):
        text = text.decode()
    lines = text.splitlines()
    try:
        n = int(lines[0].strip())
    except (IndexError, ValueError):
        raise ParseError("first line must be the atom count", 1) from None
    if len(lines) < n + 2:
        raise ParseError(f"expected {n} atom lines, file is truncated", len(lines))
    atoms, coords = [], []
    for lineno in range(2, n + 2):
        parts = lines[lineno].split()
        if len(parts) < 4:
            raise ParseError("atom line needs a symbol and three coordinates", lineno + 1)
        sym = parts[0]
        if sym not in ATOMIC_NUMBERS:
            raise ParseError(f"unknown element symbol {sym!r}", lineno + 1)
        atoms.append(ATOMIC_NUMBERS[sym])
        try:
            coords.append([float(v) for v in parts[1:4]])
        except ValueError:
            raise ParseError("non-numeric coordinate", lineno + 1) from None
    return np.array(atoms, dtype=np.int64), np.array(coords, dtype=np.float64), lines[1]
