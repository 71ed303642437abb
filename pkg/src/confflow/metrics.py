"""Ensemble coverage (COV) and matching (MAT) metrics over aligned RMSD.

Recall compares every reference conformer with its closest generated one and
measures diversity; precision swaps the roles and measures accuracy.
"""

import json
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .geomops import aligned_rmsd, rmsd_matrix

SAMPLE_COEFFICIENT = 2
DEFAULT_DELTA = 0.5
REPORT_SCHEMA = "confflow.ensemble-report/1"


def pairwise_rmsd(S_t, S_p):
    """``D[i, j]`` = aligned RMSD between reference ``i`` and generated ``j``.

    The matrix is averaged with the transposed reverse computation so that
    swapping the two sets gives exactly ``D.T``.
    """
    S_t = [np.asarray(x, dtype=np.float64) for x in S_t]
    S_p = [np.asarray(x, dtype=np.float64) for x in S_p]
    if not S_t or not S_p:
        raise ValueError("both conformer sets must be non-empty")
    shapes = {x.shape for x in S_t} | {x.shape for x in S_p}
    if len(shapes) != 1:
        raise ValueError(f"atom count mismatch between conformers: {sorted(shapes)}")
    a = rmsd_matrix(S_t, S_p)
    b = rmsd_matrix(S_p, S_t)
    return 0.5 * (a + b.T)


def cov_mat_from_matrix(D, delta=DEFAULT_DELTA):
    """Metrics from a reference-by-generated RMSD table.

    Returns ``(cov_r, mat_r, cov_p, mat_p)`` with COV in percent.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or 0 in D.shape:
        raise ValueError("RMSD table must be a non-empty 2-D array")
    best_t = D.min(axis=1)  # each reference vs closest generated
    best_p = D.min(axis=0)
    cov_r = 100.0 * float(np.count_nonzero(best_t <= delta)) / best_t.size
    cov_p = 100.0 * float(np.count_nonzero(best_p <= delta)) / best_p.size
    return cov_r, float(np.mean(best_t)), cov_p, float(np.mean(best_p))


@dataclass
class MoleculeScore:
    id: str
    cov_r: float
    mat_r: float
    cov_p: float
    mat_p: float
    num_pred: int
    num_true: int


def cov_mat_metrics(S_p, S_t, delta=DEFAULT_DELTA, mol_id=""):
    """COV-R/MAT-R/COV-P/MAT-P for generated set ``S_p`` against references ``S_t``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    D = pairwise_rmsd(S_t, S_p)
    cov_r, mat_r, cov_p, mat_p = cov_mat_from_matrix(D, delta)
    return MoleculeScore(mol_id, cov_r, mat_r, cov_p, mat_p, len(S_p), len(S_t))


def single_rmsd_eval(pred, truth):
    """Aligned RMSD between one prediction and its reference."""
    return aligned_rmsd(truth, pred)


_FIELDS = ("cov_r", "mat_r", "cov_p", "mat_p")


@dataclass
class EnsembleReport:
    delta: float
    molecules: list = field(default_factory=list)

    def summary(self):
        out = {}
        for f in _FIELDS:
            vals = [getattr(m, f) for m in self.molecules]
            out[f] = {
                "mean": float(np.mean(vals)) if vals else None,
                "median": float(statistics.median(vals)) if vals else None,
            }
        return out

    def to_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "delta": self.delta,
            "summary": self.summary(),
            "molecules": [asdict(m) for m in sorted(self.molecules, key=lambda m: m.id)],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unknown report schema {d.get('schema')!r}")
        return cls(float(d["delta"]), [MoleculeScore(**m) for m in d["molecules"]])

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def table(self):
        head = f"{'molecule':<20} {'|S_p|':>6} {'|S_t|':>6} {'COV-R%':>8} {'MAT-R':>8} {'COV-P%':>8} {'MAT-P':>8}"
        lines = [head, "-" * len(head)]
        for m in sorted(self.molecules, key=lambda m: m.id):
            lines.append(
                f"{m.id:<20} {m.num_pred:>6d} {m.num_true:>6d} {m.cov_r:>8.2f} {m.mat_r:>8.4f} {m.cov_p:>8.2f} {m.mat_p:>8.4f}"
            )
        s = self.summary()
        for stat in ("mean", "median"):
            if s["cov_r"][stat] is None:
                continue
            lines.append(
                f"{stat:<20} {'':>6} {'':>6} {s['cov_r'][stat]:>8.2f} {s['mat_r'][stat]:>8.4f}"
                f" {s['cov_p'][stat]:>8.2f} {s['mat_p'][stat]:>8.4f}"
            )
        return "\n".join(lines)
