import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confflow.geomops import aligned_rmsd, random_rotation, zero_com
from confflow.metrics import (
    EnsembleReport,
    MoleculeScore,
    cov_mat_from_matrix,
    cov_mat_metrics,
    pairwise_rmsd,
    single_rmsd_eval,
)


def ensemble(rng, n, k=6, scale=1.0):
    return [zero_com(rng.standard_normal((k, 3)) * scale) for _ in range(n)]


def test_constructed_table():
    D = np.array([[0.3, 0.9], [0.55, 0.6]])
    cov_r, mat_r, cov_p, mat_p = cov_mat_from_matrix(D, 0.5)
    assert (cov_r, cov_p) == (50.0, 50.0)
    assert mat_r == pytest.approx(0.425, abs=1e-15)
    assert mat_p == pytest.approx(0.45, abs=1e-15)


def test_threshold_is_inclusive():
    assert cov_mat_from_matrix(np.array([[0.5]]), 0.5)[0] == 100.0


def test_identical_sets_are_perfect(rng):
    S = ensemble(rng, 4)
    s = cov_mat_metrics(S, S)
    assert (s.cov_r, s.cov_p) == (100.0, 100.0)
    assert s.mat_r < 1e-7 and s.mat_p < 1e-7


def test_huge_threshold_covers_everything(rng):
    s = cov_mat_metrics(ensemble(rng, 3), ensemble(rng, 5, scale=3.0), delta=1e9)
    assert s.cov_r == s.cov_p == 100.0


def test_cloud_level_oracle(rng):
    S_t, S_p = ensemble(rng, 3), ensemble(rng, 5)
    D = np.array([[aligned_rmsd(t, p) for p in S_p] for t in S_t])
    s = cov_mat_metrics(S_p, S_t, delta=1.0)
    assert s.mat_r == pytest.approx(np.mean([min(row) for row in D]), abs=1e-10)
    assert s.mat_p == pytest.approx(np.mean(D.min(axis=0)), abs=1e-10)
    assert s.cov_r == pytest.approx(100 * np.mean(D.min(axis=1) <= 1.0))
    assert (s.num_pred, s.num_true) == (5, 3)


def test_swapping_sets_swaps_recall_and_precision(rng):
    A, B = ensemble(rng, 3), ensemble(rng, 4)
    ab, ba = cov_mat_metrics(A, B, 1.2), cov_mat_metrics(B, A, 1.2)
    assert (ab.cov_r, ab.mat_r, ab.cov_p, ab.mat_p) == (ba.cov_p, ba.mat_p, ba.cov_r, ba.mat_r)
    np.testing.assert_array_equal(pairwise_rmsd(A, B), pairwise_rmsd(B, A).T)


@given(st.floats(0, 3), st.floats(0, 3))
def test_coverage_monotone_in_delta(d1, d2):
    rng = np.random.default_rng(3)
    S_t, S_p = ensemble(rng, 4), ensemble(rng, 6)
    lo, hi = sorted((d1, d2))
    a, b = cov_mat_metrics(S_p, S_t, lo), cov_mat_metrics(S_p, S_t, hi)
    assert a.cov_r <= b.cov_r and a.cov_p <= b.cov_p
    assert a.mat_r == b.mat_r


def test_rigid_motion_invariance(rng):
    S_t, S_p = ensemble(rng, 3), ensemble(rng, 4)
    moved = [x @ random_rotation(rng).T + rng.standard_normal(3) for x in S_p]
    a, b = cov_mat_metrics(S_p, S_t), cov_mat_metrics(moved, S_t)
    assert a.mat_r == pytest.approx(b.mat_r, abs=1e-10) and a.cov_r == b.cov_r


def test_single_rmsd_uniform_offset():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert single_rmsd_eval(x + 0.1, x) == pytest.approx(0.0, abs=1e-12)
    y = x.copy()
    y[:, 0] += np.array([0.1, -0.1, 0.1, -0.1])
    assert 0 < single_rmsd_eval(y, x) <= 0.1 + 1e-12


def test_input_errors(rng):
    with pytest.raises(ValueError):
        pairwise_rmsd([], ensemble(rng, 1))
    with pytest.raises(ValueError, match="mismatch"):
        pairwise_rmsd(ensemble(rng, 1, k=3), ensemble(rng, 1, k=4))
    with pytest.raises(ValueError):
        cov_mat_metrics(ensemble(rng, 1), ensemble(rng, 1), delta=-1)


def test_report_round_trip_and_summary():
    rep = EnsembleReport(0.5, [MoleculeScore("b", 50, 0.4, 100, 0.2, 4, 2), MoleculeScore("a", 100, 0.2, 50, 0.6, 2, 1)])
    back = EnsembleReport.from_json(rep.to_json())
    assert back.to_dict() == rep.to_dict()
    s = rep.summary()
    assert s["cov_r"]["mean"] == 75.0 and s["mat_p"]["median"] == pytest.approx(0.4)
    assert json.loads(rep.to_json())["molecules"][0]["id"] == "a"
    table = rep.table().splitlines()
    assert table[2].startswith("a") and table[-2].startswith("mean")
    with pytest.raises(ValueError, match="schema"):
        EnsembleReport.from_dict({"schema": "x"})
