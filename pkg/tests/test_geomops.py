import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from confflow.geomops import (
    aligned_rmsd,
    conformer_cost_matrix,
    is_rotation,
    kabsch_align,
    kabsch_rotation,
    random_rotation,
    rmsd,
    rmsd_matrix,
    zero_com,
)

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
clouds = st.integers(3, 9).flatmap(lambda k: arrays(np.float64, (k, 3), elements=coords))
rotations = st.integers(0, 2**32 - 1).map(lambda s: Rotation.random(random_state=s).as_matrix())


def grid_search_rmsd(p, q, n_grid=3000):
    """min over SO(3) of RMSD(p, q R^T) for centred clouds: a coarse Haar grid
    followed by local refinement of the best few rotation vectors."""
    p = p - p.mean(0)
    q = q - q.mean(0)
    grid = Rotation.random(n_grid, random_state=0)
    moved = np.einsum("gij,kj->gki", grid.as_matrix(), q)
    vals = np.sqrt(((moved - p) ** 2).sum(axis=(1, 2)) / len(p))

    def f(rv):
        return rmsd(p, q @ Rotation.from_rotvec(rv).as_matrix().T)

    best = np.inf
    for g in np.argsort(vals)[:5]:
        res = minimize(f, grid[int(g)].as_rotvec(), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        best = min(best, res.fun)
    return best


def test_zero_com():
    p = np.array([[0.0, 0, 0], [2, 0, 0], [1, 3, 0]])
    np.testing.assert_allclose(zero_com(p).mean(axis=0), 0.0, atol=1e-15)
    stack = np.stack([p, p + 5])
    np.testing.assert_allclose(zero_com(stack), np.stack([zero_com(p)] * 2), atol=1e-14)


@given(clouds, rotations, st.tuples(coords, coords, coords))
def test_rigid_motion_has_zero_rmsd(p, R, shift):
    q = p @ R.T + np.array(shift)
    assert aligned_rmsd(p, q) < 1e-10 * max(1.0, np.abs(p).max())


@given(clouds, rotations)
def test_kabsch_returns_proper_rotation(p, R):
    rng = np.random.default_rng(0)
    q = p @ R.T + 0.3 * rng.standard_normal(p.shape)
    pc, qc = zero_com(p), zero_com(q)
    assert is_rotation(kabsch_rotation(pc, qc), tol=1e-9)


@given(clouds, clouds)
def test_rmsd_symmetry_and_nonnegativity(p, q):
    if p.shape != q.shape:
        q = np.resize(q, p.shape)
    a, b = aligned_rmsd(p, q), aligned_rmsd(q, p)
    assert a >= 0
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_matches_grid_search_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = rng.standard_normal((5, 3))
        q = p @ random_rotation(rng).T + 0.4 * rng.standard_normal((5, 3))
        oracle = grid_search_rmsd(p, q)
        ours = aligned_rmsd(p, q)
        assert ours <= oracle + 1e-9  # Kabsch is the global optimum
        assert abs(ours - oracle) < 1e-3


def test_mirror_image_is_not_superposable():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.3, 0.4, 0.5]])
    mirror = p * np.array([1.0, 1.0, -1.0])
    assert aligned_rmsd(p, mirror) > 0.05


def test_kabsch_align_recovers_frame(rng):
    p = rng.standard_normal((7, 3))
    R = random_rotation(rng)
    ref, moved = kabsch_align(p, p @ R.T + 3.0)
    np.testing.assert_allclose(moved, ref, atol=1e-12)


def test_kabsch_rotation_requires_centred_input(rng):
    p = rng.standard_normal((4, 3)) + 1.0
    with pytest.raises(ValueError, match="centred"):
        kabsch_rotation(p, p)


@pytest.mark.parametrize(
    "p,q",
    [
        (np.zeros((3, 3)), np.zeros((4, 3))),
        (np.zeros((3, 2)), np.zeros((3, 2))),
        (np.full((3, 3), np.nan), np.zeros((3, 3))),
    ],
)
def test_shape_and_finiteness_errors(p, q):
    with pytest.raises(ValueError):
        aligned_rmsd(p, q)


def test_rmsd_matrix_agrees_with_pairwise(rng):
    A = rng.standard_normal((4, 6, 3))
    B = rng.standard_normal((3, 6, 3)) + 2.0
    M = rmsd_matrix(A, B)
    ref = np.array([[aligned_rmsd(a, b) for b in B] for a in A])
    np.testing.assert_allclose(M, ref, atol=1e-12)


def test_cost_matrix_requires_equal_lengths(rng):
    with pytest.raises(ValueError, match="lengths"):
        conformer_cost_matrix(rng.standard_normal((2, 4, 3)), rng.standard_normal((3, 4, 3)))


def test_collinear_and_single_atom_clouds():
    line = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert aligned_rmsd(line, line @ random_rotation(np.random.default_rng(0)).T) < 1e-10
    assert aligned_rmsd(np.ones((1, 3)), np.zeros((1, 3))) == 0.0


def test_random_rotation_is_haar_like():
    rng = np.random.default_rng(5)
    Rs = np.stack([random_rotation(rng) for _ in range(4000)])
    assert all(is_rotation(R) for R in Rs[:50])
    # E[R] = 0 for the Haar measure
    assert np.abs(Rs.mean(axis=0)).max() < 0.05
