import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import sph_harm_y
from scipy.spatial.transform import Rotation
from sympy import S
from sympy.physics.quantum.cg import CG

from confflow.irreps import (
    IrrepsLayout,
    IrrepsTensor,
    TensorProduct,
    cg_coefficient,
    cg_table,
    flat_coupling,
    selection_rule,
    sh_concat,
    sh_eval,
    tensor_product,
    wigner_d,
)
from confflow.irreps import _cg_complex

unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: 0.1 < math.sqrt(sum(x * x for x in v))
).map(lambda v: np.array(v) / np.linalg.norm(v))
rotations = st.integers(0, 2**32 - 1).map(lambda s: Rotation.random(random_state=s).as_matrix())


def real_sh_reference(L, u):
    """Real harmonics from scipy's complex ones, scaled to |Y|^2 = 2L+1."""
    u = np.atleast_2d(u)
    theta = np.arccos(np.clip(u[:, 2], -1, 1))
    phi = np.arctan2(u[:, 1], u[:, 0])
    cols = []
    for m in range(-L, L + 1):
        if m < 0:
            v = math.sqrt(2) * (-1) ** m * sph_harm_y(L, -m, theta, phi).imag
        elif m == 0:
            v = sph_harm_y(L, 0, theta, phi).real
        else:
            v = math.sqrt(2) * (-1) ** m * sph_harm_y(L, m, theta, phi).real
        cols.append(v * math.sqrt(4 * math.pi))
    return np.stack(cols, axis=-1)


def wigner_from_samples(L, R, rng):
    """D^L(R) by least squares on Y(R u) = D Y(u) over many directions."""
    u = rng.standard_normal((200, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    Y = real_sh_reference(L, u)
    Yr = real_sh_reference(L, u @ R.T)
    X, *_ = np.linalg.lstsq(Y, Yr, rcond=None)
    return X.T


# -- spherical harmonics -----------------------------------------------------


@pytest.mark.parametrize("L", range(7))
def test_sh_matches_scipy_reference(L, rng):
    u = rng.standard_normal((64, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    np.testing.assert_allclose(sh_eval(L, u), real_sh_reference(L, u), atol=1e-12)


def test_degree_one_is_yzx():
    u = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(sh_eval(1, u), math.sqrt(3) * np.array([0.0, 0.8, 0.6]), atol=1e-15)


def test_degree_zero_is_constant_one():
    assert sh_eval(0, np.array([0.0, 0.0, 1.0]))[0] == pytest.approx(1.0)


@given(unit_vectors, st.integers(0, 8))
def test_sh_component_normalisation(u, L):
    assert np.sum(sh_eval(L, u) ** 2) == pytest.approx(2 * L + 1, rel=1e-10)


def test_sh_concat_layout(rng):
    u = rng.standard_normal((5, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    Y = sh_concat(3, u)
    assert Y.shape == (5, 16)
    for L in range(4):
        np.testing.assert_array_equal(Y[:, L * L : (L + 1) ** 2], sh_eval(L, u))


@pytest.mark.parametrize("bad", [np.array([1.0, 1.0, 0.0]), np.zeros(3)])
def test_sh_rejects_non_unit(bad):
    with pytest.raises(ValueError):
        sh_eval(2, bad)


def test_sh_rejects_degree_beyond_maximum():
    with pytest.raises(ValueError):
        sh_eval(13, np.array([0.0, 0.0, 1.0]))


# -- Wigner-D -----------------------------------------------------------------


@pytest.mark.parametrize("L", [0, 1, 2, 4, 6])
def test_wigner_matches_least_squares_oracle(L, rng):
    for _ in range(3):
        R = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
        np.testing.assert_allclose(wigner_d(L, R), wigner_from_samples(L, R, rng), atol=1e-9)


def test_wigner_degree_one_is_permuted_rotation(rng):
    R = Rotation.random(random_state=7).as_matrix()
    P = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)  # xyz -> yzx
    np.testing.assert_allclose(wigner_d(1, R), P @ R @ P.T, atol=1e-12)


@given(rotations, rotations, st.integers(0, 6))
def test_wigner_homomorphism(R1, R2, L):
    np.testing.assert_allclose(wigner_d(L, R1 @ R2), wigner_d(L, R1) @ wigner_d(L, R2), atol=1e-9)


@given(rotations, st.integers(0, 6))
def test_wigner_orthogonal_and_inverse(R, L):
    D = wigner_d(L, R)
    np.testing.assert_allclose(D @ D.T, np.eye(2 * L + 1), atol=1e-10)
    np.testing.assert_allclose(wigner_d(L, R.T), D.T, atol=1e-10)


def test_wigner_identity_and_half_turn():
    for L in range(5):
        np.testing.assert_allclose(wigner_d(L, np.eye(3)), np.eye(2 * L + 1), atol=1e-14)
    R = np.diag([-1.0, -1.0, 1.0])  # pi about z: angle-axis edge case
    u = np.array([0.3, -0.4, np.sqrt(0.75)])
    for L in range(5):
        np.testing.assert_allclose(sh_eval(L, R @ u), wigner_d(L, R) @ sh_eval(L, u), atol=1e-10)


@pytest.mark.parametrize("R", [np.diag([1.0, 1.0, -1.0]), 2 * np.eye(3)])
def test_wigner_rejects_non_rotations(R):
    with pytest.raises(ValueError):
        wigner_d(2, R)


# -- Clebsch-Gordan -----------------------------------------------------------


def test_complex_cg_matches_sympy():
    for j1, j2 in itertools.product(range(4), repeat=2):
        for j3 in range(abs(j1 - j2), j1 + j2 + 1):
            for m1 in range(-j1, j1 + 1):
                for m2 in range(-j2, j2 + 1):
                    m3 = m1 + m2
                    if abs(m3) > j3:
                        continue
                    ref = float(CG(S(j1), S(m1), S(j2), S(m2), S(j3), S(m3)).doit())
                    assert _cg_complex(j1, m1, j2, m2, j3, m3) == pytest.approx(ref, abs=1e-13)


def intertwiner_oracle(L1, L2, L3, rng):
    """Null space of ``Q -> (D1 (x) D2)^T Q D3 - Q`` from a few random rotations."""
    rows = []
    n = (2 * L1 + 1) * (2 * L2 + 1) * (2 * L3 + 1)
    eye = np.eye(n)
    for _ in range(3):
        R = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
        D1, D2, D3 = (wigner_from_samples(L, R, rng) for L in (L1, L2, L3))
        M = np.einsum("ia,jb,kc->abcijk", D1, D2, D3).reshape(n, n)
        rows.append(M - eye)
    _, s, Vt = np.linalg.svd(np.concatenate(rows))
    assert s[-1] < 1e-8 and s[-2] > 1e-3  # exactly one intertwiner
    return Vt[-1].reshape(2 * L1 + 1, 2 * L2 + 1, 2 * L3 + 1)


@pytest.mark.parametrize("L1,L2,L3", [(1, 1, 0), (1, 1, 1), (1, 1, 2), (2, 1, 2), (2, 2, 3), (1, 2, 3), (0, 2, 2)])
def test_real_cg_is_the_unique_intertwiner(L1, L2, L3, rng):
    Q = cg_table(L1, L2, L3)
    ref = intertwiner_oracle(L1, L2, L3, rng)
    # same up to overall scale and sign
    ref = ref * (np.vdot(ref, Q) / np.vdot(ref, ref))
    np.testing.assert_allclose(Q, ref, atol=1e-8)


@given(rotations)
def test_cg_equivariance(R):
    for L1, L2 in itertools.product(range(4), repeat=2):
        for L3 in range(abs(L1 - L2), L1 + L2 + 1):
            Q = cg_table(L1, L2, L3)
            lhs = np.einsum("ijk,ia,jb->abk", Q, wigner_d(L1, R), wigner_d(L2, R))
            rhs = np.einsum("abl,kl->abk", Q, wigner_d(L3, R))
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_cg_zeros_outside_selection_rule_are_exact():
    for L1, L2, L3 in itertools.product(range(5), repeat=3):
        if not selection_rule(L1, L2, L3):
            assert not np.any(cg_table(L1, L2, L3))


def test_cg_slices_have_unit_norm():
    Q = cg_table(2, 2, 2)
    np.testing.assert_allclose(np.linalg.norm(Q.reshape(-1, 5), axis=0), 1.0)


def test_cg_coefficient_and_read_only():
    Q = cg_table(1, 1, 0)
    assert cg_coefficient(1, 0, 1, 0, 0, 0) == Q[1, 1, 0]
    with pytest.raises(ValueError):
        Q[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        cg_coefficient(1, 2, 1, 0, 0, 0)


def test_scalar_coupling_of_vectors_is_dot_product(rng):
    # <1 m 1 -m | 0 0> = (-1)^(1-m) / sqrt(3) under the Condon-Shortley phase
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    out = np.einsum("ijk,i,j->k", cg_table(1, 1, 0), a, b)
    assert out[0] == pytest.approx(-(a @ b) / math.sqrt(3))


# -- tensor products ----------------------------------------------------------


def random_tensor(layout, rng, lead=()):
    return IrrepsTensor(layout, rng.standard_normal(lead + (layout.dim,)))


def test_tensor_product_equivariance(rng):
    lay = IrrepsLayout.uniform(2, 3)
    edge = IrrepsLayout.uniform(2, 1)
    f = random_tensor(lay, rng, (4,))
    g = random_tensor(edge, rng, (4,))
    tp = TensorProduct(lay, edge, lay)
    w = rng.standard_normal(tp.num_paths)
    R = Rotation.random(random_state=3).as_matrix()
    lhs = tp(f.rotate(R), g.rotate(R), w).data
    rhs = tp(f, g, w).rotate(R).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_tensor_product_rejects_illegal_paths():
    lay = IrrepsLayout.uniform(2, 2)
    with pytest.raises(ValueError, match="violates"):
        TensorProduct(lay, lay, lay, paths=[(0, 0, 2), (0, 0, 0), (1, 1, 1)])
    with pytest.raises(ValueError, match="no path"):
        TensorProduct(lay, lay, lay, paths=[(0, 0, 0)])
    with pytest.raises(ValueError, match="channels"):
        TensorProduct(lay, IrrepsLayout.uniform(2, 3), lay)


def test_tensor_product_wrappers_agree(rng):
    lay = IrrepsLayout.uniform(1, 2)
    f, g = random_tensor(lay, rng), random_tensor(lay, rng)
    w = rng.standard_normal(TensorProduct(lay, lay, lay).num_paths)
    np.testing.assert_array_equal(tensor_product(f, g, lay, w).data, TensorProduct(lay, lay, lay)(f, g, w).data)


def test_flat_coupling_matches_blockwise_product(rng):
    """The dense coupling used by the network equals the block-wise product."""
    paths, W = flat_coupling(2, 2, 2)
    assert len(paths) == 15
    lay = IrrepsLayout.uniform(2, 1)
    f, g = random_tensor(lay, rng), random_tensor(lay, rng)
    w = rng.standard_normal(len(paths))
    dense = np.einsum("p,pijk,i,j->k", w, W, f.data, g.data)
    np.testing.assert_allclose(dense, TensorProduct(lay, lay, lay, paths)(f, g, w).data, atol=1e-12)


def test_layout_validation():
    with pytest.raises(ValueError):
        IrrepsLayout(((1, 2), (0, 2)))
    with pytest.raises(ValueError):
        IrrepsTensor(IrrepsLayout.uniform(1, 1), np.zeros(3))
