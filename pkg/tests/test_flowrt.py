import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.spatial.transform import Rotation

from confflow.equinet import ModelConfig, ModelParams, init_params
from confflow.errors import NonFiniteError
from confflow.flowrt import (
    OptimState,
    TrainConfig,
    adamw_step,
    clip_grads,
    evaluate_loss,
    path_batch,
    rk4_integrate,
    sample_conformers,
    select_molecules,
    train,
)
from confflow.geomops import zero_com

TINY = ModelConfig(l_max=1, channels=2, num_blocks=1, hidden=4, num_rbf=2)


def scalar_params(value):
    return ModelParams(None, {"w": np.array([value])})


# -- optimiser ----------------------------------------------------------------


def test_adamw_zero_rates_is_identity():
    p = scalar_params(1.7)
    out, state = adamw_step(p, {"w": np.array([0.3])}, OptimState.zeros_like(p), lr=0.0, weight_decay=0.0)
    assert out["w"][0] == 1.7 and state.step == 1


def test_adamw_first_step_moves_by_lr():
    p = scalar_params(1.0)
    out, _ = adamw_step(p, {"w": np.array([1.0])}, OptimState.zeros_like(p), lr=0.1, weight_decay=0.0, eps=0.0)
    assert out["w"][0] == pytest.approx(0.9, abs=1e-15)


def test_adamw_decay_is_decoupled():
    p = scalar_params(2.0)
    out, _ = adamw_step(p, {"w": np.array([0.0])}, OptimState.zeros_like(p), lr=0.1, weight_decay=1.0)
    assert out["w"][0] == pytest.approx(2.0 * 0.9, abs=1e-15)


def test_adamw_matches_reference_recurrence(rng):
    """Several steps against a hand-written scalar loop."""
    lr, wd, b1, b2, eps = 0.01, 0.05, 0.9, 0.999, 1e-8
    gs = rng.standard_normal(6)
    p, state = scalar_params(0.5), None
    state = OptimState.zeros_like(p)
    w, m, v = 0.5, 0.0, 0.0
    for k, g in enumerate(gs, start=1):
        p, state = adamw_step(p, {"w": np.array([g])}, state, lr, wd, (b1, b2), eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * wd * w - lr * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
    assert p["w"][0] == pytest.approx(w, abs=1e-14)


def test_adamw_inputs_untouched_and_non_finite_rejected():
    p = scalar_params(1.0)
    st0 = OptimState.zeros_like(p)
    adamw_step(p, {"w": np.array([5.0])}, st0, 0.1, 0.1)
    assert p["w"][0] == 1.0 and st0.m["w"][0] == 0.0 and st0.step == 0
    with pytest.raises(NonFiniteError, match="w"):
        adamw_step(p, {"w": np.array([np.nan])}, st0, 0.1, 0.1)


def test_clip_grads():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_grads(g, 1.0)
    assert norm == 5.0
    assert np.hypot(clipped["a"][0], clipped["b"][0]) == pytest.approx(1.0)
    same, _ = clip_grads(g, 10.0)
    assert same is g


@pytest.mark.parametrize(
    "bad", [dict(learning_rate=-1.0), dict(train_batch_size=0), dict(sigma=-0.1), dict(flow_matcher="x"), dict(grad_clip=0.0)]
)
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_train_config_round_trip():
    cfg = TrainConfig(learning_rate=0.003, steps=7, flow_matcher="cfm")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- batches ------------------------------------------------------------------


def test_path_batch_shape_and_determinism(toy):
    mols = list(toy)[:4]
    cfg = TrainConfig()
    b1, u1 = path_batch(mols, 9, cfg)
    b2, u2 = path_batch(mols, 9, cfg)
    assert b1.x.shape == u1.shape
    assert b1.x.shape[0] == sum(m.num_atoms * min(m.num_conformers, 20) for m in mols)
    np.testing.assert_array_equal(b1.x, b2.x)
    np.testing.assert_array_equal(u1, u2)
    assert np.abs(b1.graph_means(b1.x)).max() < 1e-12


def test_path_batch_per_molecule_streams(toy):
    """A molecule's samples do not depend on which other molecules share the batch."""
    mols = list(toy)
    cfg = TrainConfig()
    _, u_alone = path_batch([mols[3]], 1, cfg)
    _, u_with = path_batch(mols[:4], 1, cfg)
    np.testing.assert_array_equal(u_with[-len(u_alone) :], u_alone)


def test_select_molecules(toy):
    mols = list(toy)
    assert select_molecules(mols, 100, 0, 3) == mols
    a = select_molecules(mols, 5, 0, 3)
    assert len(a) == 5 and a == select_molecules(mols, 5, 0, 3)
    assert a != select_molecules(mols, 5, 0, 4)


# -- integration --------------------------------------------------------------


def test_rk4_constant_field_is_exact():
    x = rk4_integrate(lambda x, t: np.full_like(x, 2.0), np.zeros(3), 7)
    np.testing.assert_allclose(x, 2.0, atol=1e-14)


def test_rk4_linear_decay_against_closed_form():
    x = rk4_integrate(lambda x, t: -x, np.array([1.0, -3.0]), 100)
    np.testing.assert_allclose(x, np.array([1.0, -3.0]) * np.exp(-1.0), atol=1e-8)


def test_rk4_time_dependent_against_scipy():
    f = lambda x, t: np.sin(3 * t) * x + t  # noqa: E731
    ref = solve_ivp(lambda t, x: f(x, t), (0, 1), [0.4], rtol=1e-12, atol=1e-12).y[:, -1]
    np.testing.assert_allclose(rk4_integrate(f, np.array([0.4]), 200), ref, atol=1e-9)


def test_rk4_reports_non_finite_step():
    with pytest.raises(NonFiniteError, match="step 1"):
        rk4_integrate(lambda x, t: np.full_like(x, np.inf), np.ones(2), 5)
    with pytest.raises(ValueError):
        rk4_integrate(lambda x, t: x, np.ones(2), 0)


def test_sampling_keeps_com_at_zero(toy):
    mol = list(toy)[1]
    worst = []
    sample_conformers(init_params(TINY, 1), mol, 3, steps=10, callback=lambda k, t, x: worst.append(np.abs(x.mean(axis=1)).max()))
    assert len(worst) == 10 and max(worst) < 1e-10


@given(st.integers(0, 2**32 - 1))
def test_sampling_commutes_with_rotation(seed):
    """Rotating the start rotates the whole trajectory."""
    from confflow.flowrt import network_field
    from confflow.synthetic import toy_dataset

    mol = list(toy_dataset(2, seed=seed % 3))[1]
    field = network_field(init_params(TINY, seed % 4), mol, 2)
    R = Rotation.random(random_state=seed).as_matrix()
    x0 = zero_com(np.random.default_rng(seed).standard_normal((2, mol.num_atoms, 3)))
    a = rk4_integrate(field, x0, 5)
    b = rk4_integrate(field, x0 @ R.T, 5)
    np.testing.assert_allclose(b, a @ R.T, atol=1e-9)


def test_sample_count_validation(toy):
    with pytest.raises(ValueError):
        sample_conformers(init_params(TINY), list(toy)[0], 0)


# -- training -----------------------------------------------------------------


def test_training_is_deterministic(toy):
    cfg = TrainConfig(steps=3, train_batch_size=4, learning_rate=0.003)
    mols = list(toy)[:6]
    r1 = train(cfg, mols, init_params(TINY, 0))
    r2 = train(cfg, mols, init_params(TINY, 0))
    assert r1.params.equals(r2.params)
    assert [e["loss"] for e in r1.log] == [e["loss"] for e in r2.log]


def test_split_run_equals_uninterrupted_run(toy):
    cfg = TrainConfig(steps=4, train_batch_size=3, learning_rate=0.003)
    mols = list(toy)[:5]
    full = train(cfg, mols, init_params(TINY, 2))
    first = train(cfg, mols, init_params(TINY, 2), stop_step=2)
    second = train(cfg, mols, first.params, opt_state=first.opt_state, start_step=2)
    assert second.params.equals(full.params)
    assert second.opt_state.step == full.opt_state.step == 4


def test_single_molecule_loss_decreases(toy):
    mol = max(toy, key=lambda m: m.num_conformers)
    cfg = TrainConfig(steps=60, train_batch_size=1, learning_rate=0.01)
    p0 = init_params(TINY, 0)
    before = evaluate_loss(p0, [mol], cfg, 5)
    result = train(cfg, [mol], p0)
    assert evaluate_loss(result.params, [mol], cfg, 5) < before


def test_validation_loss_logged(toy):
    mols = list(toy)
    cfg = TrainConfig(steps=2, eval_every=1, train_batch_size=4)
    seen = []
    result = train(cfg, mols[:4], init_params(TINY), val=mols[4:6], on_log=seen.append)
    assert seen == result.log and all("val_loss" in e for e in seen)
    assert set(seen[0]) == {"step", "loss", "grad_norm", "val_loss", "wall_ms"}


def test_empty_training_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        train(TrainConfig(steps=1), [], init_params(TINY))
