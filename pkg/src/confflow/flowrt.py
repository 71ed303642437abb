"""Training loop, AdamW and ODE sampling."""

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .equinet import GraphBatch, forward, loss_and_grad
from .errors import NonFiniteError
from .geomops import zero_com
from .otcfm import MAX_CONFORMERS, cond_path_sample, derive_seed, draw_coupling, num_pairs

DEFAULT_ODE_STEPS = 50


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.005
    train_batch_size: int = 8
    eval_batch_size: int = 32
    max_conformers: int = MAX_CONFORMERS
    sigma: float = 0.0
    steps: int = 500
    seed: int = 0
    flow_matcher: str = "otcfm"
    eval_every: int = 50
    grad_clip: float = 10.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        for name in ("train_batch_size", "eval_batch_size", "max_conformers", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.flow_matcher not in ("cfm", "otcfm"):
            raise ValueError(f"flow_matcher must be 'cfm' or 'otcfm', got {self.flow_matcher!r}")
        if self.eval_every < 0 or self.grad_clip <= 0:
            raise ValueError("eval_every must be >= 0 and grad_clip > 0")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            {k: np.zeros_like(a) for k, a in params.tensors.items()},
            {k: np.zeros_like(a) for k, a in params.tensors.items()},
            0,
        )

    def copy(self):
        return OptimState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}, self.step)


def adamw_step(params, grads, state, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
    """One AdamW update with decoupled weight decay. Inputs are not modified."""
    b1, b2 = betas
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.tensors.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_p[k] = p - lr * weight_decay * p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k], new_v[k] = m, v
    out = params.copy()
    out.tensors = new_p
    return out, OptimState(new_m, new_v, step)


def clip_grads(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads, total
    s = max_norm / total
    return {k: g * s for k, g in grads.items()}, total


# ---------------------------------------------------------------------------
# Batches of path samples
# ---------------------------------------------------------------------------


def path_batch(molecules, seed, cfg):
    """Coupled path samples for each molecule, stacked into one graph batch.

    Each molecule draws from its own stream ``derive_seed(seed, id)``: noise,
    conformer subset, pairing, one ``t ~ U(0, 1)`` per pair, path noise.
    Returns ``(batch, u_t)``.
    """
    mols, xs, ts, us = [], [], [], []
    for mol in molecules:
        n = num_pairs(mol.num_conformers, cfg.max_conformers)
        pairs, _, rng = draw_coupling(mol, n, derive_seed(seed, mol.id), cfg.flow_matcher)
        times = rng.uniform(0.0, 1.0, size=n)
        for i, (pair, t) in enumerate(zip(pairs, times)):
            ps = cond_path_sample(pair, t, cfg.sigma, rng, (i, i))
            mols.append(mol)
            xs.append(ps.x_t)
            ts.append(ps.t)
            us.append(ps.u_t)
    return GraphBatch.from_molecules(mols, xs, ts), np.concatenate(us)


def select_molecules(molecules, batch_size, seed, step):
    if len(molecules) <= batch_size:
        return list(molecules)
    rng = np.random.default_rng(derive_seed(seed, step, "select"))
    idx = np.sort(rng.choice(len(molecules), size=batch_size, replace=False))
    return [molecules[i] for i in idx]


def evaluate_loss(params, molecules, cfg, seed):
    """Component-weighted CFM loss over ``molecules`` with a fixed draw."""
    total, count = 0.0, 0
    molecules = list(molecules)
    for lo in range(0, len(molecules), cfg.eval_batch_size):
        chunk = molecules[lo : lo + cfg.eval_batch_size]
        batch, u = path_batch(chunk, derive_seed(seed, lo, "eval"), cfg)
        v = forward(params, batch)
        total += float(np.sum((v - u) ** 2))
        count += u.size
    return total / count


@dataclass
class TrainResult:
    params: object
    opt_state: OptimState
    step: int
    log: list = field(default_factory=list)


def train(cfg, data, params, val=None, opt_state=None, start_step=0, stop_step=None, on_log=None):
    """Run training steps ``start_step .. stop_step - 1`` (default: ``cfg.steps``).

    Every random draw is derived from ``(cfg.seed, step, molecule id)``, so a
    run resumed from a checkpoint at step ``k`` continues exactly as the
    uninterrupted run would. Each log entry is ``{step, loss, val_loss?,
    grad_norm, wall_ms}``.
    """
    molecules = list(data)
    if not molecules:
        raise ValueError("training split is empty")
    stop_step = cfg.steps if stop_step is None else stop_step
    state = OptimState.zeros_like(params) if opt_state is None else opt_state
    log = []
    for step in range(start_step, stop_step):
        t0 = time.perf_counter()
        chosen = select_molecules(molecules, cfg.train_batch_size, cfg.seed, step)
        batch, u = path_batch(chosen, derive_seed(cfg.seed, step), cfg)
        try:
            loss, grads = loss_and_grad(params, batch, u)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {step}: {exc} (molecules {[m.id for m in chosen]})") from None
        grads, gnorm = clip_grads(grads, cfg.grad_clip)
        params, state = adamw_step(params, grads, state, cfg.learning_rate, cfg.weight_decay, cfg.betas, cfg.eps)
        entry = {"step": step, "loss": loss, "grad_norm": gnorm}
        if val is not None and len(val) and cfg.eval_every and ((step + 1) % cfg.eval_every == 0 or step + 1 == stop_step):
            entry["val_loss"] = evaluate_loss(params, val, cfg, derive_seed(cfg.seed, "val"))
        entry["wall_ms"] = (time.perf_counter() - t0) * 1e3
        log.append(entry)
        if on_log is not None:
            on_log(entry)
    return TrainResult(params, state, stop_step, log)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def rk4_integrate(field, x0, steps, t0=0.0, t1=1.0, callback=None):
    """Fixed-step classical Runge-Kutta for ``dx/dt = field(x, t)``.

    ``callback(k, t, x)`` is called after every step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64)
    h = (t1 - t0) / steps
    for k in range(steps):
        t = t0 + k * h
        k1 = field(x, t)
        k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = field(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"integration state became non-finite at step {k + 1}")
        if callback is not None:
            callback(k + 1, t + h, x)
    return x


def network_field(params, mol, count):
    """``field(x, t)`` over ``count`` stacked copies of ``mol``; ``x`` is ``(count, K, 3)``."""
    K = mol.num_atoms
    base = GraphBatch.from_molecules([mol] * count, [np.zeros((K, 3))] * count, 0.0)

    def field(x, t):
        v = forward(params, base.with_coords(x.reshape(count * K, 3), t))
        return v.reshape(count, K, 3)

    return field


def sample_conformers(params, mol, count, steps=DEFAULT_ODE_STEPS, seed=0, callback=None):
    """Integrate ``count`` centred Gaussian draws from t=0 to t=1; ``(count, K, 3)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    x0 = zero_com(rng.standard_normal((count, mol.num_atoms, 3)))
    return rk4_integrate(network_field(params, mol, count), x0, steps, callback=callback)


def ode_sample(params, mol, steps=DEFAULT_ODE_STEPS, seed=0):
    """One conformation for ``mol``: Gaussian start, zero CoM, RK4 over [0, 1]."""
    return sample_conformers(params, mol, 1, steps, seed)[0]
