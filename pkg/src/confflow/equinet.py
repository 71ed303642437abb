"""SE(3)-equivariant vector-field network.

A tensor-product message-passing stack over the bond graph:

* node features are ``(N, C, (l_max+1)^2)`` arrays, ``C`` channels per degree
  in the flat ``[L][m]`` ordering of :mod:`confflow.irreps`;
* the embedding sums atom, incident-bond and time embeddings into the
  degree-0 channels (higher degrees start at zero);
* each block sends ``m_ij = sum_p w_p(i, j) [h_j (x) Y(r_ij)]_p`` where the
  per-path, per-channel weights ``w_p`` come from a SiLU MLP over the scalar
  features of both ends, the bond embedding and a radial basis of the bond
  length; messages are summed over bonded neighbours, mixed linearly per
  degree, RMS-normalised per degree and added back residually;
* the head maps each node's degree-1 channels to one 3-vector, then removes
  the per-molecule mean of the field.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .irreps import degree_index, flat_coupling, sh_concat
from .moldata import NUM_BOND_ORDERS

COM_TOL = 1e-6
NORM_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    l_max: int = 2
    channels: int = 8
    num_blocks: int = 3
    atom_vocab: int = 20
    bond_vocab: int = NUM_BOND_ORDERS
    time_dim: int = 16
    hidden: int = 32
    num_rbf: int = 8
    rbf_cutoff: float = 4.0
    head_scale: float = 0.5

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1: the head reads degree-1 channels")
        for name in ("channels", "num_blocks", "atom_vocab", "bond_vocab", "time_dim", "hidden", "num_rbf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even (sin/cos pairs)")
        if self.rbf_cutoff <= 0:
            raise ValueError("rbf_cutoff must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def num_paths(self):
        return len(_coupling(self.l_max)[0])


def _coupling(l_max):
    return _COUPLING.setdefault(l_max, flat_coupling(l_max, l_max, l_max))


_COUPLING = {}


class ModelParams:
    """Learnable tensors of one model, in a fixed insertion order."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def num_parameters(self):
        return int(sum(a.size for a in self.tensors.values()))

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self):
        return np.concatenate([a.ravel() for a in self.tensors.values()])

    def equals(self, other):
        return (
            self.config == other.config
            and self.names() == other.names()
            and all(np.array_equal(self[k], other[k]) for k in self.names())
        )


def param_shapes(cfg):
    C, H, P = cfg.channels, cfg.hidden, cfg.num_paths
    gate_in = 2 * C + H + cfg.num_rbf
    shapes = {
        "atom_embed": (cfg.atom_vocab, C),
        "bond_embed_node": (cfg.bond_vocab, C),
        "time_w": (cfg.time_dim, C),
        "time_b": (C,),
        "bond_embed_edge": (cfg.bond_vocab, H),
    }
    for b in range(cfg.num_blocks):
        shapes.update(
            {
                f"block{b}.gate_w1": (gate_in, H),
                f"block{b}.gate_b1": (H,),
                f"block{b}.gate_w2": (H, P * C),
                f"block{b}.gate_b2": (P * C,),
                f"block{b}.mix_w": (cfg.l_max + 1, C, C),
                f"block{b}.mix_b": (C,),
                f"block{b}.norm_scale": (cfg.l_max + 1, C),
            }
        )
    shapes["head_w"] = (C, C)
    shapes["head_b"] = (C,)
    return shapes


def init_params(cfg, seed=0):
    """Deterministic initialisation; dense weights use ``N(0, 1/fan_in)``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        base = name.split(".")[-1]
        if base in ("atom_embed", "bond_embed_node", "bond_embed_edge"):
            a = rng.standard_normal(shape)
        elif base in ("time_b", "gate_b1", "gate_b2", "mix_b"):
            a = np.zeros(shape)
        elif base == "norm_scale":
            a = np.ones(shape)
        elif base == "mix_w":
            a = rng.standard_normal(shape) / math.sqrt(shape[-1])
        elif base == "head_w":
            # the head contracts C scalars against C vectors of norm ~1
            a = rng.standard_normal(shape) * (cfg.head_scale / shape[0])
        elif base == "head_b":
            a = np.zeros(shape)
        else:
            a = rng.standard_normal(shape) / math.sqrt(shape[0])
        tensors[name] = a.astype(np.float64)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


class GraphBatch:
    """Disjoint union of molecular graphs with coordinates and times.

    Edges are the bonds, stored in both directions. For edge ``e`` a message
    travels from ``src[e]`` (atom ``j``) to ``dst[e]`` (atom ``i``) and
    ``r_ij = x_j - x_i`` is recomputed from ``x`` on every access.
    """

    def __init__(self, atom_types, edge_src, edge_dst, edge_bond, x, t, node_graph, num_graphs, ids=None):
        self.atom_types = np.asarray(atom_types, dtype=np.int64)
        self.edge_src = np.asarray(edge_src, dtype=np.int64)
        self.edge_dst = np.asarray(edge_dst, dtype=np.int64)
        self.edge_bond = np.asarray(edge_bond, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.float64)
        self.t = np.asarray(t, dtype=np.float64).reshape(-1)
        self.node_graph = np.asarray(node_graph, dtype=np.int64)
        self.num_graphs = int(num_graphs)
        self.ids = list(ids) if ids is not None else [str(i) for i in range(self.num_graphs)]
        n = self.atom_types.shape[0]
        if self.x.shape != (n, 3):
            raise ValueError(f"coordinates have shape {self.x.shape}, expected ({n}, 3)")
        if self.t.shape != (self.num_graphs,):
            raise ValueError("need one time value per graph")
        if self.edge_src.size and (self.edge_src.max() >= n or self.edge_dst.max() >= n):
            raise ValueError("edge references a missing node")
        self.graph_sizes = np.bincount(self.node_graph, minlength=self.num_graphs)

    @classmethod
    def from_molecules(cls, mols, coords, t):
        """One graph per ``(mol, coords, t)`` triple; coords are ``(K, 3)``."""
        atoms, src, dst, bond, xs, node_graph, ids = [], [], [], [], [], [], []
        offset = 0
        for g, (mol, x) in enumerate(zip(mols, coords)):
            x = np.asarray(x, dtype=np.float64)
            if x.shape != (mol.num_atoms, 3):
                raise ValueError(f"coordinates for {mol.id!r} have shape {x.shape}")
            atoms.append(mol.atom_types)
            ba = mol.bond_array()
            src += [ba[:, 0] + offset, ba[:, 1] + offset]
            dst += [ba[:, 1] + offset, ba[:, 0] + offset]
            bond += [ba[:, 2], ba[:, 2]]
            xs.append(x)
            node_graph.append(np.full(mol.num_atoms, g))
            ids.append(mol.id)
            offset += mol.num_atoms
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        return cls(
            np.concatenate(atoms),
            cat(src, np.int64),
            cat(dst, np.int64),
            cat(bond, np.int64),
            np.concatenate(xs),
            np.broadcast_to(np.asarray(t, dtype=np.float64), (len(xs),)),
            np.concatenate(node_graph),
            len(xs),
            ids,
        )

    def with_coords(self, x, t=None):
        return GraphBatch(
            self.atom_types, self.edge_src, self.edge_dst, self.edge_bond, x,
            self.t if t is None else np.broadcast_to(np.asarray(t, dtype=np.float64), (self.num_graphs,)),
            self.node_graph, self.num_graphs, self.ids,
        )

    @property
    def num_nodes(self):
        return int(self.atom_types.shape[0])

    @property
    def num_edges(self):
        return int(self.edge_src.shape[0])

    def relative_positions(self):
        return self.x[self.edge_src] - self.x[self.edge_dst]

    def graph_means(self, v):
        sums = np.zeros((self.num_graphs,) + v.shape[1:])
        np.add.at(sums, self.node_graph, v)
        return sums / self.graph_sizes.reshape((-1,) + (1,) * (v.ndim - 1))


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def time_features(t, dim):
    """``[sin(k pi t), cos(k pi t)]`` for ``k = 1..dim/2``."""
    k = np.arange(1, dim // 2 + 1) * math.pi
    arg = np.asarray(t, dtype=np.float64)[:, None] * k[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def radial_basis(d, num, cutoff):
    centers = np.linspace(0.0, cutoff, num)
    width = cutoff / max(num - 1, 1)
    return np.exp(-(((d[:, None] - centers[None, :]) / width) ** 2))


@dataclass
class EdgeGeometry:
    sh: np.ndarray  # (E, D)
    coupled: np.ndarray  # (E, P, D, D): coupling tensor contracted with sh
    rbf: np.ndarray  # (E, num_rbf)


def edge_geometry(cfg, batch):
    r = batch.relative_positions()
    d = np.linalg.norm(r, axis=1)
    if np.any(d < 1e-12):
        raise ValueError("bonded atoms coincide; edge direction undefined")
    Y = sh_concat(cfg.l_max, r / d[:, None])
    _, W = _coupling(cfg.l_max)
    coupled = np.einsum("pijk,ej->epik", W, Y, optimize=True)
    return EdgeGeometry(Y, coupled, radial_basis(d, cfg.num_rbf, cfg.rbf_cutoff))


def _check_batch(cfg, batch):
    if batch.atom_types.size and (batch.atom_types.min() < 0 or batch.atom_types.max() >= cfg.atom_vocab):
        bad = int(batch.atom_types[(batch.atom_types < 0) | (batch.atom_types >= cfg.atom_vocab)][0])
        raise ValueError(f"atom type {bad} outside vocabulary of size {cfg.atom_vocab}")
    if batch.edge_bond.size and (batch.edge_bond.min() < 0 or batch.edge_bond.max() >= cfg.bond_vocab):
        raise ValueError(f"bond type outside vocabulary of size {cfg.bond_vocab}")


def embed(params, batch, tensors=None):
    """Initial node features ``(N, C, D)`` and edge scalar features ``(E, H)``."""
    cfg = params.config
    P = params.tensors if tensors is None else tensors
    _check_batch(cfg, batch)
    N, C, D = batch.num_nodes, cfg.channels, (cfg.l_max + 1) ** 2
    tf = time_features(batch.t, cfg.time_dim)
    time_emb = ad.add(ad.matmul(tf, P["time_w"]), P["time_b"])  # (G, C)
    bond_node = ad.take(P["bond_embed_node"], batch.edge_bond)
    s0 = ad.take(P["atom_embed"], batch.atom_types)
    s0 = ad.add(s0, ad.scatter_add(bond_node, batch.edge_dst, N))
    s0 = ad.add(s0, ad.take(time_emb, batch.node_graph))
    h0 = ad.concat([ad.reshape(s0, (N, C, 1)), np.zeros((N, C, D - 1))], axis=2)
    edge_scalars = ad.take(P["bond_embed_edge"], batch.edge_bond)
    return h0, edge_scalars


def _block(cfg, P, b, h, edge_scalars, geo, batch, deg_onehot, deg_idx):
    N, C, D = batch.num_nodes, cfg.channels, (cfg.l_max + 1) ** 2
    E, Pn = batch.num_edges, cfg.num_paths
    pre = f"block{b}."
    s = ad.reshape(h[:, :, 0:1], (N, C))
    gate_in = ad.concat(
        [ad.take(s, batch.edge_dst), ad.take(s, batch.edge_src), edge_scalars, geo.rbf], axis=1
    )
    z = ad.silu(ad.add(ad.matmul(gate_in, P[pre + "gate_w1"]), P[pre + "gate_b1"]))
    w = ad.reshape(ad.add(ad.matmul(z, P[pre + "gate_w2"]), P[pre + "gate_b2"]), (E, Pn, C))
    h_src = ad.take(h, batch.edge_src)
    msg = ad.einsum("epc,eci,epik->eck", w, h_src, geo.coupled)
    agg = ad.scatter_add(msg, batch.edge_dst, N)
    mix = ad.take(P[pre + "mix_w"], deg_idx)  # (D, C_out, C_in)
    mixed = ad.einsum("kdc,nck->ndk", mix, agg)
    bias = ad.concat([ad.reshape(P[pre + "mix_b"], (C, 1)), np.zeros((C, D - 1))], axis=1)
    mixed = ad.add(mixed, bias)
    sq = ad.einsum("nck,kl->ncl", ad.square(mixed), deg_onehot)  # per-(channel, degree) squared norm
    rms = ad.sqrt(ad.add(ad.mean(sq, axis=1, keepdims=True), NORM_EPS))  # (N, 1, L+1)
    scale = ad.reshape(ad.einsum("lc->cl", P[pre + "norm_scale"]), (1, C, cfg.l_max + 1))
    factor = ad.mul(ad.reciprocal(rms), scale)
    normed = ad.mul(mixed, ad.einsum("ncl,kl->nck", factor, deg_onehot))
    return ad.add(h, normed)


def forward(params, batch, tensors=None, check_com=True):
    """Per-node velocity ``(N, 3)`` with zero mean over each molecule."""
    cfg = params.config
    P = params.tensors if tensors is None else tensors
    if check_com and batch.num_nodes:
        com = batch.graph_means(batch.x)
        if np.abs(com).max() > COM_TOL:
            raise ValueError("coordinates must be centred per molecule (zero CoM)")
    N, C = batch.num_nodes, cfg.channels
    deg_idx = degree_index(cfg.l_max)
    deg_onehot = (deg_idx[:, None] == np.arange(cfg.l_max + 1)[None, :]).astype(np.float64)
    h, edge_scalars = embed(params, batch, P)
    if batch.num_edges:
        geo = edge_geometry(cfg, batch)
        for b in range(cfg.num_blocks):
            h = _block(cfg, P, b, h, edge_scalars, geo, batch, deg_onehot, deg_idx)
    s = ad.reshape(h[:, :, 0:1], (N, C))
    coef = ad.add(ad.matmul(s, P["head_w"]), P["head_b"])  # (N, C)
    v_yzx = ad.einsum("nc,nck->nk", coef, h[:, :, 1:4])
    v = v_yzx[:, [2, 0, 1]]
    counts = batch.graph_sizes[batch.node_graph].astype(np.float64)[:, None]
    mean = ad.take(ad.scatter_add(v, batch.node_graph, batch.num_graphs), batch.node_graph)
    return ad.add(v, ad.neg(ad.mul(mean, 1.0 / counts)))


def loss_and_grad(params, batch, target):
    """Mean-squared flow-matching loss and its exact gradient for every tensor."""
    from .errors import NonFiniteError

    target = np.asarray(target, dtype=np.float64)
    if target.shape != (batch.num_nodes, 3):
        raise ValueError(f"target has shape {target.shape}, expected ({batch.num_nodes}, 3)")
    tracked = {k: ad.Var(a, requires_grad=True, name=k) for k, a in params.tensors.items()}
    out = forward(params, batch, tracked)
    loss = ad.mean(ad.square(ad.add(out, -target)))
    if not np.isfinite(loss.value):
        raise NonFiniteError(f"non-finite loss for batch {batch.ids}")
    ad.backward(loss)
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in tracked.items()
    }
    return float(loss.value), grads
