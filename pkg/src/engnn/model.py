"""Equivariant noise GNN: DeepSets, the four-step aggregator, message passing, readouts.

Layout conventions used throughout:

* invariant features ``X`` are ``(k, d)`` matrices;
* equivariant features ``Z`` are stored as ``(k * C, L)`` matrices whose row
  ``i * C + c`` holds ``Z[i, :, c]``. :func:`z_to_rows` / :func:`rows_to_z`
  convert from / to the ``(k, L, C)`` view.

Batches of graphs are disjoint unions; every set-level sum is a
:class:`~engnn.autodiff.SparseSum`, so a layer costs Theta(nodes * C + edges).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .autodiff import ExprGraph, SparseSum, Sym, concat, evaluate
from .graphs import Graph
from .noise import DISTRIBUTIONS, sample_noise_rng

VARIANTS = ("ENGNN", "MPNN", "NMPNN")
TASK_LEVELS = ("graph", "node", "subset")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    layers: int = 3
    d: int = 32
    L: int = 32
    C: int = 16
    L0: int = 8
    L1: int = 8
    d1: int = 64
    in_dim: int = 1
    out_dim: int = 1
    task_level: str = "graph"
    variant: str = "ENGNN"
    noise: str = "uniform01"
    eval_draws: int = 8

    def __post_init__(self):
        for name in ("layers", "d", "L", "C", "L0", "L1", "d1", "in_dim", "out_dim", "eval_draws"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}")
        if self.task_level not in TASK_LEVELS:
            raise ConfigError(f"model.task_level must be one of {TASK_LEVELS}")
        if self.noise not in DISTRIBUTIONS:
            raise ConfigError(f"model.noise must be one of {DISTRIBUTIONS}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DualState:
    X: np.ndarray  # (n, d)
    Z: np.ndarray  # (n, L, C)

    def __post_init__(self):
        if self.X.shape[0] != self.Z.shape[0]:
            raise ValueError("X and Z disagree on the node count")


def z_to_rows(z: np.ndarray) -> np.ndarray:
    k, L, C = z.shape
    return np.ascontiguousarray(z.transpose(0, 2, 1).reshape(k * C, L))


def rows_to_z(rows: np.ndarray, C: int) -> np.ndarray:
    kc, L = rows.shape
    return rows.reshape(kc // C, C, L).transpose(0, 2, 1)


# ------------------------------------------------------------------ layouts

class SetLayout:
    """Sparse operators for k elements partitioned into sets, each carrying C channels."""

    def __init__(self, set_of: np.ndarray, num_sets: int, C: int):
        self.set_of = np.asarray(set_of, dtype=np.int64)
        self.k = len(self.set_of)
        self.num_sets = int(num_sets)
        self.C = int(C)
        row_elem = np.repeat(np.arange(self.k), self.C)
        row_chan = np.tile(np.arange(self.C), self.k)
        row_setchan = self.set_of[row_elem] * self.C + row_chan
        # per (set, channel): sum over the set's elements, and its broadcast back
        self.chan_sum = SparseSum.from_groups(row_setchan, self.num_sets * self.C)
        self.chan_gather = SparseSum.gather(row_setchan, self.num_sets * self.C)
        # per element: sum over its channels, and broadcast to its channel rows
        self.row_to_elem = SparseSum.from_groups(row_elem, self.k)
        self.elem_to_row = SparseSum.gather(row_elem, self.k)
        self.set_sum = SparseSum.from_groups(self.set_of, self.num_sets)
        self.set_gather = SparseSum.gather(self.set_of, self.num_sets)
        # per set: sum of channel rows across channels (used by the subset head)
        self.setchan_to_set = SparseSum.from_groups(np.repeat(np.arange(self.num_sets), self.C), self.num_sets)


class GraphBatch:
    """Disjoint union of graphs plus the operators the layers need."""

    def __init__(self, graphs: Sequence[Graph], C: int):
        self.graphs = list(graphs)
        if not self.graphs:
            raise ValueError("empty batch")
        sizes = np.array([g.n for g in self.graphs])
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.N = int(self.offsets[-1])
        self.G = len(self.graphs)
        self.C = int(C)
        node_graph = np.repeat(np.arange(self.G), sizes)
        self.layout = SetLayout(node_graph, self.G, C)
        indptr = [np.zeros(1, dtype=np.int64)]
        indices = []
        nnz = 0
        for g, off in zip(self.graphs, self.offsets[:-1]):
            indptr.append(g.indptr[1:] + nnz)
            indices.append(g.indices + off)
            nnz += len(g.indices)
        self.adj = SparseSum(np.concatenate(indptr), np.concatenate(indices) if indices else [], self.N)
        feats = [g.features() for g in self.graphs]
        widths = {f.shape[1] for f in feats}
        if len(widths) != 1:
            raise ValueError("all graphs in a batch need the same feature width")
        self.features = np.concatenate(feats, axis=0)
        self._subset = None

    @property
    def subset(self):
        """(node ids into the batch, layout over subsets) for subset-level readout."""
        if self._subset is None:
            ids, owner = [], []
            for gi, (g, off) in enumerate(zip(self.graphs, self.offsets[:-1])):
                if g.subset is None or len(g.subset) == 0:
                    raise ValueError(f"graph {gi} has no (or an empty) node subset")
                ids.append(g.subset + off)
                owner.append(np.full(len(g.subset), gi))
            ids = np.concatenate(ids)
            self._subset = (SparseSum.gather(ids, self.N), SetLayout(np.concatenate(owner), self.G, self.C))
        return self._subset

    def sample_noise(self, rng, dist: str) -> np.ndarray:
        return np.concatenate([sample_noise_rng(rng, g.n, self.C, dist) for g in self.graphs], axis=0)

    def noise_from_seeds(self, seed, draw: int, dist: str, graph_ids=None) -> np.ndarray:
        """Per-graph noise from a stream keyed by (seed, draw, graph index) only."""
        ids = range(self.G) if graph_ids is None else graph_ids
        return np.concatenate(
            [sample_noise_rng(np.random.default_rng([int(seed), int(draw), int(k)]), g.n, self.C, dist)
             for k, g in zip(ids, self.graphs)], axis=0)


# --------------------------------------------------------------- parameters

def _mlp_shapes(prefix, fan_in, out):
    return {
        f"{prefix}.0.W": (fan_in, out), f"{prefix}.0.b": (out,),
        f"{prefix}.1.W": (out, out), f"{prefix}.1.b": (out,),
    }


def _deepset_shapes(prefix, fan_in, out):
    return {**_mlp_shapes(f"{prefix}.inner", fan_in, out), **_mlp_shapes(f"{prefix}.outer", out, out)}


def aggr_shapes(prefix, d, L, d_out, L_out, L0, L1, d1) -> dict:
    """Parameter shapes of one aggregator block mapping (d, L) -> (d_out, L_out)."""
    shapes = {}
    shapes.update(_deepset_shapes(f"{prefix}.psi", L, L0))
    shapes.update(_deepset_shapes(f"{prefix}.phi", L + L0, L1))
    shapes.update(_deepset_shapes(f"{prefix}.rho", d + L1, d1))
    shapes.update(_mlp_shapes(f"{prefix}.g", d1 + d + L1, d_out))
    shapes.update(_mlp_shapes(f"{prefix}.h", d1 + d + L1 + L + L0, L_out))
    return shapes


def input_dims(cfg: ModelConfig):
    d_in = cfg.in_dim + (cfg.C if cfg.variant == "NMPNN" else 0)
    return d_in, 1


def param_shapes(cfg: ModelConfig) -> dict:
    shapes = {}
    d_in, L_in = input_dims(cfg)
    for layer in range(cfg.layers):
        shapes.update(aggr_shapes(f"mp{layer}", d_in, L_in, cfg.d, cfg.L, cfg.L0, cfg.L1, cfg.d1))
        d_in, L_in = cfg.d, cfg.L
    if cfg.task_level == "graph":
        shapes.update(aggr_shapes("pool", cfg.d, cfg.L, cfg.d, cfg.L, cfg.L0, cfg.L1, cfg.d1))
    elif cfg.task_level == "subset":
        shapes.update(aggr_shapes("sub", cfg.d, cfg.L, cfg.d, cfg.L, cfg.L0, cfg.L1, cfg.d1))
        shapes.update(_deepset_shapes("sub.zset", 2 * cfg.L, cfg.L))
        shapes.update(_mlp_shapes("sub.mlp", 2 * cfg.d + cfg.L, cfg.d))
    shapes.update({"out.0.W": (cfg.d, cfg.d), "out.0.b": (cfg.d,),
                   "out.1.W": (cfg.d, cfg.out_dim), "out.1.b": (cfg.out_dim,)})
    return shapes


def init_params(shapes: dict, seed) -> dict:
    """LeCun-uniform weights, U(-sqrt(3/fan_in), sqrt(3/fan_in)), and zero biases.

    The default 1/sqrt(fan_in) bound shrinks activations at every layer and
    the noise pathway crosses a dozen stacked linear maps, so its effect on
    the output vanished at init; He scaling instead blows up through the
    set sums. Unit-variance weights sit between the two.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".W"):
            bound = np.sqrt(3.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def init_model(cfg: ModelConfig, seed) -> dict:
    return init_params(param_shapes(cfg), seed)


def count_params(params: dict) -> int:
    return int(sum(p.size for p in params.values()))


# ------------------------------------------------------- symbolic building blocks

def bind_params(expr: ExprGraph, params_or_shapes: dict) -> dict:
    return {name: expr.leaf(name, np.shape(v) if not isinstance(v, tuple) else v)
            for name, v in params_or_shapes.items()}


def linear(P, prefix, x: Sym) -> Sym:
    return x @ P[f"{prefix}.W"] + P[f"{prefix}.b"].broadcast(x.shape[0])


def mlp(P, prefix, x: Sym) -> Sym:
    return linear(P, f"{prefix}.1", linear(P, f"{prefix}.0", x).relu())


def deepset(P, prefix, x: Sym, summer: SparseSum) -> Sym:
    """outer(sum of inner(element)) for every set described by the rows of ``summer``."""
    return mlp(P, f"{prefix}.outer", mlp(P, f"{prefix}.inner", x).sparse_sum(summer))


def aggr_block(P, prefix, X: Sym, Z: Sym, lay: SetLayout, adj: SparseSum | None = None):
    """The four-step aggregator. With ``adj`` the set step runs over neighbourhoods.

    Returns (X', Z') with Z' in row layout.
    """
    # 1. channel identifiers: DeepSet over the elements of each set, per channel
    ident = deepset(P, f"{prefix}.psi", Z, lay.chan_sum)
    Z1 = concat([Z, ident.sparse_sum(lay.chan_gather)])
    # 2. node encoding: DeepSet over each element's channels
    X0 = concat([deepset(P, f"{prefix}.phi", Z1, lay.row_to_elem), X])
    # 3. set (or neighbourhood) encoding
    if adj is None:
        X1 = deepset(P, f"{prefix}.rho", X0, lay.set_sum).sparse_sum(lay.set_gather)
    else:
        X1 = deepset(P, f"{prefix}.rho", X0, adj)
    H = concat([X1, X0])
    # 4. outputs; h is shared across channels
    X2 = mlp(P, f"{prefix}.g", H)
    Z2 = mlp(P, f"{prefix}.h", concat([H.sparse_sum(lay.elem_to_row), Z1]))
    return X2, Z2


def model_inputs(cfg: ModelConfig, batch: GraphBatch, noise: np.ndarray | None):
    """Input bindings (X_in, Z_in rows) for one variant."""
    feats = batch.features
    if noise is None or cfg.variant == "MPNN":
        noise = np.zeros((batch.N, cfg.C))
    if noise.shape != (batch.N, cfg.C):
        raise ValueError(f"noise must be {(batch.N, cfg.C)}, got {noise.shape}")
    if cfg.variant == "NMPNN":
        return {"X_in": np.concatenate([feats, noise], axis=1), "Z_in": np.zeros((batch.N * cfg.C, 1))}
    return {"X_in": feats, "Z_in": noise.reshape(-1, 1).copy()}


def build_model(cfg: ModelConfig, batch: GraphBatch, params: dict | None = None):
    """Record the forward pass of a whole batch. Returns (expr, output Sym)."""
    if batch.features.shape[1] != cfg.in_dim:
        raise ConfigError(f"model.in_dim={cfg.in_dim} but data has {batch.features.shape[1]} feature columns")
    expr = ExprGraph()
    P = bind_params(expr, params if params is not None else param_shapes(cfg))
    d_in, L_in = input_dims(cfg)
    X = expr.leaf("X_in", (batch.N, d_in), differentiable=False)
    Z = expr.leaf("Z_in", (batch.N * cfg.C, L_in), differentiable=False)
    lay = batch.layout
    for layer in range(cfg.layers):
        X, Z = aggr_block(P, f"mp{layer}", X, Z, lay, adj=batch.adj)
    if cfg.task_level == "node":
        h = X
    elif cfg.task_level == "graph":
        Xp, _ = aggr_block(P, "pool", X, Z, lay)
        h = Xp.sparse_sum(lay.set_sum)
    else:
        h = _subset_readout(P, X, Z, batch)
    return expr, mlp(P, "out", h)


def _subset_readout(P, X, Z, batch: GraphBatch):
    lay = batch.layout
    pick, sub_lay = batch.subset
    # global aggregation over all nodes, subset aggregation over U; shared weights
    XG, ZG = aggr_block(P, "sub", X, Z, lay)
    XU, ZU = aggr_block(P, "sub", X.sparse_sum(pick), Z.sparse_sum(_row_pick(pick, batch.C)), sub_lay)
    xg = XG.sparse_sum(lay.set_sum)
    xu = XU.sparse_sum(sub_lay.set_sum)
    zg = ZG.sparse_sum(lay.chan_sum)        # (G*C, L)
    zu = ZU.sparse_sum(sub_lay.chan_sum)    # (G*C, L)
    # DeepSet whose elements are the channels, each a (2L)-vector
    zset = deepset(P, "sub.zset", concat([zu, zg]), lay.setchan_to_set)
    return mlp(P, "sub.mlp", concat([xu, xg, zset]))


def _row_pick(pick: SparseSum, C: int) -> SparseSum:
    nodes = pick.indices
    rows = (nodes[:, None] * C + np.arange(C)[None, :]).reshape(-1)
    return SparseSum.gather(rows, pick.n_cols * C)


class CompiledModel:
    """A recorded forward pass for a fixed batch, re-evaluated with new params/noise."""

    def __init__(self, cfg: ModelConfig, batch: GraphBatch):
        self.cfg = cfg
        self.batch = batch
        self.expr, self.out = build_model(cfg, batch)

    def bindings(self, params, noise):
        return {**params, **model_inputs(self.cfg, self.batch, noise)}

    def forward(self, params, noise) -> np.ndarray:
        values = evaluate(self.expr, self.bindings(params, noise))
        return values[self.out.id]


# ---------------------------------------------------- numpy-level entry points
# Single-set / single-graph conveniences over the symbolic blocks above.

def deepset_forward(elements: np.ndarray, params: dict, prefix: str = "ds") -> np.ndarray:
    elements = np.asarray(elements, dtype=np.float64)
    k = elements.shape[0]
    width = params[f"{prefix}.inner.0.W"].shape[0]
    if elements.ndim != 2 and k:
        raise ValueError("elements must be a (k, a) matrix")
    if k == 0:
        elements = np.zeros((0, width))
    if elements.shape[1] != width:
        raise ValueError(f"element width {elements.shape[1]} != DeepSet input width {width}")
    expr = ExprGraph()
    P = bind_params(expr, {n: v for n, v in params.items() if n.startswith(prefix + ".")})
    x = expr.leaf("x", elements.shape, differentiable=False)
    out = deepset(P, prefix, x, SparseSum.from_groups(np.zeros(k, dtype=np.int64), 1))
    vals = evaluate(expr, {**params, "x": elements})
    return vals[out.id][0]


def aggr_forward(X: np.ndarray, Z: np.ndarray, params: dict, prefix: str = "aggr"):
    """Set aggregator on one set: X (k, d), Z (k, L, C) -> (X' (k, d'), Z' (k, L', C))."""
    k, L, C = Z.shape
    if X.shape[0] != k:
        raise ValueError("X and Z disagree on the set size")
    lay = SetLayout(np.zeros(k, dtype=np.int64), 1, C)
    expr = ExprGraph()
    P = bind_params(expr, {n: v for n, v in params.items() if n.startswith(prefix + ".")})
    xs = expr.leaf("X", X.shape, differentiable=False)
    zs = expr.leaf("Z", (k * C, L), differentiable=False)
    X2, Z2 = aggr_block(P, prefix, xs, zs, lay)
    vals = evaluate(expr, {**params, "X": X, "Z": z_to_rows(Z)})
    return vals[X2.id], rows_to_z(vals[Z2.id], C)


def mp_layer(g: Graph, state: DualState, params: dict, prefix: str = "mp0") -> DualState:
    n, L, C = state.Z.shape
    if n != g.n:
        raise ValueError("state and graph disagree on the node count")
    batch = GraphBatch([g], C)
    expr = ExprGraph()
    P = bind_params(expr, {k: v for k, v in params.items() if k.startswith(prefix + ".")})
    xs = expr.leaf("X", state.X.shape, differentiable=False)
    zs = expr.leaf("Z", (n * C, L), differentiable=False)
    X2, Z2 = aggr_block(P, prefix, xs, zs, batch.layout, adj=batch.adj)
    vals = evaluate(expr, {**params, "X": state.X, "Z": z_to_rows(state.Z)})
    return DualState(vals[X2.id], rows_to_z(vals[Z2.id], C))


def pool(state: DualState, params: dict, prefix: str = "pool") -> np.ndarray:
    """Graph vector: aggregator over all nodes, then sum of the invariant outputs."""
    Xp, _ = aggr_forward(state.X, state.Z, params, prefix)
    return Xp.sum(axis=0)


def subset_head(U, state: DualState, params: dict) -> np.ndarray:
    U = np.asarray(U, dtype=np.int64)
    if U.size == 0:
        raise ValueError("subset must be non-empty")
    n, L, C = state.Z.shape
    if U.min() < 0 or U.max() >= n:
        raise ValueError("subset id out of range")
    g = Graph.from_edges(n, [], subset=U)
    batch = GraphBatch([g], C)
    expr = ExprGraph()
    P = bind_params(expr, {k: v for k, v in params.items() if k.startswith("sub.")})
    xs = expr.leaf("X", state.X.shape, differentiable=False)
    zs = expr.leaf("Z", (n * C, L), differentiable=False)
    out = _subset_readout(P, xs, zs, batch)
    vals = evaluate(expr, {**params, "X": state.X, "Z": z_to_rows(state.Z)})
    return vals[out.id][0]


def model_forward(cfg: ModelConfig, g: Graph, Z0: np.ndarray | None, params: dict) -> np.ndarray:
    """Prediction for one graph and one noise draw (``Z0`` is n x C)."""
    model = CompiledModel(cfg, GraphBatch([g], cfg.C))
    out = model.forward(params, Z0)
    return out[0] if cfg.task_level in ("graph", "subset") else out


def forward_draws(cfg: ModelConfig, g: Graph, params: dict, draws: int, seed) -> np.ndarray:
    """Outputs for ``draws`` i.i.d. noise draws, batched as copies of the graph.

    Returns (draws, out_dim) for graph/subset tasks and (draws, n, out_dim) for node tasks.
    """
    rng = np.random.default_rng(seed)
    batch = GraphBatch([g] * draws, cfg.C)
    model = CompiledModel(cfg, batch)
    out = model.forward(params, batch.sample_noise(rng, cfg.noise))
    if cfg.task_level == "node":
        return out.reshape(draws, g.n, -1)
    return out


def expectation_estimate(cfg: ModelConfig, g: Graph, params: dict, draws: int, seed):
    """Monte-Carlo mean and standard error of the model output over noise."""
    if draws < 2:
        raise ValueError("need at least two draws")
    out = forward_draws(cfg, g, params, draws, seed)
    mean = out.mean(axis=0)
    stderr = out.std(axis=0, ddof=1) / np.sqrt(draws)
    return mean, stderr


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, cfg: ModelConfig, params: dict, extra: dict | None = None) -> None:
    doc = {
        "config": cfg.to_dict(),
        "tensors": {name: {"shape": list(params[name].shape), "data": params[name].reshape(-1).tolist()}
                    for name in sorted(params)},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = ModelConfig.from_dict(doc["config"])
    params = {name: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
              for name, t in doc["tensors"].items()}
    expected = param_shapes(cfg)
    if set(expected) != set(params) or any(tuple(expected[k]) != params[k].shape for k in params):
        raise ConfigError("checkpoint tensors do not match the stored config")
    return cfg, params, doc.get("extra", {})
