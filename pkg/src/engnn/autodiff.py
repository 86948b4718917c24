"""A small reverse-mode differentiation engine over numpy float64 arrays.

Expressions are recorded into an :class:`ExprGraph` (a topologically ordered
list of operation records) through :class:`Sym` handles, evaluated against
leaf bindings with :func:`evaluate`, and differentiated with :func:`backward`.

The op set is deliberately small: exactly what the equivariant aggregator,
the message-passing layer and the two training losses need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class SparseSum:
    """Fixed sparse 0/1 operator stored as CSR: ``out[i] = sum_k x[indices[k]]``.

    Neighbour sums, per-set sums and row gathers are all instances of this.
    The transpose (needed for the adjoint) is built lazily and cached.
    """

    def __init__(self, indptr, indices, n_cols: int):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.n_rows = len(self.indptr) - 1
        self.n_cols = int(n_cols)
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_cols):
            raise ShapeError("sparse column index out of range")
        self._t = None

    @classmethod
    def from_groups(cls, group_of, n_groups: int) -> "SparseSum":
        """Row g sums the columns i with ``group_of[i] == g``."""
        group_of = np.asarray(group_of, dtype=np.int64)
        order = np.argsort(group_of, kind="stable")
        counts = np.bincount(group_of, minlength=n_groups)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(indptr, order, len(group_of))

    @classmethod
    def gather(cls, index, n_cols: int) -> "SparseSum":
        """Row i copies column ``index[i]``."""
        index = np.asarray(index, dtype=np.int64)
        return cls(np.arange(len(index) + 1), index, n_cols)

    @property
    def T(self) -> "SparseSum":
        if self._t is None:
            rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
            t = SparseSum.from_groups(self.indices, self.n_cols)
            # from_groups sorted nnz by column; map back to row ids
            t.indices = np.ascontiguousarray(rows[t.indices])
            t.n_cols = self.n_rows
            t._t = self
            self._t = t
        return self._t

    def apply(self, x):
        if x.shape[0] != self.n_cols:
            raise ShapeError(f"sparse operator expects {self.n_cols} rows, got {x.shape[0]}")
        return kernels.csr_rowsum(self.indptr, self.indices, x)

    def to_dense(self):
        m = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        np.add.at(m, (rows, self.indices), 1.0)
        return m


@dataclass
class Node:
    op: str
    inputs: tuple
    shape: tuple
    attrs: dict = field(default_factory=dict)


class ExprGraph:
    """Append-only record of operations; node ids are list positions."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, int] = {}
        self.differentiable: set[str] = set()

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, shape, **attrs) -> "Sym":
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError("inputs must precede the node")
        self.nodes.append(Node(op, tuple(inputs), tuple(int(s) for s in shape), attrs))
        return Sym(self, len(self.nodes) - 1)

    def leaf(self, name: str, shape, differentiable: bool = True) -> "Sym":
        if name in self.leaves:
            raise ValueError(f"duplicate leaf {name!r}")
        s = self._push("leaf", (), shape, name=name)
        self.leaves[name] = s.id
        if differentiable:
            self.differentiable.add(name)
        return s

    def const(self, value) -> "Sym":
        value = np.asarray(value, dtype=np.float64)
        return self._push("const", (), value.shape, value=value)

    def sym(self, node_id: int) -> "Sym":
        return Sym(self, node_id)


class Sym:
    """Handle to a node of an ExprGraph, with the op-building methods."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: ExprGraph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def shape(self):
        return self.graph.nodes[self.id].shape

    def _check_same(self, other, opname):
        if other.graph is not self.graph:
            raise ValueError("operands belong to different expression graphs")
        if other.shape != self.shape:
            raise ShapeError(f"{opname}: shapes {self.shape} and {other.shape} differ")

    def __add__(self, other: "Sym") -> "Sym":
        self._check_same(other, "add")
        return self.graph._push("add", (self.id, other.id), self.shape)

    def __sub__(self, other: "Sym") -> "Sym":
        self._check_same(other, "sub")
        return self.graph._push("sub", (self.id, other.id), self.shape)

    def __mul__(self, other: "Sym") -> "Sym":
        self._check_same(other, "mul")
        return self.graph._push("mul", (self.id, other.id), self.shape)

    def __matmul__(self, other: "Sym") -> "Sym":
        if len(self.shape) != 2 or len(other.shape) != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: {self.shape} @ {other.shape}")
        return self.graph._push("matmul", (self.id, other.id), (self.shape[0], other.shape[1]))

    def scale(self, c: float) -> "Sym":
        return self.graph._push("scale", (self.id,), self.shape, c=float(c))

    def relu(self) -> "Sym":
        return self.graph._push("relu", (self.id,), self.shape)

    def sum(self, axis: int) -> "Sym":
        shape = list(self.shape)
        shape.pop(axis)
        return self.graph._push("sum", (self.id,), shape, axis=axis)

    def mean(self, axis: int) -> "Sym":
        shape = list(self.shape)
        shape.pop(axis)
        return self.graph._push("mean", (self.id,), shape, axis=axis)

    def broadcast(self, n: int, axis: int = 0) -> "Sym":
        """Repeat a vector n times along a new axis (0: rows, 1: columns)."""
        if len(self.shape) != 1:
            raise ShapeError("broadcast takes a vector")
        shape = (n, self.shape[0]) if axis == 0 else (self.shape[0], n)
        return self.graph._push("broadcast", (self.id,), shape, axis=axis, n=n)

    def sparse_sum(self, op: SparseSum) -> "Sym":
        if len(self.shape) != 2 or self.shape[0] != op.n_cols:
            raise ShapeError(f"sparse_sum: operator takes {op.n_cols} rows, got {self.shape}")
        return self.graph._push("sparse_sum", (self.id,), (op.n_rows, self.shape[1]), sparse=op)


def concat(parts, axis: int = 1) -> Sym:
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    g = parts[0].graph
    ref = list(parts[0].shape)
    total = 0
    for p in parts:
        s = list(p.shape)
        if len(s) != len(ref) or any(a != b for k, (a, b) in enumerate(zip(s, ref)) if k != axis):
            raise ShapeError(f"concat: incompatible shapes {p.shape} vs {parts[0].shape}")
        total += s[axis]
    ref[axis] = total
    return g._push("concat", tuple(p.id for p in parts), ref, axis=axis)


def l1_loss(pred: Sym, target) -> Sym:
    """Mean absolute error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    return pred.graph._push("l1", (pred.id,), (), target=target)


def cross_entropy(logits: Sym, labels) -> Sym:
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    labels = np.asarray(labels)
    if len(logits.shape) != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("class labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("class label out of range")
    return logits.graph._push("xent", (logits.id,), (), labels=labels.astype(np.int64))


# ---------------------------------------------------------------- forward rules

def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fwd(node: Node, args, bindings, expr):
    op = node.op
    a = node.attrs
    if op == "leaf":
        try:
            v = bindings[a["name"]]
        except KeyError:
            raise KeyError(f"no binding for leaf {a['name']!r}") from None
        v = np.asarray(v, dtype=np.float64)
        if v.shape != node.shape:
            raise ShapeError(f"leaf {a['name']!r}: expected {node.shape}, got {v.shape}")
        return v
    if op == "const":
        return a["value"]
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "matmul":
        return args[0] @ args[1]
    if op == "scale":
        return a["c"] * args[0]
    if op == "relu":
        return np.maximum(args[0], 0.0)
    if op == "sum":
        return args[0].sum(axis=a["axis"])
    if op == "mean":
        return args[0].mean(axis=a["axis"])
    if op == "broadcast":
        v = args[0]
        return np.broadcast_to(v, node.shape).copy() if a["axis"] == 0 else np.repeat(v[:, None], a["n"], axis=1)
    if op == "concat":
        return np.concatenate(args, axis=a["axis"])
    if op == "sparse_sum":
        return a["sparse"].apply(args[0])
    if op == "l1":
        return np.asarray(np.abs(args[0] - a["target"]).mean())
    if op == "xent":
        z = args[0]
        m = z.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
        return np.asarray((lse - z[np.arange(len(z)), a["labels"]]).mean())
    raise ValueError(f"unknown op {op!r}")


def evaluate(expr: ExprGraph, bindings: Mapping[str, np.ndarray], check_finite: bool = True) -> list:
    """Forward pass. Returns the value of every node, indexed by node id."""
    values = []
    for nid, node in enumerate(expr.nodes):
        with np.errstate(over="ignore", invalid="ignore"):
            v = _fwd(node, [values[i] for i in node.inputs], bindings, expr)
        if v.shape != node.shape:
            raise ShapeError(f"node {nid} ({node.op}): produced {v.shape}, recorded {node.shape}")
        if check_finite and not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite value at node {nid} ({node.op})")
        values.append(v)
    return values


# --------------------------------------------------------------- adjoint rules

def _unbroadcast_bwd(node, g):
    return g.sum(axis=node.attrs["axis"])


def _bwd(node: Node, args, out, g):
    """Return one adjoint contribution per input (None where not needed)."""
    op = node.op
    a = node.attrs
    if op == "add":
        return g, g
    if op == "sub":
        return g, -g
    if op == "mul":
        return g * args[1], g * args[0]
    if op == "matmul":
        return g @ args[1].T, args[0].T @ g
    if op == "scale":
        return (a["c"] * g,)
    if op == "relu":
        return (g * (args[0] > 0),)
    if op == "sum":
        return (np.broadcast_to(np.expand_dims(g, a["axis"]), args[0].shape),)
    if op == "mean":
        k = args[0].shape[a["axis"]]
        return (np.broadcast_to(np.expand_dims(g, a["axis"]), args[0].shape) / k,)
    if op == "broadcast":
        return (_unbroadcast_bwd(node, g),)
    if op == "concat":
        ax = a["axis"]
        bounds = np.cumsum([x.shape[ax] for x in args])[:-1]
        return tuple(np.split(g, bounds, axis=ax))
    if op == "sparse_sum":
        return (a["sparse"].T.apply(np.ascontiguousarray(g)),)
    if op == "l1":
        return (g * np.sign(args[0] - a["target"]) / args[0].size,)
    if op == "xent":
        z = args[0]
        p = _softmax(z)
        p[np.arange(len(z)), a["labels"]] -= 1.0
        return (g * p / len(z),)
    raise ValueError(f"no adjoint rule for op {op!r}")


def backward(expr: ExprGraph, values, seed=None, output: int | None = None) -> dict:
    """Reverse pass: gradients of <seed, output> w.r.t. every differentiable leaf.

    ``output`` defaults to the last node; ``seed`` defaults to ones (so a scalar
    output yields its plain gradient).
    """
    if values is None or len(values) != len(expr.nodes):
        raise ValueError("forward cache missing or stale; run evaluate() first")
    out_id = len(expr.nodes) - 1 if output is None else output
    out_shape = expr.nodes[out_id].shape
    seed = np.ones(out_shape) if seed is None else np.asarray(seed, dtype=np.float64)
    if seed.shape != out_shape:
        raise ShapeError(f"seed shape {seed.shape} != output shape {out_shape}")

    needs = _needs_grad(expr, out_id)
    adj: dict[int, np.ndarray] = {out_id: seed}
    for nid in range(out_id, -1, -1):
        g = adj.pop(nid, None)
        node = expr.nodes[nid]
        if g is None or not node.inputs:
            if node.op == "leaf" and g is not None:
                adj[nid] = g
            continue
        contribs = _bwd(node, [values[i] for i in node.inputs], values[nid], g)
        for i, c in zip(node.inputs, contribs):
            if c is None or not needs[i]:
                continue
            adj[i] = adj[i] + c if i in adj else np.array(c, dtype=np.float64)

    grads = {}
    for name in expr.differentiable:
        lid = expr.leaves[name]
        grads[name] = adj.get(lid, np.zeros(expr.nodes[lid].shape))
    return grads


def _needs_grad(expr: ExprGraph, out_id: int):
    needs = [False] * len(expr.nodes)
    for name in expr.differentiable:
        needs[expr.leaves[name]] = True
    for nid in range(out_id + 1):
        node = expr.nodes[nid]
        if node.inputs and any(needs[i] for i in node.inputs):
            needs[nid] = True
    return needs


def value_and_grad(expr: ExprGraph, bindings, output: int | None = None):
    values = evaluate(expr, bindings)
    out_id = len(expr.nodes) - 1 if output is None else output
    return values[out_id], backward(expr, values, output=out_id)


def finite_diff_check(f: Callable[[dict], float], grad: Callable[[dict], dict], params: dict,
                      h: float = 1e-5, entries: int | None = None, rng=None) -> float:
    """Max over parameter entries of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps a parameter dict to a scalar, ``grad`` maps it to a dict of
    analytic gradients. ``entries`` limits the audit to a random subset of
    coordinates per tensor (all when None).
    """
    if h <= 0:
        raise ValueError("step must be positive")
    analytic = grad(params)
    worst = 0.0
    for name, p in params.items():
        if name not in analytic:
            continue
        flat_idx = np.arange(p.size)
        if entries is not None and p.size > entries:
            rng = rng or np.random.default_rng(0)
            flat_idx = rng.choice(p.size, size=entries, replace=False)
        for k in flat_idx:
            idx = np.unravel_index(k, p.shape)
            orig = p[idx]
            p[idx] = orig + h
            fp = f(params)
            p[idx] = orig - h
            fm = f(params)
            p[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite evaluation perturbing {name}{idx}")
            numeric = (fp - fm) / (2 * h)
            a = analytic[name][idx]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
