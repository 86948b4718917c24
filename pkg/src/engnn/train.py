"""Losses, AdamW with cosine annealing, metrics, training and the desk-scale experiments."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError, backward, cross_entropy, evaluate as eval_expr, l1_loss
from .counting import count_pattern
from .graphs import Graph, gen_erdos_renyi, permute_graph
from .model import CompiledModel, ConfigError, GraphBatch, ModelConfig, build_model, init_model, model_inputs
from .wl import spectrally_distinct, wl_equivalent

log = logging.getLogger(__name__)

LOSSES = ("L1", "cross_entropy")
METRICS = ("MAE", "NMAE", "accuracy", "micro_f1", "loss")
CSV_HEADER = ["run_id", "task", "variant", "split", "metric", "value", "seed"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, what):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 0  # 0: full batch
    lr: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    loss: str = "L1"
    eval_draws: int = 8
    eval_every: int = 5
    patience: int = 50
    split: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    normalize_targets: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.loss not in LOSSES:
            raise ConfigError(f"train.loss must be one of {LOSSES}")
        if self.eval_draws < 1 or self.eval_every < 1:
            raise ConfigError("train.eval_draws and train.eval_every must be >= 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError("train.split must be three non-negative fractions summing to 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ schedule

def cosine_lr(peak: float, step: int, total: int) -> float:
    """Cosine annealing from ``peak`` at step 0 to 0 at step ``total``."""
    if total <= 0:
        return peak
    step = min(max(step, 0), total)
    return 0.5 * peak * (1.0 + math.cos(math.pi * step / total))


class AdamW:
    """Adam with decoupled weight decay (weights shrink by lr * wd before the Adam step)."""

    def __init__(self, params: dict, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p = params[k]
            p *= 1.0 - lr * self.wd
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(params, grads, state: AdamW, lr_t: float):
    state.step(params, grads, lr_t)
    return params, state


# ------------------------------------------------------------------- metrics

def loss_value(kind: str, predictions, targets) -> float:
    """Mean L1 or mean softmax cross-entropy, computed directly in numpy."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if kind == "L1":
        targets = np.asarray(targets, dtype=np.float64)
        if predictions.shape != targets.shape:
            raise ValueError(f"shape mismatch {predictions.shape} vs {targets.shape}")
        return float(np.abs(predictions - targets).mean())
    if kind == "cross_entropy":
        targets = np.asarray(targets)
        if predictions.ndim != 2 or targets.shape != (predictions.shape[0],):
            raise ValueError("cross entropy needs (B, K) logits and B labels")
        if not np.issubdtype(targets.dtype, np.integer) or targets.min() < 0 or targets.max() >= predictions.shape[1]:
            raise ValueError("invalid class index")
        z = predictions - predictions.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(targets)), targets].mean())
    raise ValueError(f"unknown loss {kind!r}")


def metric_value(metric: str, predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets)
    if metric == "MAE":
        return float(np.abs(predictions.reshape(targets.shape) - targets).mean())
    if metric == "NMAE":
        std = float(np.std(targets))
        if std == 0.0:
            raise ValueError("NMAE undefined: targets have zero standard deviation")
        return metric_value("MAE", predictions, targets) / std
    if metric in ("accuracy", "micro_f1"):
        # single-label multi-class: micro-F1 coincides with accuracy
        labels = predictions.argmax(axis=1) if predictions.ndim == 2 else (predictions > 0).astype(int)
        return float((labels == targets).mean())
    raise ValueError(f"unknown metric {metric!r}")


class MetricReport:
    def __init__(self, rows=None):
        self.rows: list[dict] = list(rows or [])

    def add(self, run_id, task, variant, split, metric, value, seed):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        self.rows.append({"run_id": run_id, "task": task, "variant": variant, "split": split,
                          "metric": metric, "value": float(value), "seed": int(seed)})

    def extend(self, other: "MetricReport"):
        self.rows.extend(other.rows)

    def get(self, split, metric, run_id=None):
        for row in reversed(self.rows):
            if row["split"] == split and row["metric"] == metric and (run_id is None or row["run_id"] == run_id):
                return row["value"]
        raise KeyError((split, metric))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r["run_id"], r["task"], r["variant"], r["split"], r["metric"], repr(r["value"]), r["seed"]])

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
            rows = [{"run_id": r[0], "task": r[1], "variant": r[2], "split": r[3], "metric": r[4],
                     "value": float(r[5]), "seed": int(r[6])} for r in reader]
        return cls(rows)


# ------------------------------------------------------------ data handling

def split_dataset(graphs: Sequence[Graph], fractions, seed) -> tuple[list, list, list]:
    n = len(graphs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    pick = lambda idx: [graphs[i] for i in sorted(idx)]
    return pick(order[:n_train]), pick(order[n_train:n_train + n_valid]), pick(order[n_train + n_valid:])


def stack_targets(cfg: ModelConfig, graphs: Sequence[Graph]) -> np.ndarray:
    """Targets aligned with the model output rows of a batch of ``graphs``."""
    ys = []
    for i, g in enumerate(graphs):
        if g.y is None:
            raise ConfigError(f"graph {i} has no target")
        y = np.asarray(g.y)
        if cfg.task_level == "node":
            if y.ndim == 0 or y.shape[0] != g.n:
                raise ConfigError(f"graph {i}: node-level task needs {g.n} per-node targets, got shape {y.shape}")
            ys.append(y.reshape(g.n, -1))
        else:
            ys.append(y.reshape(1, -1))
    out = np.concatenate(ys, axis=0)
    if cfg.task_level == "subset" or out.dtype.kind in "iu" and cfg.out_dim > 1:
        return out[:, 0].astype(np.int64)
    if out.shape[1] != cfg.out_dim:
        raise ConfigError(f"targets have width {out.shape[1]} but model.out_dim={cfg.out_dim}")
    return out.astype(np.float64)


def _is_classification(tcfg: TrainConfig) -> bool:
    return tcfg.loss == "cross_entropy"


@dataclass
class NoisePolicy:
    """Evaluation noise: ``draws`` draws keyed by (seed, draw, graph index), or explicit tensors."""

    draws: int = 8
    seed: int = 12345
    explicit: list | None = None  # per draw: full-batch (N, C) noise

    def noise(self, batch: GraphBatch, draw: int, dist: str):
        if self.explicit is not None:
            return self.explicit[draw]
        return batch.noise_from_seeds(self.seed, draw, dist)

    @property
    def count(self):
        return len(self.explicit) if self.explicit is not None else self.draws


def predict(cfg: ModelConfig, params: dict, graphs: Sequence[Graph], policy: NoisePolicy,
            shift=0.0, scale=1.0) -> np.ndarray:
    """Outputs averaged over the policy's noise draws, mapped back to target units."""
    batch = GraphBatch(graphs, cfg.C)
    model = CompiledModel(cfg, batch)
    draws = 1 if cfg.variant == "MPNN" else policy.count
    acc = None
    for r in range(draws):
        out = model.forward(params, policy.noise(batch, r, cfg.noise) if cfg.variant != "MPNN" else None)
        acc = out if acc is None else acc + out
    return acc / draws * scale + shift


def evaluate(metric: str, cfg: ModelConfig, params: dict, graphs: Sequence[Graph],
             policy: NoisePolicy | None = None, shift=0.0, scale=1.0) -> float:
    policy = policy or NoisePolicy(cfg.eval_draws)
    preds = predict(cfg, params, graphs, policy, shift, scale)
    targets = stack_targets(cfg, graphs)
    if metric == "loss":
        kind = "cross_entropy" if targets.dtype.kind in "iu" else "L1"
        return loss_value(kind, preds, targets)
    return metric_value(metric, preds, targets)


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    params: dict
    history: MetricReport
    best_epoch: int
    shift: float = 0.0
    scale: float = 1.0
    final: dict = field(default_factory=dict)


def _loss_sym(out, targets, tcfg: TrainConfig):
    if tcfg.loss == "cross_entropy":
        return cross_entropy(out, targets)
    return l1_loss(out, targets.reshape(out.shape))


class _Trainer:
    def __init__(self, cfg, tcfg, graphs, targets):
        self.cfg = cfg
        self.tcfg = tcfg
        self.batch = GraphBatch(graphs, cfg.C)
        self.expr, out = build_model(cfg, self.batch)
        self.loss = _loss_sym(out, targets, tcfg)

    def step(self, params, rng):
        noise = None if self.cfg.variant == "MPNN" else self.batch.sample_noise(rng, self.cfg.noise)
        bindings = {**params, **model_inputs(self.cfg, self.batch, noise)}
        values = eval_expr(self.expr, bindings)
        return float(values[self.loss.id]), backward(self.expr, values, output=self.loss.id)


def train(cfg: ModelConfig, tcfg: TrainConfig, dataset: Sequence[Graph] | tuple, run_id: str = "run",
          task: str = "task", params: dict | None = None) -> TrainResult:
    """Full-batch (or mini-batch) AdamW training with best-validation selection.

    ``dataset`` is either a list of graphs (split with ``tcfg.split``) or a
    ready (train, valid, test) tuple.
    """
    if isinstance(dataset, tuple):
        train_g, valid_g, test_g = dataset
    else:
        train_g, valid_g, test_g = split_dataset(dataset, tcfg.split, tcfg.seed)
    if not train_g:
        raise ConfigError("empty training split")
    classify = _is_classification(tcfg)
    main_metric = "accuracy" if classify else "NMAE"
    rng = np.random.default_rng([tcfg.seed, 1])
    params = {k: v.copy() for k, v in (params or init_model(cfg, [tcfg.seed, 0])).items()}

    y_train = stack_targets(cfg, train_g)
    shift, scale = 0.0, 1.0
    if not classify and tcfg.normalize_targets:
        shift = float(np.mean(y_train))
        scale = float(np.std(y_train)) or 1.0

    def norm(y):
        return y if classify else (y - shift) / scale

    if tcfg.batch_size and tcfg.batch_size < len(train_g):
        trainers = None
    else:
        trainers = [_Trainer(cfg, tcfg, train_g, norm(y_train))]
    opt = AdamW(params, tcfg.weight_decay)
    policy = NoisePolicy(tcfg.eval_draws, seed=tcfg.seed + 7919)
    history = MetricReport()
    variant = cfg.variant

    def score(split_graphs, p):
        return evaluate(main_metric, cfg, p, split_graphs, policy, shift, scale)

    better = (lambda a, b: a > b) if classify else (lambda a, b: a < b)
    best = None
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = -1
    stale = 0
    for epoch in range(tcfg.epochs):
        lr = cosine_lr(tcfg.lr, epoch, tcfg.epochs)
        if trainers is None:
            order = rng.permutation(len(train_g))
            chunks = [order[i:i + tcfg.batch_size] for i in range(0, len(order), tcfg.batch_size)]
            steps = [(_Trainer(cfg, tcfg, [train_g[i] for i in c], norm(stack_targets(cfg, [train_g[i] for i in c]))))
                     for c in chunks]
        else:
            steps = trainers
        losses = []
        for tr in steps:
            try:
                loss, grads = tr.step(params, rng)
                opt.step(params, grads, lr)
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(epoch, "loss or gradient") from exc
            losses.append(loss)
        history.add(f"{run_id}@{epoch}", task, variant, "train", "loss", float(np.mean(losses)), tcfg.seed)
        if valid_g and ((epoch + 1) % tcfg.eval_every == 0 or epoch == tcfg.epochs - 1):
            val = score(valid_g, params)
            history.add(f"{run_id}@{epoch}", task, variant, "valid", main_metric, val, tcfg.seed)
            if best is None or better(val, best):
                best, best_epoch, stale = val, epoch, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                stale += tcfg.eval_every
                if stale >= tcfg.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break
    if not valid_g:
        best_params = {k: v.copy() for k, v in params.items()}
        best_epoch = tcfg.epochs - 1

    result = TrainResult(best_params, history, best_epoch, shift, scale)
    for split, gs in (("train", train_g), ("valid", valid_g), ("test", test_g)):
        if not gs:
            continue
        metrics = ["accuracy"] if classify else ["MAE", "NMAE"]
        for m in metrics + ["loss"]:
            try:
                v = evaluate(m, cfg, best_params, gs, policy, shift, scale)
            except ValueError:
                continue  # e.g. NMAE on a constant-target split
            history.add(run_id, task, variant, split, m, v, tcfg.seed)
            result.final[(split, m)] = v
    return result


# --------------------------------------------------------------- experiments

def counting_dataset(num_graphs: int, n: int, p: float, pattern, seed) -> list[Graph]:
    """Erdos-Renyi graphs labelled with per-node substructure counts."""
    out = []
    for i in range(num_graphs):
        g = gen_erdos_renyi(n, p, [seed, i])
        g.y = count_pattern(g, pattern).astype(np.float64)
        out.append(g)
    return out


def _relabeled(g: Graph, rng) -> Graph:
    return permute_graph(g, rng.permutation(g.n))


def discrimination_experiment(g: Graph, h: Graph, cfg: ModelConfig, tcfg: TrainConfig,
                              copies: int = 16, heldout_draws: int = 100,
                              require_nonisomorphic: bool = True) -> dict:
    """Train a graph classifier to tell two 1-WL-equivalent graphs apart.

    Training uses ``copies`` fixed relabelings of each graph with fresh noise
    every step. Train accuracy averages logits over the eval draws; held-out
    accuracy scores single draws on fresh relabelings and fresh noise.
    """
    if not wl_equivalent(g, h):
        raise ValueError("pair is not 1-WL equivalent")
    distinct = spectrally_distinct(g, h)
    if require_nonisomorphic and not distinct:
        raise ValueError("pair is not certified non-isomorphic")
    cfg = ModelConfig.from_dict({**cfg.to_dict(), "task_level": "graph", "out_dim": 2})
    rng = np.random.default_rng([tcfg.seed, 2])
    train_set = []
    for label, base in ((0, g), (1, h)):
        for _ in range(copies):
            c = _relabeled(base, rng)
            c.y = label
            train_set.append(c)
    tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "loss": "cross_entropy", "normalize_targets": False})
    result = train(cfg, tcfg, (train_set, [], []), run_id="discrimination", task="csl")
    policy = NoisePolicy(tcfg.eval_draws, seed=tcfg.seed + 104729)
    train_acc = evaluate("accuracy", cfg, result.params, train_set, policy)

    held = []
    for label, base in ((0, g), (1, h)):
        for _ in range(heldout_draws):
            c = _relabeled(base, rng)
            c.y = label
            held.append(c)
    batch = GraphBatch(held, cfg.C)
    model = CompiledModel(cfg, batch)
    noise = None if cfg.variant == "MPNN" else batch.noise_from_seeds(tcfg.seed + 15485863, 0, cfg.noise)
    logits = model.forward(result.params, noise)
    labels = np.array([c.y for c in held])
    margin = (logits[np.arange(len(labels)), labels] - logits[np.arange(len(labels)), 1 - labels])
    return {
        "variant": cfg.variant,
        "wl_equivalent": True,
        "spectrally_distinct": distinct,
        "train_accuracy": train_acc,
        "heldout_accuracy": float((margin > 0).mean()),
        "heldout_min_margin": float(margin.min()),
        "final_train_loss": result.history.get("train", "loss"),
        "params": result.params,
    }
