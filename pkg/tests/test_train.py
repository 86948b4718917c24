import math

import numpy as np
import pytest

from engnn.autodiff import ExprGraph, evaluate as eval_expr, backward, l1_loss
from engnn.graphs import gen_csl, gen_erdos_renyi, permute_graph
from engnn.model import ConfigError, ModelConfig, init_model
from engnn.train import (AdamW, CSV_HEADER, MetricReport, NoisePolicy, TrainConfig, TrainingDiverged, cosine_lr,
                         counting_dataset, discrimination_experiment, evaluate, loss_value, metric_value, predict,
                         split_dataset, stack_targets, train)

SMALL = dict(layers=2, d=8, L=4, C=4, L0=4, L1=6, d1=8)


def test_loss_values():
    assert loss_value("L1", [1.0, 2.0], [1.0, 2.0]) == 0.0
    assert loss_value("cross_entropy", np.zeros((3, 2)), np.array([0, 1, 1])) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        loss_value("L1", [1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        loss_value("cross_entropy", np.zeros((2, 2)), np.array([0, 2]))


def test_metrics():
    y = np.array([0.0, 0.0, 2.0, 2.0])
    assert metric_value("NMAE", y, y) == 0.0
    assert metric_value("NMAE", np.ones(4), y) == pytest.approx(1.0)
    assert metric_value("MAE", np.ones(4), y) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        metric_value("NMAE", np.ones(3), np.ones(3))
    logits = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert metric_value("accuracy", logits, np.array([0, 1])) == 1.0
    assert metric_value("micro_f1", logits, np.array([1, 1])) == 0.5


def test_cosine_schedule_endpoints():
    assert cosine_lr(0.01, 0, 100) == 0.01
    assert cosine_lr(0.01, 100, 100) <= 1e-3 * 0.01
    lrs = [cosine_lr(1.0, t, 50) for t in range(51)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_adamw_basic_behaviour():
    p = {"w": np.array([1.0, -2.0])}
    opt = AdamW(p, weight_decay=0.1)
    opt.step(p, {"w": np.array([0.3, 0.4])}, lr=0.0)
    assert np.array_equal(p["w"], [1.0, -2.0])
    p = {"w": np.array([1.0])}
    opt = AdamW(p, weight_decay=0.0)
    opt.step(p, {"w": p["w"].copy()}, lr=0.1)  # f = w^2/2
    assert abs(p["w"][0]) < 1.0
    with pytest.raises(FloatingPointError):
        opt.step(p, {"w": np.array([np.nan])}, lr=0.1)


def test_adamw_fits_linear_regression(rng):
    x = rng.standard_normal((40, 2))
    y = x @ np.array([1.5, -0.5]) + 0.25
    expr = ExprGraph()
    xs = expr.leaf("x", (40, 2), differentiable=False)
    w, b = expr.leaf("w", (2, 1)), expr.leaf("b", (1,))
    pred = xs @ w + b.broadcast(40)
    err = pred - expr.const(y[:, None])
    loss = (err * err).sum(0).scale(1 / 40)
    params = {"w": np.zeros((2, 1)), "b": np.zeros(1)}
    opt = AdamW(params)
    for t in range(200):
        vals = eval_expr(expr, {**params, "x": x})
        opt.step(params, backward(expr, vals, output=loss.id), cosine_lr(0.1, t, 200))
    assert float(eval_expr(expr, {**params, "x": x})[loss.id][0]) < 1e-3


def _tiny_counting(n_graphs=24):
    return counting_dataset(n_graphs, 8, 0.4, "C3", seed=0)


def test_training_is_deterministic():
    cfg = ModelConfig(task_level="node", **SMALL)
    tcfg = TrainConfig(epochs=6, eval_every=2, seed=3)
    a = train(cfg, tcfg, _tiny_counting())
    b = train(cfg, tcfg, _tiny_counting())
    assert a.history.rows == b.history.rows
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    steps = [r for r in a.history.rows if r["split"] == "train" and "@" in r["run_id"]]
    assert len(steps) == 6


def test_zero_epochs_leaves_params_unchanged():
    cfg = ModelConfig(task_level="node", **SMALL)
    init = init_model(cfg, [5, 0])
    res = train(cfg, TrainConfig(epochs=0, seed=5), _tiny_counting())
    assert all(np.array_equal(init[k], res.params[k]) for k in init)


def test_minibatch_training_reduces_loss():
    cfg = ModelConfig(task_level="node", **SMALL)
    res = train(cfg, TrainConfig(epochs=15, batch_size=6, lr=5e-3, eval_every=5), _tiny_counting(40))
    losses = [r["value"] for r in res.history.rows if r["split"] == "train" and r["metric"] == "loss"
              and "@" in r["run_id"]]
    assert losses[-1] < losses[0]


def test_divergence_is_reported_with_epoch():
    cfg = ModelConfig(task_level="node", **SMALL)
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, TrainConfig(epochs=50, lr=1e200, seed=0), _tiny_counting())
    assert 0 <= info.value.epoch < 50


def test_target_compatibility():
    cfg = ModelConfig(task_level="node", **SMALL)
    g = gen_erdos_renyi(5, 0.5, 0)
    g.y = 1.0
    with pytest.raises(ConfigError):
        stack_targets(cfg, [g])
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epoch": 3})


def test_untrained_classifier_near_chance():
    cfg = ModelConfig(task_level="graph", out_dim=2, **SMALL)
    rng = np.random.default_rng(0)
    graphs = []
    for i in range(200):
        g = gen_erdos_renyi(7, 0.4, i)
        g.y = int(rng.integers(2))
        graphs.append(g)
    acc = evaluate("accuracy", cfg, init_model(cfg, 1), graphs, NoisePolicy(2))
    assert 0.35 <= acc <= 0.65


def test_evaluation_invariant_to_relabeling():
    data = _tiny_counting(10)
    rng = np.random.default_rng(4)
    perms = [rng.permutation(g.n) for g in data]
    moved = [permute_graph(g, p) for g, p in zip(data, perms)]
    # MPNN: noise plays no role
    cfg = ModelConfig(task_level="node", variant="MPNN", **SMALL)
    p = init_model(cfg, 0)
    a = evaluate("NMAE", cfg, p, data, NoisePolicy(3, seed=1))
    b = evaluate("NMAE", cfg, p, moved, NoisePolicy(3, seed=1))
    assert abs(a - b) < 1e-6
    # ENGNN: identical per-node noise follows each node through the relabeling
    cfg = ModelConfig(task_level="node", **SMALL)
    p = init_model(cfg, 0)
    draws = [np.concatenate([rng.random((g.n, cfg.C)) for g in data]) for _ in range(3)]
    offsets = np.concatenate([[0], np.cumsum([g.n for g in data])])
    moved_draws = []
    for z in draws:
        parts = []
        for g, perm, off in zip(data, perms, offsets):
            block = z[off:off + g.n]
            out = np.empty_like(block)
            out[perm] = block
            parts.append(out)
        moved_draws.append(np.concatenate(parts))
    a = evaluate("NMAE", cfg, p, data, NoisePolicy(explicit=draws))
    b = evaluate("NMAE", cfg, p, moved, NoisePolicy(explicit=moved_draws))
    assert abs(a - b) < 1e-6


def test_split_and_report_csv(tmp_path):
    tr, va, te = split_dataset(list(range(10)), [0.6, 0.2, 0.2], 0)
    assert sorted(tr + va + te) == list(range(10)) and len(tr) == 6
    rep = MetricReport()
    rep.add("r", "t", "ENGNN", "test", "NMAE", 0.5, 1)
    with pytest.raises(ValueError):
        rep.add("r", "t", "ENGNN", "test", "R2", 0.5, 1)
    rep.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert MetricReport.read_csv(tmp_path / "m.csv").rows == rep.rows


def test_discrimination_prechecks():
    cfg = ModelConfig(**SMALL)
    tcfg = TrainConfig(epochs=1)
    with pytest.raises(ValueError, match="WL"):
        discrimination_experiment(gen_csl(11, 2), gen_erdos_renyi(11, 0.4, 0), cfg, tcfg)
    g = gen_csl(11, 2)
    with pytest.raises(ValueError, match="non-isomorphic"):
        discrimination_experiment(g, permute_graph(g, np.arange(11)[::-1]), cfg, tcfg)


def test_mpnn_cannot_separate_csl():
    cfg = ModelConfig(variant="MPNN", **SMALL)
    rep = discrimination_experiment(gen_csl(11, 2), gen_csl(11, 3), cfg, TrainConfig(epochs=20, lr=1e-2),
                                    copies=4, heldout_draws=50)
    assert 0.4 <= rep["heldout_accuracy"] <= 0.6
