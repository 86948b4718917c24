"""Numerical self-checks: symmetry residuals, gradient audit, noise expectation, cover trends."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, evaluate, l1_loss
from .graphs import gen_erdos_renyi, inverse_perm, permute_graph
from .model import (CompiledModel, DualState, GraphBatch, ModelConfig, aggr_forward, aggr_shapes,
                    build_model, count_params, expectation_estimate, init_model, init_params, model_inputs,
                    mp_layer, pool, subset_head)
from .noise import covering_ratio_experiment


@dataclass
class CheckResult:
    name: str
    values: list = field(default_factory=list)
    passed: bool = True
    detail: str = ""

    @property
    def worst(self):
        return max(self.values) if self.values else 0.0


def relative_residual(a, b) -> float:
    """Max entrywise |a - b| / (|b| + eps), eps = 1e-6 * max|b| (guards exact zeros)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    eps = max(1e-6 * float(np.abs(b).max()), 1e-300)
    return float((np.abs(a - b) / (np.abs(b) + eps)).max())


def _permute_state(state: DualState, node_perm, chan_perm) -> DualState:
    """Node i moves to node_perm[i]; channel c of the result is channel chan_perm[c] of the input."""
    inv = inverse_perm(node_perm)
    return DualState(state.X[inv], state.Z[inv][:, :, chan_perm])


def equivariance_trial(rng, max_n: int = 30, max_C: int = 8) -> dict:
    """One randomized trial over the aggregator, message passing, pooling and subset readout."""
    n = int(rng.integers(2, max_n + 1))
    C = int(rng.integers(1, max_C + 1))
    d, L = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    cfg = ModelConfig(layers=2, d=d, L=L, C=C, L0=int(rng.integers(1, 5)), L1=int(rng.integers(1, 5)),
                      d1=int(rng.integers(1, 6)), in_dim=d, task_level="graph")
    params = init_model(cfg, rng.integers(2 ** 32))
    params.update(init_params(aggr_shapes("aggr", d, L, 3, 2, cfg.L0, cfg.L1, cfg.d1), rng.integers(2 ** 32)))
    sub_cfg = ModelConfig.from_dict({**cfg.to_dict(), "task_level": "subset"})
    params.update({k: v for k, v in init_model(sub_cfg, rng.integers(2 ** 32)).items() if k.startswith("sub")})

    g = gen_erdos_renyi(n, float(rng.uniform(0.1, 0.6)), rng.integers(2 ** 32))
    state = DualState(rng.standard_normal((n, d)), rng.standard_normal((n, L, C)))
    p1 = rng.permutation(n)
    p2 = rng.permutation(C)
    moved = _permute_state(state, p1, p2)
    out = {}

    X2, Z2 = aggr_forward(state.X, state.Z, params, "aggr")
    X2p, Z2p = aggr_forward(moved.X, moved.Z, params, "aggr")
    want = _permute_state(DualState(X2, Z2), p1, p2)
    out["aggr_forward"] = max(relative_residual(X2p, want.X), relative_residual(Z2p, want.Z))

    s2 = mp_layer(g, state, params, "mp1")
    s2p = mp_layer(permute_graph(g, p1), moved, params, "mp1")
    want = _permute_state(s2, p1, p2)
    out["mp_layer"] = max(relative_residual(s2p.X, want.X), relative_residual(s2p.Z, want.Z))

    out["pool"] = relative_residual(pool(moved, params, "pool"), pool(state, params, "pool"))

    U = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
    out["subset_head"] = relative_residual(subset_head(p1[U], moved, params), subset_head(U, state, params))
    return out


def check_equivariance(trials: int = 100, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("equivariance")
    for _ in range(trials):
        res.values.append(max(equivariance_trial(rng).values()))
    res.passed = res.worst < tol
    res.detail = f"max relative residual {res.worst:.3e} (tol {tol:g})"
    return res


def gradient_audit_config() -> ModelConfig:
    return ModelConfig(layers=2, d=8, L=4, C=3, L0=4, L1=4, d1=8, task_level="graph")


def gradient_audit(seed: int = 0, cfg: ModelConfig | None = None, h: float = 1e-5, n: int = 7) -> float:
    """Max |analytic - central FD| / max(1, |analytic|) over every parameter entry."""
    cfg = cfg or gradient_audit_config()
    rng = np.random.default_rng(seed)
    g = gen_erdos_renyi(n, 0.5, rng.integers(2 ** 32))
    batch = GraphBatch([g], cfg.C)
    expr, out = build_model(cfg, batch)
    loss = l1_loss(out, np.full(out.shape, 0.3))
    params = init_model(cfg, rng.integers(2 ** 32))
    # zero-initialised biases put ReLU inputs exactly on the kink for empty
    # neighbourhoods; audit at a generic point instead
    for name, p in params.items():
        if name.endswith(".b"):
            p += rng.uniform(-0.1, 0.1, size=p.shape)
    inputs = model_inputs(cfg, batch, batch.sample_noise(rng, cfg.noise))

    def f():
        return evaluate(expr, {**params, **inputs})[loss.id]

    values = evaluate(expr, {**params, **inputs})
    grads = backward(expr, values, output=loss.id)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(gflat[i] - fd) / max(1.0, abs(gflat[i])))
    return worst


def check_gradients(trials: int = 1, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    cfg = gradient_audit_config()
    res = CheckResult("gradients")
    for t in range(trials):
        res.values.append(gradient_audit(seed + t, cfg))
    res.passed = res.worst < tol
    res.detail = f"{count_params(init_model(cfg, 0))} params, max relative error {res.worst:.3e} (tol {tol:g})"
    return res


def check_expectation(pairs: int = 10, seed: int = 0, draws: int = 1024, n: int = 8) -> CheckResult:
    """Monte-Carlo means of a graph and a relabeled copy agree within 3 combined standard errors."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(layers=2, d=8, L=4, C=4, L0=4, L1=4, d1=8, task_level="graph")
    res = CheckResult("expectation")
    for _ in range(pairs):
        g = gen_erdos_renyi(n, 0.4, rng.integers(2 ** 32))
        h = permute_graph(g, rng.permutation(n))
        params = init_model(cfg, rng.integers(2 ** 32))
        m1, s1 = expectation_estimate(cfg, g, params, draws, rng.integers(2 ** 32))
        m2, s2 = expectation_estimate(cfg, h, params, draws, rng.integers(2 ** 32))
        diff, se = np.abs(m1 - m2), np.sqrt(s1 ** 2 + s2 ** 2)
        z = np.divide(diff, se, out=np.where(diff > 0, np.inf, 0.0), where=se > 0)
        res.values.append(float(z.max()))
    res.passed = res.worst <= 3.0
    res.detail = f"max |mean difference| / combined stderr {res.worst:.3f} (limit 3)"
    return res


def check_covering(trials: int = 1, seed: int = 0, samples: int = 2000, orders: int = 8):
    """Cover-size inequality on a radius grid for C in {1, 2}, plus the C=2 mid-radius ratio."""
    res = CheckResult("covering")
    rows_out = []
    ok = True
    for t in range(trials):
        for C in (1, 2):
            rows = covering_ratio_experiment(2, C, samples, [0.1, 0.2, 0.3, 0.5, 0.8, "mid"], seed + t,
                                             orders=orders)
            for r in rows:
                rows_out.append({"C": C, **r})
                ok &= r["n_perm"] <= r["n_raw"]
            mid = rows[-1]["ratio"]
            res.values.append(mid)
            if C == 1:
                ok &= all(r["ratio"] == 1.0 for r in rows)
            else:
                ok &= 0.4 <= mid <= 0.6
    res.passed = bool(ok)
    res.detail = "n_perm <= n_raw on every row; C=1 ratio 1; C=2 mid ratio in [0.4, 0.6]"
    return res, rows_out


def forward_twice_identical(cfg: ModelConfig, seed: int = 0) -> bool:
    """Evaluation is a pure function of (params, graph, noise)."""
    rng = np.random.default_rng(seed)
    g = gen_erdos_renyi(8, 0.4, seed)
    batch = GraphBatch([g], cfg.C)
    model = CompiledModel(cfg, batch)
    params = init_model(cfg, seed)
    noise = batch.sample_noise(rng, cfg.noise)
    return np.array_equal(model.forward(params, noise), model.forward(params, noise))
