"""Desk-scale experiment drivers.

Each driver returns plain rows (lists of dicts) plus a small summary so the
same code feeds the CLI, the demo scripts and the acceptance tests. Work is
split into independent cells keyed by (trees, replicate); every cell draws
from its own Philox stream, so results do not depend on execution order or
thread count. ``TREETANGENT_THREADS`` caps the thread pool.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, duplicate_rows, make_folds
from .ensemble import empirical_ntk, init_params, kernel_drift, make_rng, start_training, train_gd
from .kernels import LeafProfile, ScaledErf, cross_gram, gram, kernel, normalized_kernel
from .linearized import analytic_dynamics, classify, eig_sym, krr_fit, one_hot, predict
from .topology import TreeTopology, decision_list, perfect_binary, profile_of, rule_set

__all__ = [
    "ResourceCapError",
    "ConfigError",
    "DEFAULT_MAX_PARAMS",
    "beta_grid",
    "toy_problem",
    "simulation_topology",
    "analytic_arch",
    "kernel_curve",
    "convergence",
    "depth_sweep",
    "train_compare",
    "drift",
    "regress",
    "loglog_slope",
]

DEFAULT_MAX_PARAMS = 10**8


class ConfigError(ValueError):
    pass


class ResourceCapError(RuntimeError):
    pass


def _threads() -> int:
    raw = os.environ.get("TREETANGENT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"TREETANGENT_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _map(fn, cells):
    cells = list(cells)
    n = min(_threads(), len(cells))
    if n <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, cells))


def beta_grid(points: int = 64) -> np.ndarray:
    if points < 2:
        raise ConfigError("grid needs at least two points")
    return np.linspace(0.0, math.pi, points)


def _beta_inputs(betas):
    return np.array([1.0, 0.0]), np.c_[np.cos(betas), np.sin(betas)]


def loglog_slope(ms, values) -> float:
    """Least-squares slope of log(values) against log(ms)."""
    return float(np.polyfit(np.log(np.asarray(ms, float)), np.log(np.asarray(values, float)), 1)[0])


def toy_problem(seed: int = 0, n_train: int = 10, n_probe: int = 10, n_features: int = 5):
    """Random unit-norm training inputs, probe inputs and standard normal targets."""
    rng = make_rng([seed, 1])
    x = rng.standard_normal((n_train, n_features))
    p = rng.standard_normal((n_probe, n_features))
    y = rng.standard_normal(n_train)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return x, p, y


def simulation_topology(arch, depth=None) -> TreeTopology:
    if isinstance(arch, TreeTopology):
        return arch
    builders = {"pb": perfect_binary, "dl": decision_list, "rule": rule_set}
    if arch not in builders:
        raise ConfigError(f"architecture {arch!r} cannot be simulated; use pb, dl, rule or a topology")
    if depth is None or depth < 1:
        raise ConfigError(f"architecture {arch!r} needs a positive depth")
    return builders[arch](int(depth))


def analytic_arch(arch):
    """Selector for the closed-form kernel matching a simulated architecture."""
    if isinstance(arch, TreeTopology):
        return profile_of(arch)
    return arch


def _check_params(topo, trees, n_features, max_params):
    per_tree = n_features * topo.n_nodes + topo.n_leaves
    worst = max(trees) * per_tree
    if worst > max_params:
        raise ResourceCapError(
            f"{max(trees)} trees x {per_tree} parameters = {worst} exceeds the cap of {int(max_params)}"
        )


def _check_trees(trees):
    trees = [int(m) for m in trees]
    if not trees or any(m < 1 for m in trees):
        raise ConfigError("tree counts must be a non-empty list of positive integers")
    if trees != sorted(trees):
        raise ConfigError("tree counts must be ascending")
    return trees


# ---------------------------------------------------------------------------


@dataclass
class Result:
    rows: list
    summary: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def kernel_curve(arch="pb", depth=5, alpha=2.0, grid_points=64) -> Result:
    """Analytic kernel between (1, 0) and (cos b, sin b) over b in [0, pi]."""
    f = ScaledErf(alpha)
    betas = beta_grid(grid_points)
    xi, xj = _beta_inputs(betas)
    values = np.atleast_1d(kernel(f, arch, xi, xj, depth))
    normed = np.atleast_1d(normalized_kernel(f, arch, xi, xj, depth))
    rows = [
        {"beta": float(b), "kernel": float(v), "normalized": float(n)}
        for b, v, n in zip(betas, values, normed)
    ]
    return Result(rows)


def convergence(arch="pb", depth=5, alpha=2.0, trees=(16, 64, 256, 1024, 4096), seeds=10,
                grid_points=64, seed=0, max_params=DEFAULT_MAX_PARAMS) -> Result:
    """Empirical NTK of finite ensembles against the limiting kernel on the beta grid.

    ``summary`` holds, per tree count, the median over replicates of the RMS
    deviation across the grid; ``info["slope"]`` is its log-log slope in M.
    """
    trees = _check_trees(trees)
    topo = simulation_topology(arch, depth)
    _check_params(topo, trees, 2, max_params)
    f = ScaledErf(alpha)
    betas = beta_grid(grid_points)
    xi, xj = _beta_inputs(betas)
    analytic = np.atleast_1d(kernel(f, analytic_arch(arch), xi, xj, depth))
    inputs = np.vstack([xi, xj])

    def cell(c):
        m, rep = c
        params = init_params(topo, m, 2, seed=(seed, m, rep))
        return empirical_ntk(topo, f, params, inputs).values[0, 1:]

    cells = [(m, rep) for m in trees for rep in range(seeds)]
    empirical = _map(cell, cells)
    rows, devs = [], {}
    for (m, rep), emp in zip(cells, empirical):
        devs.setdefault(m, []).append(float(np.sqrt(np.mean((emp - analytic) ** 2))))
        for b, e, a in zip(betas, emp, analytic):
            rows.append({"trees": m, "seed": rep, "beta": float(b), "empirical": float(e), "analytic": float(a)})
    summary = [
        {"trees": m, "median_rms_deviation": float(np.median(devs[m])), "analytic_rms": float(np.sqrt(np.mean(analytic**2)))}
        for m in trees
    ]
    slope = loglog_slope(trees, [s["median_rms_deviation"] for s in summary]) if len(trees) > 1 else float("nan")
    return Result(rows, summary, {"slope": slope, "deviations": devs})


def depth_sweep(alpha=2.0, depths=(1, 2, 4, 8, 16, 32, 64, 128), grid_points=64) -> Result:
    """Normalized PB and DL kernels over the beta grid per depth, plus the DL infinite-depth line."""
    f = ScaledErf(alpha)
    betas = beta_grid(grid_points)
    xi, xj = _beta_inputs(betas)
    rows = []
    for d in depths:
        if d < 1:
            raise ConfigError("depths must be >= 1")
        for arch in ("pb", "dl"):
            vals = np.atleast_1d(normalized_kernel(f, arch, xi, xj, d))
            rows += [{"arch": arch, "depth": str(d), "beta": float(b), "normalized": float(v)} for b, v in zip(betas, vals)]
    vals = np.atleast_1d(normalized_kernel(f, "dlinf", xi, xj))
    rows += [{"arch": "dlinf", "depth": "inf", "beta": float(b), "normalized": float(v)} for b, v in zip(betas, vals)]
    return Result(rows)


def _stable_eta(f, arch, x, eta, depth=None):
    summary, _, _ = eig_sym(gram(f, arch, x, depth))
    if not eta < summary.eta_max:
        raise ConfigError(
            f"learning rate {eta} is not below 2/(lambda_min + lambda_max) = {summary.eta_max:.4g}"
        )
    return summary


def train_compare(topo_a: TreeTopology, topo_b: TreeTopology, trees=(16, 4096), eta=0.1, steps=200,
                  seeds=5, seed=0, alpha=2.0, max_params=DEFAULT_MAX_PARAMS) -> Result:
    """Train two architectures on the same toy problem and compare probe trajectories.

    ``info`` carries ``trajectories[(name, M, rep)]`` (steps + 1, n_probe)
    and the analytic trajectories per architecture, both continuous-time
    (``flow_*``) and discrete-step (``steps_*``). Summary rows give, per
    (M, rep), the max gap between the two architectures and between each
    architecture and the discrete-step analytic trajectory.
    """
    trees = _check_trees(trees)
    f = ScaledErf(alpha)
    x, probes, y = toy_problem(seed)
    for t in (topo_a, topo_b):
        _check_params(t, trees, x.shape[1], max_params)
    taus = np.arange(steps + 1)
    analytic = {}
    for name, topo in (("A", topo_a), ("B", topo_b)):
        q = profile_of(topo)
        _stable_eta(f, q, x, eta)
        h = gram(f, q, x)
        hc = cross_gram(f, q, probes, x)
        analytic[f"flow_{name}"] = analytic_dynamics(h, hc, y, eta, taus)
        analytic[f"steps_{name}"] = analytic_dynamics(h, hc, y, eta, taus, discrete=True)

    def cell(c):
        name, m, rep = c
        topo = topo_a if name == "A" else topo_b
        params = init_params(topo, m, x.shape[1], seed=(seed, m, rep, 0 if name == "A" else 1))
        state = start_training(topo, f, params, eta, x, probes)
        _, log = train_gd(topo, f, state, x, y, steps, probes)
        return log

    cells = [(name, m, rep) for m in trees for rep in range(seeds) for name in ("A", "B")]
    trajectories = dict(zip(cells, _map(cell, cells)))
    summary = []
    for m in trees:
        for rep in range(seeds):
            ta, tb = trajectories[("A", m, rep)], trajectories[("B", m, rep)]
            summary.append({
                "trees": m,
                "seed": rep,
                "gap_ab": float(np.max(np.abs(ta - tb))),
                "gap_a_analytic": float(np.max(np.abs(ta - analytic["steps_A"]))),
                "gap_b_analytic": float(np.max(np.abs(tb - analytic["steps_B"]))),
                "gap_a_flow": float(np.max(np.abs(ta - analytic["flow_A"]))),
            })
    rows = []
    for (name, m, rep), log in trajectories.items():
        for step in range(log.shape[0]):
            for pid in range(log.shape[1]):
                rows.append({"topology": name, "trees": m, "seed": rep, "step": step, "probe_id": pid,
                             "output": float(log[step, pid])})
    return Result(rows, summary, {"trajectories": trajectories, "analytic": analytic, "taus": taus})


def drift(arch="pb", depth=3, trees=(16, 64, 256, 1024, 4096), eta=0.1, steps=100, seeds=10,
          seed=0, alpha=2.0, max_params=DEFAULT_MAX_PARAMS) -> Result:
    """Sup-norm change of the empirical NTK on the training inputs after ``steps`` GD steps.

    ``info["exponent"]`` is the log-log slope of the median drift in M.
    """
    trees = _check_trees(trees)
    topo = simulation_topology(arch, depth)
    f = ScaledErf(alpha)
    x, _, y = toy_problem(seed)
    _check_params(topo, trees, x.shape[1], max_params)
    spectral = _stable_eta(f, profile_of(topo), x, eta)

    def cell(c):
        m, rep = c
        params = init_params(topo, m, x.shape[1], seed=(seed, m, rep))
        before = empirical_ntk(topo, f, params, x)
        state, _ = train_gd(topo, f, start_training(topo, f, params, eta, x), x, y, steps)
        after = empirical_ntk(topo, f, state.params, x)
        return kernel_drift(before, after)

    cells = [(m, rep) for m in trees for rep in range(seeds)]
    values = _map(cell, cells)
    rows = [{"trees": m, "seed": rep, "drift": float(v)} for (m, rep), v in zip(cells, values)]
    summary = [{"trees": m, "median_drift": float(np.median([r["drift"] for r in rows if r["trees"] == m]))} for m in trees]
    medians = [s["median_drift"] for s in summary]
    exponent = loglog_slope(trees, medians) if len(trees) > 1 and min(medians) > 0 else float("nan")
    return Result(rows, summary, {"exponent": exponent, "eta_max": spectral.eta_max})


def _cv_score(d: Dataset, f, arch, depth, plan, lam):
    scores = []
    for train, test in plan.folds():
        xt, xv = d.features[train], d.features[test]
        h = gram(f, arch, xt, depth)
        hc = cross_gram(f, arch, xv, xt, depth)
        if d.categorical:
            fit = krr_fit(h, one_hot(d.labels[train], d.n_classes), lam)
            scores.append(float(np.mean(classify(fit, hc, d.n_classes) == d.labels[test])))
        else:
            fit = krr_fit(h, d.labels[train], lam)
            err = predict(fit, hc) - d.labels[test]
            scores.append(float(np.sqrt(np.mean(err**2))))
    return float(np.mean(scores))


def regress(d: Dataset, archs=("pb", "dl"), depths=(2, 4, 8, 16, 32, 64, 128),
            alphas=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0), k=4, lam=1e-8, seed=0, include_dlinf=True) -> Result:
    """k-fold kernel regression with the limiting NTK over an (arch, depth, alpha) grid.

    The metric is mean fold accuracy for categorical labels (one-hot
    regression, argmax decoding) and mean fold RMSE for real targets.
    """
    plan = make_folds(d, k, seed)
    metric = "accuracy" if d.categorical else "rmse"
    settings = []
    for a in archs:
        if isinstance(a, TreeTopology):
            a = profile_of(a)
        if isinstance(a, LeafProfile):
            settings += [(a, None, al) for al in alphas]
        else:
            settings += [(a, dep, al) for dep in depths for al in alphas]
    if include_dlinf:
        settings += [("dlinf", None, al) for al in alphas]
    rows = []
    for arch, depth, alpha in settings:
        score = _cv_score(d, ScaledErf(alpha), arch, depth, plan, lam)
        if isinstance(arch, LeafProfile):
            label, depth = "profile", arch.max_depth
        else:
            label = arch
        rows.append({"arch": label, "depth": "" if depth is None else depth, "alpha": alpha, metric: score})
    return Result(rows, info={"lambda": lam, "metric": metric, "folds": k,
                              "duplicates": len(duplicate_rows(d.features))})
