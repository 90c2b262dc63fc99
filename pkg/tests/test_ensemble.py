import math

import numpy as np
import pytest
import sympy

from treetangent import (
    DivergenceError,
    EnsembleParams,
    KernelMatrix,
    ScaledErf,
    decision_list,
    empirical_ntk,
    shared_profile_pair,
    forward,
    gram,
    init_params,
    jacobian,
    kernel_drift,
    leaf_probabilities,
    mirror,
    mu,
    perfect_binary,
    profile_of,
    rule_set,
    start_training,
    train_gd,
)

from oracles import finite_difference

F2 = ScaledErf(2.0)
TOPOLOGIES = {
    "pb3": perfect_binary(3),
    "dl4": decision_list(4),
    "rule3": rule_set(3),
    "pairA": shared_profile_pair()[0],
    "pairB": shared_profile_pair()[1],
}


def _inputs(n, f, seed):
    x = np.random.default_rng(seed).standard_normal((n, f))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.mark.parametrize("name", sorted(TOPOLOGIES))
def test_jacobian_matches_finite_differences(name):
    topo = TOPOLOGIES[name]
    params = init_params(topo, 3, 4, seed=(7, 3))
    xs = _inputs(2, 4, 1)
    num = finite_difference(lambda th: forward(topo, F2, params.with_flat(th), xs), params.flat)
    ana = jacobian(topo, F2, params, xs)
    assert ana.shape == (2, params.size)
    assert np.max(np.abs(ana - num)) < 1e-8 * max(1.0, np.max(np.abs(num)))
    assert np.allclose(jacobian(topo, F2, params, xs[0]), ana[0])


def test_forward_matches_per_path_products():
    topo = shared_profile_pair()[1]
    params = init_params(topo, 5, 3, seed=2)
    x = _inputs(1, 3, 4)[0]
    total = sum(
        params.pi[m, l] * mu(topo, F2, params.w[m], x, l + 1)
        for m in range(5)
        for l in range(topo.n_leaves)
    )
    assert forward(topo, F2, params, x) == pytest.approx(total / math.sqrt(5), rel=1e-13)
    probs = leaf_probabilities(topo, F2, params, x)
    assert probs.shape == (5, topo.n_leaves)
    assert probs[2, 4] == pytest.approx(mu(topo, F2, params.w[2], x, 5), rel=1e-14)


@pytest.mark.parametrize("name", ["pb3", "dl4", "pairA"])
def test_leaf_probabilities_sum_to_one(name):
    topo = TOPOLOGIES[name]
    params = init_params(topo, 4, 3, seed=9)
    probs = leaf_probabilities(topo, F2, params, _inputs(6, 3, 2))
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-14)


def test_deep_left_chain_keeps_tiny_outputs_exact():
    # every split far on the wrong side: output is tiny but must not round to 0
    topo = rule_set(3)
    params = EnsembleParams(np.full((1, 1, 3), -1.0), np.array([[1.0]]))
    x = np.array([1.0])
    out = forward(topo, ScaledErf(8.0), params, x)
    assert out == pytest.approx((0.5 * math.erfc(8.0)) ** 3, rel=1e-12)
    num = finite_difference(lambda th: forward(topo, ScaledErf(8.0), params.with_flat(th), x), params.flat, h=1e-6)
    assert np.allclose(jacobian(topo, ScaledErf(8.0), params, x), num[0], rtol=1e-6)


def test_mu_rejects_bad_leaf_id():
    topo = perfect_binary(2)
    w = init_params(topo, 1, 2).w[0]
    for bad in (0, 5):
        with pytest.raises(ValueError):
            mu(topo, F2, w, np.ones(2), bad)


def test_large_alpha_routes_almost_deterministically():
    topo = perfect_binary(3)
    params = init_params(topo, 20, 3, seed=1)
    probs = leaf_probabilities(topo, ScaledErf(64.0), params, _inputs(5, 3, 3))
    # most (tree, input) pairs put nearly all mass on one leaf
    assert np.median(probs.max(axis=-1)) > 0.99


def test_single_split_matches_symbolic_gradient():
    a, x0, x1, p1, p2, u0, u1, m = sympy.symbols("alpha x0 x1 pi1 pi2 u0 u1 M", positive=True)
    s = sympy.erf(a * (u0 * x0 + u1 * x1)) / 2 + sympy.Rational(1, 2)
    out = (p1 * s + p2 * (1 - s)) / sympy.sqrt(m)
    zero = {u0: 0, u1: 0}
    grads = [sympy.diff(out, v).subs(zero) for v in (u0, u1, p1, p2)]
    # at w = 0 the split gradient is (pi1 - pi2) x alpha / sqrt(pi M)
    assert sympy.simplify(grads[0] - (p1 - p2) * x0 * a / sympy.sqrt(sympy.pi * m)) == 0
    assert sympy.simplify(grads[2] - 1 / (2 * sympy.sqrt(m))) == 0

    vals = {a: 2.0, x0: 0.6, x1: 0.8, p1: 1.3, p2: -0.4, m: 1}
    topo = perfect_binary(1)
    params = EnsembleParams(np.zeros((1, 2, 1)), np.array([[1.3, -0.4]]))
    jac = jacobian(topo, F2, params, np.array([0.6, 0.8]))
    expected = [float(g.subs(vals)) for g in grads]
    assert np.allclose(jac, expected, rtol=1e-14)


def test_duplicating_trees_scales_output_and_keeps_kernel():
    topo = shared_profile_pair()[0]
    params = init_params(topo, 6, 3, seed=4)
    doubled = EnsembleParams(np.concatenate([params.w] * 2), np.concatenate([params.pi] * 2))
    xs = _inputs(4, 3, 5)
    assert np.allclose(forward(topo, F2, doubled, xs), math.sqrt(2) * forward(topo, F2, params, xs), rtol=1e-13)
    assert np.allclose(empirical_ntk(topo, F2, doubled, xs).values, empirical_ntk(topo, F2, params, xs).values,
                       rtol=1e-12)


def test_mirror_with_negated_weights_is_the_same_model():
    topo = shared_profile_pair()[0]
    flipped = mirror(topo)
    xs = _inputs(5, 3, 6)
    for seed in range(50):
        params = init_params(topo, 2, 3, seed=seed)
        neg = EnsembleParams(-params.w, params.pi)
        assert np.allclose(forward(flipped, F2, neg, xs), forward(topo, F2, params, xs), rtol=1e-12, atol=1e-14)


def test_init_moments_and_determinism():
    topo = perfect_binary(2)
    params = init_params(topo, 4000, 5, seed=(3, 4000, 0))
    for arr in (params.w.ravel(), params.pi.ravel()):
        assert abs(arr.mean()) < 4 / math.sqrt(arr.size)
        assert abs(arr.var() - 1) < 5 * math.sqrt(2 / arr.size)
    again = init_params(topo, 4000, 5, seed=(3, 4000, 0))
    assert np.array_equal(again.w, params.w) and np.array_equal(again.pi, params.pi)
    other = init_params(topo, 4000, 5, seed=(3, 4000, 1))
    assert not np.array_equal(other.w, params.w)


def test_params_shape_checks():
    topo = perfect_binary(2)
    with pytest.raises(ValueError):
        init_params(topo, 0, 3)
    params = init_params(topo, 2, 3)
    with pytest.raises(ValueError):
        forward(perfect_binary(3), F2, params, np.ones(3))
    with pytest.raises(ValueError):
        forward(topo, F2, params, np.ones(4))
    with pytest.raises(ValueError):
        params.with_flat(np.zeros(params.size + 1))


def test_empirical_ntk_is_jacobian_gram():
    topo = decision_list(3)
    params = init_params(topo, 7, 4, seed=1)
    xs = _inputs(5, 4, 7)
    j = jacobian(topo, F2, params, xs)
    h = empirical_ntk(topo, F2, params, xs)
    assert isinstance(h, KernelMatrix) and h.provenance == "empirical(7)" and h.n_trees == 7
    assert np.allclose(h.values, j @ j.T, rtol=1e-12, atol=1e-14)
    assert np.array_equal(h.values, h.values.T)


@pytest.mark.parametrize("topo", [perfect_binary(2), shared_profile_pair()[1], rule_set(2)], ids=["pb2", "pairB", "rule2"])
def test_empirical_ntk_mean_matches_limit(topo):
    # Monte Carlo over independent ensembles: the mean is the limiting kernel
    xs = _inputs(3, 3, 8)
    samples = np.array([empirical_ntk(topo, F2, init_params(topo, 256, 3, seed=(11, r)), xs).values
                        for r in range(40)])
    mean, se = samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    limit = gram(F2, profile_of(topo), xs).values
    assert np.all(np.abs(mean - limit) < 4.5 * se + 1e-12)


def test_one_step_of_gd_is_a_jacobian_step():
    topo = shared_profile_pair()[0]
    params = init_params(topo, 3, 3, seed=5)
    xs, ys = _inputs(4, 3, 1), np.array([0.5, -1.0, 0.2, 0.3])
    state = start_training(topo, F2, params, 0.05, xs)
    new, log = train_gd(topo, F2, state, xs, ys, 1)
    resid = forward(topo, F2, params, xs) - state.shift_train - ys
    expected = params.flat - 0.05 * jacobian(topo, F2, params, xs).T @ resid
    assert np.allclose(new.params.flat, expected, rtol=1e-13, atol=1e-15)
    assert new.step == 1 and log.shape == (2, 0)
    assert np.array_equal(state.params.flat, params.flat)  # input state untouched


def test_training_reduces_loss_and_logs_probes():
    topo = perfect_binary(2)
    params = init_params(topo, 64, 3, seed=2)
    xs, probes = _inputs(6, 3, 2), _inputs(3, 3, 3)
    ys = np.random.default_rng(0).standard_normal(6)
    state = start_training(topo, F2, params, 0.1, xs, probes)
    new, log = train_gd(topo, F2, state, xs, ys, 30, probes)
    assert log.shape == (31, 3) and np.all(log[0] == 0)
    fit = forward(topo, F2, new.params, xs) - state.shift_train
    assert np.sum((fit - ys) ** 2) < 0.5 * np.sum(ys**2)
    with pytest.raises(ValueError):
        state.shift_train[0] = 1.0


def test_divergence_is_reported():
    topo = perfect_binary(2)
    params = init_params(topo, 16, 3, seed=0)
    xs, ys = _inputs(6, 3, 2), np.ones(6)
    state = start_training(topo, F2, params, 50.0, xs)
    with pytest.raises(DivergenceError):
        train_gd(topo, F2, state, xs, ys, 50)


def test_drift_zero_without_training_and_checks_inputs():
    topo = perfect_binary(2)
    params = init_params(topo, 8, 3, seed=0)
    xs = _inputs(4, 3, 0)
    state = start_training(topo, F2, params, 0.1, xs)
    new, _ = train_gd(topo, F2, state, xs, np.zeros(4), 0)
    before = empirical_ntk(topo, F2, params, xs)
    assert kernel_drift(before, empirical_ntk(topo, F2, new.params, xs)) == 0.0
    with pytest.raises(ValueError):
        kernel_drift(before, empirical_ntk(topo, F2, params, xs[:3]))
    with pytest.raises(ValueError):
        kernel_drift(before, empirical_ntk(topo, F2, init_params(topo, 9, 3), xs))
    with pytest.raises(ValueError):
        start_training(topo, F2, params, 0.0, xs)
