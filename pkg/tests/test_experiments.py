import numpy as np
import pytest

from treetangent import LeafProfile, shared_profile_pair, pb_ntk, ScaledErf, separable_classes
from treetangent.experiments import (
    ConfigError,
    ResourceCapError,
    beta_grid,
    convergence,
    depth_sweep,
    drift,
    kernel_curve,
    loglog_slope,
    regress,
    train_compare,
)


def test_beta_grid_and_slope():
    g = beta_grid(64)
    assert g[0] == 0 and g[-1] == pytest.approx(np.pi) and len(g) == 64
    with pytest.raises(ConfigError):
        beta_grid(1)
    assert loglog_slope([1, 10, 100], [1, 0.1, 0.01]) == pytest.approx(-1.0)


def test_kernel_curve_rows():
    res = kernel_curve("pb", 3, 2.0, 5)
    assert [r["beta"] for r in res.rows] == pytest.approx(beta_grid(5))
    assert res.rows[0]["normalized"] == pytest.approx(1.0)
    x = np.array([np.cos(res.rows[2]["beta"]), np.sin(res.rows[2]["beta"])])
    assert res.rows[2]["kernel"] == pytest.approx(pb_ntk(ScaledErf(2.0), 3, np.array([1.0, 0.0]), x))


def test_convergence_small_run_is_deterministic():
    a = convergence("pb", 2, 2.0, (4, 64), seeds=3, grid_points=6)
    b = convergence("pb", 2, 2.0, (4, 64), seeds=3, grid_points=6)
    assert a.rows == b.rows
    assert len(a.rows) == 2 * 3 * 6 and len(a.summary) == 2
    assert a.summary[1]["median_rms_deviation"] < a.summary[0]["median_rms_deviation"]


def test_convergence_rejects_bad_configs():
    with pytest.raises(ConfigError):
        convergence("pb", 2, trees=(64, 16), seeds=1, grid_points=4)
    with pytest.raises(ConfigError):
        convergence("dlinf", None, trees=(4,), seeds=1, grid_points=4)
    with pytest.raises(ResourceCapError):
        convergence("pb", 5, trees=(4096,), seeds=1, grid_points=4, max_params=1000)


def test_depth_sweep_contains_infinite_line():
    res = depth_sweep(2.0, (1, 4), 5)
    assert {(r["arch"], r["depth"]) for r in res.rows} == {("pb", "1"), ("dl", "1"), ("pb", "4"), ("dl", "4"),
                                                           ("dlinf", "inf")}


def test_train_compare_small():
    a, b = shared_profile_pair()
    res = train_compare(a, b, trees=(4, 8), steps=3, seeds=2)
    assert len(res.summary) == 4
    assert np.array_equal(res.info["analytic"]["steps_A"], res.info["analytic"]["steps_B"])
    assert res.info["trajectories"][("A", 4, 0)].shape == (4, 10)
    with pytest.raises(ConfigError):
        train_compare(a, b, trees=(4,), eta=5.0, steps=1, seeds=1)


def test_drift_zero_steps_is_zero():
    res = drift("pb", 2, trees=(4, 16), steps=0, seeds=2)
    assert all(r["drift"] == 0.0 for r in res.rows)


def test_regress_grid_and_metric():
    d = separable_classes(40, 4, 0.2, seed=2)
    res = regress(d, archs=("pb", LeafProfile({2: 2, 3: 4})), depths=(2,), alphas=(2.0,))
    assert [(r["arch"], r["depth"]) for r in res.rows] == [("pb", 2), ("profile", 3), ("dlinf", "")]
    assert res.info["metric"] == "accuracy" and res.info["lambda"] == 1e-8
    assert all(0.9 <= r["accuracy"] <= 1.0 for r in res.rows)
