import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efhc.analysis import (
    bernoulli_bound_check,
    fit_rate,
    plateau_level,
    tradeoff_table,
    tradeoff_to_csv,
)
from efhc.engine import MetricsTrace


def make_trace(times, gaps):
    K = len(times)
    nan = np.full(K, np.nan)
    return MetricsTrace(
        k=np.arange(K),
        consensus_error=np.asarray(gaps, dtype=float),
        optimality_gap=np.asarray(gaps, dtype=float),
        broadcasts=np.zeros(K, dtype=int),
        transmission_score=np.zeros(K),
        cumulative_time=np.asarray(times, dtype=float),
        mean_accuracy=nan,
    )


def test_fit_rate_recovers_planted_power_law():
    k = np.arange(5001, dtype=float)
    values = np.empty_like(k)
    values[0] = 1.0
    values[1:] = 3.0 * k[1:] ** -0.5
    fit = fit_rate(values, 100, 4000)
    assert fit.slope == pytest.approx(-0.5, abs=1e-9)
    assert np.exp(fit.intercept) == pytest.approx(3.0, rel=1e-9)
    assert fit.residual_rms < 1e-12


def test_fit_rate_windowing_and_validation():
    values = np.arange(1.0, 100.0)
    with pytest.raises(ValueError, match="k_lo"):
        fit_rate(values, 0, 50)
    with pytest.raises(ValueError, match="beyond"):
        fit_rate(values, 10, 500)
    with pytest.raises(ValueError, match="fewer than 10"):
        fit_rate(values, 10, 15)
    values[20] = 0.0
    with pytest.raises(ValueError, match="positive"):
        fit_rate(values, 10, 50)
    values[20] = np.nan
    with pytest.raises(ValueError, match="finite"):
        fit_rate(values, 10, 50)


def test_fit_rate_noisy_slope_within_tolerance():
    rng = np.random.default_rng(0)
    k = np.arange(1, 20001, dtype=float)
    values = 2.0 * k**-0.7 * np.exp(0.05 * rng.standard_normal(k.size))
    fit = fit_rate(values, 1000, 19999)
    assert fit.slope == pytest.approx(-0.7, abs=0.02)


def test_plateau_level():
    values = np.concatenate([np.linspace(10, 1, 80), np.full(20, 0.5)])
    assert plateau_level(values, 0.2) == pytest.approx(0.5)
    assert plateau_level(np.array([3.0])) == 3.0
    with pytest.raises(ValueError, match="empty"):
        plateau_level(np.array([]))
    with pytest.raises(ValueError, match="tail_fraction"):
        plateau_level(np.ones(10), 0.7)


def test_bernoulli_bound_frozen_example():
    # constant 1/2 sequence with p = 1 over a single index:
    # (1 - 1/2)^1 = 0.5 and 1 / (1 * 1/2) = 2
    assert bernoulli_bound_check([0.5, 0.5, 0.5], 1.0, 1, 1)
    # longer window: (1/2)^4 = 0.0625 <= 1 / 2
    assert bernoulli_bound_check([0.5] * 5, 1.0, 0, 3)


def test_bernoulli_bound_validation():
    with pytest.raises(ValueError, match="p must be"):
        bernoulli_bound_check([0.5], 0.5, 0, 0)
    with pytest.raises(ValueError, match="0 <= s <= k"):
        bernoulli_bound_check([0.5, 0.5], 1.0, 1, 0)
    with pytest.raises(ValueError, match="beyond"):
        bernoulli_bound_check([0.5], 1.0, 0, 3)
    with pytest.raises(ValueError, match="zeta"):
        bernoulli_bound_check([0.0, 0.5], 1.0, 0, 1)


@given(
    st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=40),
    st.floats(1.0, 50.0),
)
@settings(max_examples=300, deadline=None)
def test_bernoulli_bound_holds_for_random_sequences(zetas, p):
    assert bernoulli_bound_check(zetas, p, 0, len(zetas) - 1)


def test_tradeoff_table_grid_and_best_so_far():
    # policy "a" is slower per unit time but reaches lower values late;
    # the table must report the running best at each shared grid time
    a = make_trace(times=[1, 2, 3, 4], gaps=[8.0, 4.0, 2.0, 1.0])
    b = make_trace(times=[2, 4, 6, 8], gaps=[6.0, 5.0, 0.5, 0.1])
    grid, table = tradeoff_table({"a": a, "b": b}, points=4)
    assert grid[-1] == pytest.approx(4.0)  # the smallest final time wins
    assert np.allclose(grid, [1.0, 2.0, 3.0, 4.0])
    assert np.allclose(table["a"], [8.0, 4.0, 2.0, 1.0])
    # at time 3 policy b has only reached its first point, so its best is 6;
    # the second point arrives exactly at the final grid time
    assert np.allclose(table["b"], [np.nan, 6.0, 6.0, 5.0], equal_nan=True)
    # best-so-far never increases
    for vals in table.values():
        finite = vals[np.isfinite(vals)]
        assert (np.diff(finite) <= 0).all()


def test_tradeoff_table_maximize():
    a = make_trace(times=[1, 2, 3], gaps=[0.1, 0.5, 0.3])
    grid, table = tradeoff_table({"a": a}, metric="optimality_gap", points=3, maximize=True)
    assert np.allclose(table["a"], [0.1, 0.5, 0.5])


def test_tradeoff_table_skips_non_finite_metric():
    a = make_trace(times=[1, 2, 3], gaps=[np.nan, 2.0, 1.0])
    grid, table = tradeoff_table({"a": a}, points=3)
    assert grid[-1] == pytest.approx(3.0)
    assert np.allclose(table["a"], [np.nan, 2.0, 1.0], equal_nan=True)


def test_tradeoff_table_validation():
    with pytest.raises(ValueError, match="at least one"):
        tradeoff_table({})
    bad = make_trace(times=[1.0], gaps=[np.nan])
    with pytest.raises(ValueError, match="finite"):
        tradeoff_table({"x": bad})
    good = make_trace(times=[1.0], gaps=[1.0])
    with pytest.raises(ValueError, match="points"):
        tradeoff_table({"x": good}, points=0)


def test_tradeoff_to_csv(tmp_path):
    a = make_trace(times=[1, 2], gaps=[2.0, 1.0])
    grid, table = tradeoff_table({"a": a}, points=2)
    path = tmp_path / "tradeoff.csv"
    tradeoff_to_csv(grid, table, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "time,a"
    assert len(lines) == 3
    t0, v0 = (float(x) for x in lines[1].split(","))
    assert t0 == pytest.approx(1.0)
    assert v0 == pytest.approx(2.0)
