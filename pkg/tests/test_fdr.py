import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htsdesign.fdr import (
    RejectionSet,
    bh_step_up,
    lfdr_statistic,
    lfdr_step_up,
    realized_fdp,
    true_positive_count,
    two_sided_p_value,
)
from htsdesign.mixture import MixtureParams, StageModel, nonnull_log_odds, simulate_screen

SIM = MixtureParams(0.1, 1.0, 6.25)


def brute_lfdr_k(values, alpha):
    v = sorted(values)
    k = 0
    for j in range(1, len(v) + 1):
        if math.fsum(v[:j]) / j <= alpha:
            k = j
    return k


def brute_bh_k(pvals, alpha):
    v = sorted(pvals)
    m = len(v)
    k = 0
    for j in range(1, m + 1):
        if v[j - 1] <= j * alpha / m:
            k = j
    return k


def bayes_oracle(x0, params, n=10_000_000, half_width=0.01, seed=0):
    """Fraction of nulls among simulated (theta, x) pairs landing near x0."""
    rng = np.random.default_rng(seed)
    nulls = total = 0
    for _ in range(n // 1_000_000):
        theta = rng.random(1_000_000) < params.p
        x = rng.standard_normal(1_000_000) * np.where(theta, math.sqrt(params.sigma1_sq), math.sqrt(params.sigma0_sq))
        near = np.abs(x - x0) < half_width
        total += near.sum()
        nulls += (near & ~theta).sum()
    frac = nulls / total
    return frac, math.sqrt(frac * (1 - frac) / total)


def test_lfdr_degenerate_proportions():
    x = np.linspace(-5, 5, 11)
    assert np.all(lfdr_statistic(x, StageModel(SIM.with_p(0.0), 1)) == 1.0)
    assert np.all(lfdr_statistic(x, StageModel(SIM.with_p(1.0), 1)) == 0.0)


def test_lfdr_matches_bayes_oracle_at_two():
    frac, se = bayes_oracle(2.0, SIM)
    assert abs(lfdr_statistic(2.0, StageModel(SIM, 1)) - frac) < 3 * se


def test_lfdr_matches_density_ratio():
    model = StageModel(SIM, 4)
    x = np.linspace(-3, 3, 13)
    v0, v1 = model.null_var, model.alt_var
    f0 = np.exp(-x * x / (2 * v0)) / np.sqrt(2 * np.pi * v0)
    f1 = np.exp(-x * x / (2 * v1)) / np.sqrt(2 * np.pi * v1)
    direct = 0.9 * f0 / (0.9 * f0 + 0.1 * f1)
    assert np.allclose(lfdr_statistic(x, model), direct, rtol=1e-12, atol=0)


def test_lfdr_tails_do_not_underflow_to_nan():
    out = lfdr_statistic(np.array([40.0, -1e3]), StageModel(SIM, 25))
    assert np.all(np.isfinite(out)) and np.all(out >= 0)


def test_lfdr_rejects_nonfinite():
    with pytest.raises(ValueError):
        lfdr_statistic(np.array([1.0, np.nan]), StageModel(SIM, 1))


def test_lfdr_step_up_examples():
    assert lfdr_step_up([], 0.05).threshold_rank == 0
    res = lfdr_step_up([0.01, 0.03, 0.10], 0.05)
    assert res.threshold_rank == 3 and sorted(res.indices.tolist()) == [0, 1, 2]
    assert lfdr_step_up([0.10, 0.20], 0.05).threshold_rank == 0


def test_step_up_validates_inputs():
    with pytest.raises(ValueError):
        lfdr_step_up([0.1], 0.0)
    with pytest.raises(ValueError):
        lfdr_step_up([1.1], 0.05)
    with pytest.raises(ValueError):
        bh_step_up([0.1, np.nan], 0.05)


def test_p_value_examples():
    assert two_sided_p_value(0.0, 2.3, 7) == 1.0
    assert two_sided_p_value(1e6, 1.0, 1) == 0.0
    exact = float(mpmath.erfc(mpmath.mpf("1.96") / mpmath.sqrt(2)))
    assert two_sided_p_value(1.96, 1.0, 1) == pytest.approx(exact, rel=1e-12)
    assert exact == pytest.approx(0.05, abs=1e-3)
    with pytest.raises(ValueError):
        two_sided_p_value(np.inf, 1.0, 1)


def test_p_value_uses_replicate_scaling():
    assert two_sided_p_value(0.5, 1.0, 4) == pytest.approx(two_sided_p_value(1.0, 1.0, 1))


def test_bh_examples():
    assert bh_step_up([1.0, 1.0, 1.0], 0.05).threshold_rank == 0
    res = bh_step_up([0.001, 0.02, 0.9], 0.05)
    assert res.threshold_rank == 2 and res.indices.tolist() == [0, 1]


def test_brute_force_agreement_random_vectors():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        alpha = float(rng.uniform(0.01, 0.5))
        lf = rng.uniform(0, 1, n) ** 3
        pv = rng.uniform(0, 1, n) ** 4
        assert lfdr_step_up(lf, alpha).threshold_rank == brute_lfdr_k(lf.tolist(), alpha)
        assert bh_step_up(pv, alpha).threshold_rank == brute_bh_k(pv.tolist(), alpha)


def test_rejected_indices_are_most_significant():
    rng = np.random.default_rng(5)
    v = rng.uniform(0, 0.2, 50)
    res = lfdr_step_up(v, 0.05)
    k = res.threshold_rank
    assert len(set(res.indices.tolist())) == k
    if k < v.size:
        rest = np.setdiff1d(np.arange(v.size), res.indices)
        assert v[res.indices].max() <= v[rest].min()


def test_ties_broken_by_position():
    res = lfdr_step_up([0.02, 0.01, 0.02, 0.02], 0.02)
    assert res.indices.tolist() == [1, 0, 2, 3]
    res = bh_step_up([0.5, 0.01, 0.01], 0.05)
    assert res.indices.tolist() == [1, 2]


def test_lfdr_ranking_equals_abs_ranking():
    model = StageModel(SIM, 3)
    x = simulate_screen(model, 2000, 8).values
    by_lfdr = np.argsort(lfdr_statistic(x, model), kind="stable")[:200]
    by_abs = np.argsort(-np.abs(x), kind="stable")[:200]
    by_odds = np.argsort(-nonnull_log_odds(x, model), kind="stable")[:200]
    assert set(by_abs.tolist()) == set(by_odds.tolist())
    # saturated Lfdr (exact zeros in the far tail) may reorder ties but not membership
    assert len(set(by_lfdr.tolist()) ^ set(by_abs.tolist())) == 0


def test_realized_fdp_and_true_positives():
    empty = RejectionSet.empty()
    assert realized_fdp(empty, [0, 1]) == 0.0
    assert true_positive_count(empty, [0, 1]) == 0
    rej = RejectionSet(np.array([0, 1, 2]), 3)
    assert realized_fdp(rej, [0, 1, 1]) == pytest.approx(1 / 3)
    assert realized_fdp(RejectionSet(np.array([0, 2]), 2), [0, 1, 0]) == 1.0
    assert true_positive_count(RejectionSet(np.array([0, 1]), 2), [1, 1, 0]) == 2
    with pytest.raises(ValueError):
        realized_fdp(RejectionSet(np.array([5]), 1), [0, 1])


def test_monte_carlo_fdr_control():
    model = StageModel(SIM, 1)
    fdps = []
    for rep in range(200):
        s = simulate_screen(model, 5000, (99, rep))
        rej = lfdr_step_up(lfdr_statistic(s.values, model), 0.05)
        fdps.append(realized_fdp(rej, s.theta))
    fdps = np.array(fdps)
    assert fdps.mean() <= 0.05 + 2 * fdps.std(ddof=1) / math.sqrt(200)


probs = st.lists(st.floats(0, 1), min_size=0, max_size=12)


@given(x=st.floats(-30, 30), p=st.floats(0.001, 0.999), smu=st.floats(0.01, 20), r=st.integers(1, 30))
def test_lfdr_range_symmetry_monotonicity(x, p, smu, r):
    model = StageModel(MixtureParams(p, 1.0, smu), r)
    a = lfdr_statistic(x, model)
    assert 0.0 <= a <= 1.0
    assert a == lfdr_statistic(-x, model)
    odds = nonnull_log_odds(np.array([abs(x), abs(x) + 0.5]), model)
    assert odds[1] > odds[0]


@given(values=probs, a1=st.floats(0.001, 0.5), a2=st.floats(0.001, 0.5))
def test_monotone_in_alpha(values, a1, a2):
    lo, hi = sorted((a1, a2))
    for proc in (lfdr_step_up, bh_step_up):
        small, big = proc(values, lo), proc(values, hi)
        assert set(small.indices.tolist()) <= set(big.indices.tolist())


@settings(max_examples=50)
@given(values=st.lists(st.floats(0, 1), min_size=1, max_size=12, unique=True), seed=st.integers(0, 10**6),
       alpha=st.floats(0.01, 0.5))
def test_permutation_equivariance(values, seed, alpha):
    v = np.array(values)
    perm = np.random.default_rng(seed).permutation(v.size)
    for proc in (lfdr_step_up, bh_step_up):
        base = set(proc(v, alpha).indices.tolist())
        permuted = set(perm[proc(v[perm], alpha).indices].tolist())
        assert base == permuted


@given(rej=st.lists(st.integers(0, 19), unique=True), theta=st.lists(st.integers(0, 1), min_size=20, max_size=20))
def test_partition_identity(rej, theta):
    rs = RejectionSet(np.array(rej, dtype=np.intp), len(rej))
    tp = true_positive_count(rs, theta)
    fp = round(realized_fdp(rs, theta) * len(rej))
    assert tp + fp == len(rej)
