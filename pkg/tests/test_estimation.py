import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htsdesign.estimation import (
    DegenerateWeightsError,
    PriorConfig,
    demean,
    estimate_em,
    estimate_mc,
    log_likelihood,
)
from htsdesign.mixture import MixtureParams, StageModel, simulate_screen

SIM = MixtureParams(0.1, 1.0, 6.25)
NAMES = ("p", "sigma0_sq", "sigma_mu_sq")


def sample(params, m, seed):
    return simulate_screen(StageModel(params, 1), m, seed).values


@pytest.fixture(scope="module")
def sim_data():
    return sample(SIM, 5000, 31)


@pytest.fixture(scope="module")
def mc_fit(sim_data):
    return estimate_mc(sim_data, seed=4)


def test_demean_examples():
    x, shift = demean([1.0, 1.0, 1.0])
    assert x.tolist() == [0.0, 0.0, 0.0] and shift == 1.0
    x, shift = demean([-1.0, 0.0, 1.0])
    assert x.tolist() == [-1.0, 0.0, 1.0] and shift == 0.0
    with pytest.raises(ValueError):
        demean([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_demean_idempotent(values):
    once, _ = demean(values)
    twice, shift2 = demean(once)
    assert np.allclose(twice, once, atol=1e-9 * (1 + np.abs(values).max()))
    assert abs(shift2) <= 1e-9 * (1 + np.abs(values).max())


def test_log_likelihood_single_point():
    val = log_likelihood([0.0], MixtureParams(0.0, 1.0, 1.0))
    assert val == pytest.approx(math.log(1 / math.sqrt(2 * math.pi)), rel=1e-15)


def test_log_likelihood_additive():
    a, b = sample(SIM, 100, 1), sample(SIM, 70, 2)
    whole = log_likelihood(np.concatenate([a, b]), SIM)
    assert whole == pytest.approx(log_likelihood(a, SIM) + log_likelihood(b, SIM), rel=1e-13)


def test_log_likelihood_against_arbitrary_precision():
    mpmath.mp.dps = 40
    params = MixtureParams(0.0132, 0.5677, 3.0735)
    x = np.random.default_rng(3).normal(0, 1.5, 100)
    total = mpmath.mpf(0)
    p, s0, s1 = (mpmath.mpf(repr(v)) for v in (params.p, params.sigma0_sq, params.sigma1_sq))
    for xi in x:
        xi = mpmath.mpf(repr(float(xi)))
        f0 = mpmath.exp(-xi**2 / (2 * s0)) / mpmath.sqrt(2 * mpmath.pi * s0)
        f1 = mpmath.exp(-xi**2 / (2 * s1)) / mpmath.sqrt(2 * mpmath.pi * s1)
        total += mpmath.log((1 - p) * f0 + p * f1)
    assert abs(log_likelihood(x, params) - float(total)) < 1e-9


def test_log_likelihood_rejects_bad_input():
    with pytest.raises(ValueError):
        log_likelihood([np.nan], SIM)
    with pytest.raises(TypeError):
        log_likelihood([0.0], (0.1, 1.0, 1.0))


def test_mc_recovers_simulation_truth(mc_fit):
    for name in NAMES:
        est = getattr(mc_fit.params, name)
        assert abs(est - getattr(SIM, name)) < 3 * mc_fit.posterior_sd[name], name
    assert mc_fit.effective_sample_size > 50


def test_em_recovers_truth_within_ten_percent():
    fit = estimate_em(sample(SIM, 10_000, 32))
    assert not fit.degenerate
    for name in NAMES:
        assert abs(getattr(fit.params, name) / getattr(SIM, name) - 1) < 0.10, name


def test_em_and_mc_agree(sim_data, mc_fit):
    em = estimate_em(sim_data)
    for name in NAMES:
        combined = math.hypot(em.posterior_sd[name], mc_fit.posterior_sd[name])
        assert abs(getattr(em.params, name) - getattr(mc_fit.params, name)) < 3 * combined, name


def test_em_flags_zero_signal_variance():
    fit = estimate_em(sample(MixtureParams(0.2, 1.0, 0.0), 5000, 33))
    assert fit.degenerate
    assert all(math.isinf(v) for v in fit.posterior_sd.values())


def test_em_scale_equivariance(sim_data):
    base = estimate_em(sim_data)
    scaled = estimate_em(3.0 * sim_data)
    assert scaled.params.p == pytest.approx(base.params.p, rel=1e-6)
    assert scaled.params.sigma0_sq == pytest.approx(9 * base.params.sigma0_sq, rel=1e-6)
    assert scaled.params.sigma_mu_sq == pytest.approx(9 * base.params.sigma_mu_sq, rel=1e-6)


def test_em_log_likelihood_not_below_truth(sim_data):
    fit = estimate_em(sim_data)
    assert fit.log_likelihood >= log_likelihood(sim_data, SIM) - 1e-6


def test_importance_sampling_converges(sim_data):
    small = estimate_mc(sim_data, PriorConfig(importance_samples=5000), seed=8)
    big = estimate_mc(sim_data, PriorConfig(importance_samples=10_000), seed=9)
    for name in NAMES:
        combined = math.hypot(small.mc_se[name], big.mc_se[name])
        assert abs(getattr(small.params, name) - getattr(big.params, name)) < 2 * combined + 1e-12, name


def test_mc_is_seed_deterministic(sim_data):
    a = estimate_mc(sim_data, PriorConfig(importance_samples=2000), seed=(5, 1))
    b = estimate_mc(sim_data, PriorConfig(importance_samples=2000), seed=(5, 1))
    assert a.params == b.params


@pytest.mark.parametrize("scale", [1e-6, 1e3])
def test_degenerate_weights_raise(sim_data, scale):
    # proposals far too narrow or far too wide for the posterior
    cfg = PriorConfig(importance_samples=1000, proposal_scale=scale)
    with pytest.raises(DegenerateWeightsError):
        estimate_mc(sim_data, cfg, seed=1)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(importance_samples=10)
    with pytest.raises(ValueError):
        PriorConfig(prior_target="other")


def test_result_serializes_nan_ess():
    d = estimate_em(sample(SIM, 3000, 34)).to_dict()
    assert set(NAMES) <= set(d) and d["method"] == "em"
    assert math.isnan(d["effective_sample_size"])


@pytest.mark.xfail(strict=True, reason="prior on the null proportion cannot pull p below 0.02 "
                                       "on 5,000 pure-null points; see decisions ledger")
def test_mc_pure_null_proportion_small():
    fit = estimate_mc(sample(SIM.with_p(0.0), 5000, 35), seed=3)
    assert fit.params.p < 0.02


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(0.2, 5.0))
def test_em_scale_property(scale):
    x = sample(SIM, 1500, 36)
    base, scaled = estimate_em(x), estimate_em(scale * x)
    assert scaled.params.p == pytest.approx(base.params.p, rel=1e-6)
    assert scaled.params.sigma0_sq == pytest.approx(scale**2 * base.params.sigma0_sq, rel=1e-6)
