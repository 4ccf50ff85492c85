"""Scenario generation statistics and the Monte-Carlo TVD estimator."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from threshcal.model import classify_map
from threshcal.simulate import (
    MixtureScenario,
    SimulationError,
    estimate_tvd,
    generate,
    isotropic_component,
    oracle_scores,
)

# closed form for equal-variance univariate Gaussians: 2 Phi(|mu1-mu2| / (2 sigma)) - 1
TVD_N01_VS_N31 = 0.8663855974622838


def closed_form_tvd(delta, sigma):
    return 2.0 * norm.cdf(delta / (2.0 * sigma)) - 1.0


# ---------------------------------------------------------------------------
# generate


def test_scenario_validation():
    with pytest.raises(SimulationError):
        MixtureScenario(d=1, separation=1.0, variance=0.5, n=10)
    with pytest.raises(SimulationError):
        MixtureScenario(d=3, separation=-1.0, variance=0.5, n=10)
    with pytest.raises(SimulationError):
        MixtureScenario(d=3, separation=1.0, variance=0.0, n=10)
    with pytest.raises(SimulationError):
        MixtureScenario(d=3, separation=1.0, variance=0.5, n=10, weights=(0.7, 0.7))


def test_generate_paper_setup_sizes():
    scenario = MixtureScenario(d=30, separation=2.0, variance=0.5, n=150, seed=3)
    data, params = generate(scenario)
    assert (data.n, data.d, data.k) == (150, 30, 2)
    assert params.d == 30 and params.k == 2


def test_generate_centers_lie_in_first_two_coordinate_plane():
    scenario = MixtureScenario(d=8, separation=3.0, variance=0.5, n=5, seed=9)
    _, params = generate(scenario)
    mu1, mu2 = params.means
    np.testing.assert_array_equal(mu1[2:], np.zeros(6))
    np.testing.assert_array_equal(mu2, -mu1)
    assert np.linalg.norm(mu1 - mu2) == pytest.approx(3.0, rel=1e-12)


def test_generate_deterministic():
    scenario = MixtureScenario(d=4, separation=1.0, variance=0.5, n=50, seed=21)
    a, pa = generate(scenario)
    b, pb = generate(scenario)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(pa.means, pb.means)


def test_generate_sampling_statistics():
    scenario = MixtureScenario(d=3, separation=2.0, variance=0.5, n=4000, seed=5)
    data, params = generate(scenario)
    freq = data.class_counts() / data.n
    bound = 3 * math.sqrt(0.5 * 0.5 / data.n)
    assert abs(freq[0] - 0.5) < bound
    sigma = math.sqrt(scenario.variance)
    for j in (1, 2):
        rows = data.features[data.labels == j]
        sample_mean = rows.mean(axis=0)
        limit = 4 * sigma / math.sqrt(len(rows))
        assert np.all(np.abs(sample_mean - params.means[j - 1]) < limit)


def test_generate_zero_separation_map_error_near_half():
    scenario = MixtureScenario(d=2, separation=0.0, variance=0.5, n=4000, seed=13)
    data, params = generate(scenario)
    labels, _ = classify_map(oracle_scores(params, data.features))
    err = (labels != data.labels).mean()
    assert abs(err - 0.5) < 0.05


def test_generate_huge_separation_zero_error():
    scenario = MixtureScenario(d=2, separation=100.0, variance=0.5, n=1000, seed=17)
    data, params = generate(scenario)
    labels, _ = classify_map(oracle_scores(params, data.features))
    assert (labels != data.labels).sum() == 0


# ---------------------------------------------------------------------------
# oracle scores


def test_oracle_scores_prefer_own_center():
    scenario = MixtureScenario(d=4, separation=2.0, variance=0.5, n=5, seed=1)
    _, params = generate(scenario)
    s = oracle_scores(params, params.means[0][None, :])
    assert s[0, 0] > s[0, 1]


def test_oracle_scores_equal_on_perpendicular_bisector():
    scenario = MixtureScenario(d=5, separation=3.0, variance=0.5, n=5, seed=2)
    _, params = generate(scenario)
    direction = params.means[0] - params.means[1]
    x = np.zeros(5)
    x[2] = 4.0  # orthogonal to the center axis, which lives in coords 0..1
    assert abs(direction @ x) < 1e-12
    s = oracle_scores(params, x[None, :])
    assert s[0, 0] == pytest.approx(s[0, 1], abs=1e-12)


def test_fitted_scores_converge_to_oracle():
    from threshcal.model import fit_gmm, score

    scenario = MixtureScenario(d=3, separation=2.0, variance=0.5, n=10_000, seed=4)
    data, params = generate(scenario)
    probe = np.random.default_rng(0).normal(size=(50, 3))
    truth = oracle_scores(params, probe)

    small = fit_gmm(data.take(np.arange(100)))
    big = fit_gmm(data)
    dev_small = np.abs(score(small, probe) - truth).max()
    dev_big = np.abs(score(big, probe) - truth).max()
    assert dev_big < dev_small


# ---------------------------------------------------------------------------
# TVD estimator


def test_tvd_identical_densities_exactly_zero():
    f = isotropic_component([0.0, 1.0], 0.7)
    g = isotropic_component([0.0, 1.0], 0.7)
    est = estimate_tvd(f, g, 2000, seed=0)
    assert est.estimate == 0.0
    assert est.raw_expectation == 0.0


def test_tvd_univariate_closed_form():
    f = isotropic_component([0.0], 1.0)
    g = isotropic_component([3.0], 1.0)
    est = estimate_tvd(f, g, 100_000, seed=7)
    assert abs(est.estimate - TVD_N01_VS_N31) < 3 * est.std_error
    assert est.raw_expectation == pytest.approx(2 * est.estimate)


def test_tvd_swap_symmetry():
    f = isotropic_component([0.0, 0.0], 1.0)
    g = isotropic_component([1.5, 0.0], 0.8)
    ab = estimate_tvd(f, g, 100_000, seed=11)
    ba = estimate_tvd(g, f, 100_000, seed=12)
    pooled = math.hypot(ab.std_error, ba.std_error)
    assert abs(ab.estimate - ba.estimate) < 3 * pooled


def test_tvd_monotone_in_separation():
    # unit variance keeps the importance ratios light-tailed enough for 1e5
    # samples; far-separated low-variance pairs are systematically
    # under-estimated because the f > g region is almost never sampled under g
    estimates = []
    for sep in (0.0, 1.0, 2.0, 4.0):
        f = isotropic_component([0.0], 1.0)
        g = isotropic_component([sep], 1.0)
        estimates.append(estimate_tvd(f, g, 100_000, seed=23).estimate)
    assert all(a < b for a, b in zip(estimates, estimates[1:]))


def test_tvd_range():
    f = isotropic_component([0.0], 1.0)
    g = isotropic_component([40.0], 1.0)
    est = estimate_tvd(f, g, 50_000, seed=3)
    assert 0.0 <= est.estimate <= 1.0 + 3 * est.std_error


def test_tvd_dimension_difficulty_configs_roughly_constant():
    # the three dimension-difficulty (d, variance) pairs with shared centers
    # two units apart: overlap should agree within 25%
    estimates = []
    for d, var in ((10, 0.8), (20, 0.75), (100, 0.5)):
        mean1 = np.zeros(d)
        mean2 = np.zeros(d)
        mean2[0] = 2.0
        f = isotropic_component(mean1, var)
        g = isotropic_component(mean2, var)
        est = estimate_tvd(f, g, 100_000, seed=d)
        estimates.append(est.estimate)
    for a in estimates:
        for b in estimates:
            assert abs(a / b - 1.0) <= 0.25


def test_tvd_closed_form_tracks_variance():
    # sanity for the config check above: the closed form at separation 2
    vals = [closed_form_tvd(2.0, math.sqrt(v)) for v in (0.8, 0.75, 0.5)]
    assert max(vals) / min(vals) < 1.25


def test_tvd_input_validation():
    f = isotropic_component([0.0], 1.0)
    g = isotropic_component([0.0, 0.0], 1.0)
    with pytest.raises(SimulationError, match="dimension"):
        estimate_tvd(f, g, 10)
    with pytest.raises(SimulationError, match="n_samples"):
        estimate_tvd(f, f, 0)


def test_tvd_report_fields(tmp_path):
    f = isotropic_component([0.0], 1.0)
    g = isotropic_component([1.0], 1.0)
    est = estimate_tvd(f, g, 1000, seed=2)
    est.save(tmp_path / "tvd.json")
    import json

    payload = json.loads((tmp_path / "tvd.json").read_text())
    assert set(payload) == {"estimate", "std_error", "raw_expectation", "n_samples"}
    assert payload["n_samples"] == 1000
