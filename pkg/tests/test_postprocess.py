import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpfair import (
    DomainError,
    InvalidParameterError,
    PrivacySpec,
    RngStream,
    clip_lower,
    expected_clipped,
    pipeline_from_json,
    pipeline_to_json,
    project_sum,
    stochastic_round,
    temperature_clip,
    tune_temperature,
)
from dpfair.errors import ConfigError
from dpfair.kernels import clipped_laplace_moments
from dpfair.postprocess import (
    ClipLower,
    ProjectSum,
    StochasticRound,
    TemperatureClip,
    temperature_scores,
)


def test_clip_lower_examples():
    assert clip_lower(-3.0, 0.0) == 0.0
    assert clip_lower(5.0, 0.0) == 5.0
    assert clip_lower(0.4, 1.0) == 1.0
    np.testing.assert_array_equal(clip_lower(np.array([-1.0, 2.0]), 0.0), [0.0, 2.0])


def test_expected_clipped_formula():
    assert expected_clipped(100.0, 0.0, 10.0) == pytest.approx(100.0 + 5 * math.exp(-10.0))
    assert expected_clipped(1.0, 0.0, 10.0) == pytest.approx(1.0 + 5 * math.exp(-0.1))


def test_expected_clipped_matches_monte_carlo():
    m = 1_000_000
    x, level, scale = 1.0, 0.0, 10.0
    u = RngStream(31).generator().random(m)
    s1, s2 = clipped_laplace_moments(x, level, scale, u)
    mean = s1 / m
    se = math.sqrt(max(s2 - m * mean * mean, 0.0) / (m - 1) / m)
    assert abs(mean - expected_clipped(x, level, scale)) < 3 * se


def test_expected_clipped_random_triples():
    gen = np.random.default_rng(5)
    m = 200_000
    for trial in range(5):
        x = float(gen.uniform(-5, 50))
        level = x - float(gen.uniform(0.1, 30))
        scale = float(gen.uniform(0.5, 20))
        u = RngStream(40, trial).generator().random(m)
        s1, s2 = clipped_laplace_moments(x, level, scale, u)
        mean = s1 / m
        se = math.sqrt(max(s2 - m * mean * mean, 0.0) / (m - 1) / m)
        assert abs(mean - expected_clipped(x, level, scale)) < 4 * se


def test_clip_bias_bounded_by_half_scale():
    # bias (scale/2) exp((level-x)/scale) <= scale/2, approached as x -> level
    for scale in (0.5, 3.0, 12.0):
        for gap in (1e-6, 0.1, 1.0, 10.0):
            bias = expected_clipped(gap, 0.0, scale) - gap
            assert 0 < bias <= scale / 2 + 1e-12
        near = expected_clipped(1e-9, 0.0, scale) - 1e-9
        assert near == pytest.approx(scale / 2, rel=1e-6)


def test_expected_clipped_domain():
    with pytest.raises(DomainError):
        expected_clipped(1.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        expected_clipped(1.0, 2.0, 2.0)
    with pytest.raises(InvalidParameterError):
        expected_clipped(1.0, 0.0, 0.0)


def test_stochastic_round_integral_is_identity():
    assert stochastic_round(3.0, RngStream(0)) == 3
    out = stochastic_round(np.array([2.0, -4.0]), RngStream(0))
    np.testing.assert_array_equal(out, [2.0, -4.0])


def test_stochastic_round_frequencies():
    m = 1_000_000
    out = stochastic_round(np.full(m, 2.25), RngStream(77))
    values, counts = np.unique(out, return_counts=True)
    np.testing.assert_array_equal(values, [2.0, 3.0])
    freq = counts / m
    assert freq[0] == pytest.approx(0.75, abs=0.005)
    assert freq[1] == pytest.approx(0.25, abs=0.005)
    se = math.sqrt(0.25 * 0.75 / m)
    assert abs(out.mean() - 2.25) < 4 * se


def test_stochastic_round_negative_support():
    out = stochastic_round(np.full(100_000, -1.5), RngStream(13))
    values = set(np.unique(out))
    assert values == {-2.0, -1.0}
    assert abs(out.mean() + 1.5) < 4 * math.sqrt(0.25 / 100_000)


def test_stochastic_round_unbiased_generic():
    m = 500_000
    for z in (0.1, 5.9, -0.3):
        out = stochastic_round(np.full(m, z), RngStream(21, int(abs(z * 10))))
        p = z - math.floor(z)
        assert abs(out.mean() - z) < 4 * math.sqrt(p * (1 - p) / m)


def test_project_sum_examples():
    np.testing.assert_allclose(project_sum([0.2, 0.3], 1.0), [0.45, 0.55])
    z = np.array([0.25, 0.75])
    np.testing.assert_array_equal(project_sum(z, 1.0), z)


def test_project_sum_hits_target_and_is_idempotent():
    gen = np.random.default_rng(3)
    for _ in range(50):
        n = int(gen.integers(1, 40))
        z = gen.normal(0, 10, n)
        target = float(gen.normal(0, 5))
        out = project_sum(z, target)
        assert abs(out.sum() - target) < 1e-9
        np.testing.assert_array_equal(project_sum(out, target), out)


def test_project_sum_is_euclidean_projection():
    # beats 1e5 random feasible points in squared distance
    gen = np.random.default_rng(9)
    z = gen.normal(0, 1, 6)
    out = project_sum(z, 1.0)
    best = np.sum((out - z) ** 2)
    others = gen.normal(0, 1, (100_000, 6))
    others += (1.0 - others.sum(axis=1))[:, None] / 6  # feasible: sum to 1
    dists = np.sum((others - z[None, :]) ** 2, axis=1)
    assert np.all(best <= dists + 1e-12)


def test_temperature_clip_zero_reduces_to_clip():
    grid = np.linspace(-5, 5, 41)
    for level in (-1.0, 0.0, 2.0):
        np.testing.assert_array_equal(
            temperature_clip(grid, level, 0.0), clip_lower(grid, level)
        )


def test_temperature_clip_step_by_step():
    # x=0.5, level=0, T=1: clipped 0.5, corrected 0.5 - 1/1.5 < 0, reclipped to 0
    assert temperature_clip(0.5, 0.0, 1.0) == 0.0


def test_temperature_clip_far_from_boundary():
    x = 1e6
    assert temperature_clip(x, 0.0, 5.0) == pytest.approx(x, abs=1e-4)


@given(
    st.floats(-100, 100, allow_nan=False),
    st.floats(-10, 10, allow_nan=False),
    st.floats(0, 50, allow_nan=False),
)
@settings(max_examples=300)
def test_temperature_clip_respects_level(x, level, temperature):
    assert temperature_clip(x, level, temperature) >= level


def test_temperature_clip_rejects_negative_temperature():
    with pytest.raises(InvalidParameterError):
        temperature_clip(1.0, 0.0, -0.1)


def test_tune_temperature_single_candidate():
    domain = np.arange(1.0, 30.0)
    spec = PrivacySpec(0.5)
    t, score = tune_temperature(domain, spec, grid=[0.0], m=2000, rng=RngStream(1))
    assert t == 0.0
    # score at T=0 equals the uncorrected clip's spread under the same draws
    grid, scores = temperature_scores(domain, spec, [0.0], m=2000, rng=RngStream(1))
    assert score == scores[0]


def test_tune_temperature_improves_on_zero():
    domain = np.arange(1.0, 201.0)
    spec = PrivacySpec(0.1)  # scale 10: strong clipping bias near the boundary
    grid = [0.0, *np.geomspace(0.1 * spec.scale, 10 * spec.scale, 10)]
    gridv, scores = temperature_scores(domain, spec, grid, m=4000, rng=RngStream(8))
    assert gridv[0] == 0.0
    assert scores.min() < scores[0]
    t, score = tune_temperature(domain, spec, grid, m=4000, rng=RngStream(8))
    assert t > 0.0
    assert score == scores.min()


def test_tune_temperature_degenerate_domain_tie_break():
    # far from the boundary every small T scores ~0: smallest T wins
    domain = np.array([1e6])
    spec = PrivacySpec(1.0)
    t, score = tune_temperature(
        domain, spec, grid=[0.5, 0.1, 0.3], m=500, rng=RngStream(4)
    )
    assert t == 0.1
    assert score == 0.0  # single-point domain: max-min spread is identically 0


def test_tune_temperature_validation():
    spec = PrivacySpec(1.0)
    with pytest.raises(InvalidParameterError):
        tune_temperature([], spec, grid=[0.1], m=10, rng=RngStream(0))
    with pytest.raises(InvalidParameterError):
        tune_temperature([1.0], spec, grid=[], m=10, rng=RngStream(0))
    with pytest.raises(InvalidParameterError):
        tune_temperature([-1.0], spec, grid=[0.1], m=10, rng=RngStream(0), level=0.0)


def test_pipeline_json_round_trip():
    steps = (
        ClipLower(0.0),
        StochasticRound(),
        TemperatureClip(level=0.0, temperature=2.0),
        ProjectSum(1.0),
    )
    doc = pipeline_to_json(steps)
    assert doc[0] == {"clip_lower": 0.0}
    assert doc[1] == "stochastic_round"
    assert pipeline_from_json(doc) == steps


def test_pipeline_unknown_step_named_in_error():
    with pytest.raises(ConfigError, match="round_weird"):
        pipeline_from_json([{"round_weird": 1}])
