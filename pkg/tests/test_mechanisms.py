import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpfair import (
    Dataset,
    InvalidParameterError,
    PrivacySpec,
    RngStream,
    compose_budgets,
    release,
    sample_laplace,
    split_budget,
)


def test_privacy_spec_scale():
    spec = PrivacySpec(epsilon=0.1, sensitivity=2.0)
    assert spec.scale == 2.0 / 0.1


@pytest.mark.parametrize("eps,sens", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_privacy_spec_rejects_nonpositive(eps, sens):
    with pytest.raises(InvalidParameterError):
        PrivacySpec(eps, sens)


def test_sample_laplace_scalar_and_deterministic():
    rng = RngStream(123, 5)
    a = sample_laplace(1.5, rng)
    b = sample_laplace(1.5, rng)
    assert isinstance(a, float)
    assert a == b  # same stream, same draw
    assert sample_laplace(1.5, RngStream(123, 6)) != a


def test_sample_laplace_moments():
    draws = sample_laplace(1.0, RngStream(2024), size=1_000_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 2.0) < 0.05


def test_sample_laplace_variance_within_five_se():
    m = 1_000_000
    scale = 3.0
    draws = sample_laplace(scale, RngStream(7), size=m)
    # Var of the sample variance of Laplace: (E[x^4] - Var^2)/m = 20 scale^4 / m
    se = scale**2 * np.sqrt(20.0 / m)
    assert abs(draws.var(ddof=1) - 2.0 * scale**2) < 5 * se


def test_sample_laplace_matches_cdf():
    scale = 2.5
    draws = sample_laplace(scale, RngStream(99), size=200_000)
    res = stats.kstest(draws, stats.laplace(loc=0.0, scale=scale).cdf)
    assert res.pvalue > 0.01


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_sample_laplace_rejects_bad_scale(scale):
    with pytest.raises(InvalidParameterError):
        sample_laplace(scale, RngStream(0))


def _toy_dataset():
    return Dataset(["a", "b", "c"], np.array([[3.0], [0.0], [7.0]]), ["count"])


def test_release_deterministic_and_shapes():
    data = _toy_dataset()
    spec = PrivacySpec(0.5)
    first = release(data, spec, RngStream(11))
    second = release(data, spec, RngStream(11))
    assert not first.raw
    assert first.values.shape == data.values.shape
    np.testing.assert_array_equal(first.values, second.values)
    assert not np.array_equal(first.values, data.values)


def test_release_requires_raw():
    noisy = release(_toy_dataset(), PrivacySpec(1.0), RngStream(0))
    with pytest.raises(InvalidParameterError):
        release(noisy, PrivacySpec(1.0), RngStream(0))


def test_release_unbiased():
    # 1e5 independent cells at value 100, eps=0.1: mean within 3 std errors
    m = 100_000
    data = Dataset([f"e{i}" for i in range(m)], np.full((m, 1), 100.0), ["count"])
    spec = PrivacySpec(0.1, 1.0)
    noisy = release(data, spec, RngStream(3))
    se = np.sqrt(2 * spec.scale**2 / m)
    assert abs(noisy.values.mean() - 100.0) < 3 * se


def test_release_can_go_negative_for_small_counts():
    data = Dataset(["a"] , np.array([[1.0]]), ["count"])
    negatives = 0
    for sid in range(200):
        noisy = release(data, PrivacySpec(0.1), RngStream(5, sid))
        negatives += int(noisy.values[0, 0] < 0)
    assert negatives > 0


def test_release_cells_uncorrelated():
    # one release of 1e5 x 3 constant cells is distributionally identical
    # to 1e5 releases of a 3-cell dataset
    m = 100_000
    data = Dataset([f"e{i}" for i in range(m)], np.full((m, 3), 50.0), ["u", "v", "w"])
    noisy = release(data, PrivacySpec(0.5), RngStream(17))
    corr = np.corrcoef(noisy.values, rowvar=False)
    off_diag = corr[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off_diag) < 0.02)


def test_dataset_invariants():
    with pytest.raises(InvalidParameterError):
        Dataset(["a"], np.array([[-1.0]]), ["count"])  # negative raw
    with pytest.raises(InvalidParameterError):
        Dataset(["a"], np.array([[1.5]]), ["count"])  # fractional raw
    with pytest.raises(InvalidParameterError):
        Dataset(["a", "a"], np.array([[1.0], [2.0]]), ["count"])  # dup ids
    # released values may be anything
    Dataset(["a"], np.array([[-1.5]]), ["count"], raw=False)


def test_compose_budgets_examples():
    assert compose_budgets([0.05, 0.05]) == pytest.approx(0.1)
    assert compose_budgets([0.01, 0.02, 0.03]) == pytest.approx(0.06)
    eps = 0.7
    assert compose_budgets([eps / 2, eps / 2]) == pytest.approx(eps)


def test_compose_budgets_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        compose_budgets([])
    with pytest.raises(InvalidParameterError):
        compose_budgets([0.1, 0.0])


def test_split_budget_examples():
    assert split_budget(0.1, [0.5, 0.5]) == pytest.approx([0.05, 0.05])
    assert split_budget(1.0, [1.0]) == [1.0]
    assert split_budget(0.3, [1 / 3, 2 / 3]) == pytest.approx([0.1, 0.2])


def test_split_budget_rejects_bad_shares():
    with pytest.raises(InvalidParameterError):
        split_budget(0.1, [0.5, 0.4])
    with pytest.raises(InvalidParameterError):
        split_budget(0.1, [])
    with pytest.raises(InvalidParameterError):
        split_budget(0.1, [1.5, -0.5])


@given(
    st.floats(min_value=1e-6, max_value=10.0),
    st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=8),
)
@settings(max_examples=200)
def test_split_compose_round_trip(epsilon, raw_shares):
    total = sum(raw_shares)
    shares = [s / total for s in raw_shares]
    parts = split_budget(epsilon, shares)
    assert abs(compose_budgets(parts) - epsilon) < 1e-12


def test_streams_reproducible_and_independent():
    g1 = RngStream(10, 0).generator().random(1000)
    g2 = RngStream(10, 0).generator().random(1000)
    g3 = RngStream(10, 1).generator().random(1000)
    np.testing.assert_array_equal(g1, g2)
    assert abs(np.corrcoef(g1, g3)[0, 1]) < 0.1


def test_substreams_match_child_streams():
    base = RngStream(8, 2)
    np.testing.assert_array_equal(
        base.substream(4).random(16), base.child(4).generator().random(16)
    )


def test_rng_stream_validation():
    with pytest.raises(InvalidParameterError):
        RngStream(-1)
    with pytest.raises(InvalidParameterError):
        RngStream(0, -2)
