import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpfair import (
    AllotmentProblem,
    And,
    CountThreshold,
    Dataset,
    InvalidParameterError,
    NormalizerError,
    Or,
    RatioThreshold,
    Xor,
    allotment_hessian_trace,
    allotment_sensitivity,
    eval_allotment,
    eval_predicate,
    evaluate_predicate,
    minority_language_rule,
    predicate_from_json,
    predicate_to_json,
)


def _counts(values):
    values = np.asarray(values, dtype=np.float64)
    ids = [f"e{i}" for i in range(len(values))]
    return Dataset(ids, values[:, None], ["count"], raw=bool(np.all(values >= 0)))


# --------------------------------------------------------------------------
# allotments


def test_eval_allotment_symmetry():
    out = eval_allotment(AllotmentProblem([1.0, 1.0]), _counts([1, 1]), "count")
    np.testing.assert_allclose(out.values, [0.5, 0.5])


def test_eval_allotment_arithmetic():
    out = eval_allotment(AllotmentProblem([1.0, 1.0]), _counts([4, 80]), "count")
    np.testing.assert_allclose(out.values, [4 / 84, 80 / 84])


def test_eval_allotment_fixed_constant():
    problem = AllotmentProblem([2.0, 1.0], normalizer=50.0)
    out = eval_allotment(problem, _counts([10, 30]), "count")
    np.testing.assert_allclose(out.values, [0.4, 0.6])


def test_eval_allotment_probability_vector():
    gen = np.random.default_rng(0)
    for _ in range(20):
        n = int(gen.integers(2, 30))
        x = gen.integers(1, 1000, n).astype(float)
        a = gen.uniform(0.5, 3.0, n)
        out = eval_allotment(AllotmentProblem(a), _counts(x), "count")
        assert np.all(out.values >= 0)
        assert abs(out.values.sum() - 1.0) < 1e-9


def test_eval_allotment_normalizer_error_carries_value():
    data = Dataset(["a", "b"], np.array([[-5.0], [2.0]]), ["count"], raw=False)
    with pytest.raises(NormalizerError) as err:
        eval_allotment(AllotmentProblem([1.0, 1.0]), data, "count")
    assert err.value.normalizer == -3.0


# --------------------------------------------------------------------------
# Hessian trace


def _fd_hessian_trace(problem, data, attr, i, h_rel=1e-3):
    """Independent oracle: central second differences of the share map."""
    x = data.column(attr).copy()

    def share(vec):
        d = Dataset(list(data.entity_ids), vec[:, None], [attr], raw=False)
        return eval_allotment(problem, d, attr).values[i]

    total = 0.0
    for j in range(len(x)):
        h = h_rel * max(1.0, abs(x[j]))
        up = x.copy()
        up[j] += h
        down = x.copy()
        down[j] -= h
        total += (share(up) - 2 * share(x) + share(down)) / h**2
    return total


def test_hessian_trace_symmetric_data_is_zero():
    data = _counts([7, 7, 7, 7])
    problem = AllotmentProblem(np.ones(4))
    traces = [allotment_hessian_trace(problem, data, "count", i) for i in range(4)]
    assert traces == [0.0] * 4


def test_hessian_trace_matches_finite_differences():
    data = _counts([1, 100])
    problem = AllotmentProblem(np.ones(2))
    t0 = allotment_hessian_trace(problem, data, "count", 0)
    t1 = allotment_hessian_trace(problem, data, "count", 1)
    assert t0 != t1
    for i, t in enumerate([t0, t1]):
        fd = _fd_hessian_trace(problem, data, "count", i, h_rel=1e-4)
        assert abs(fd - t) <= 1e-4 * abs(t)


def test_hessian_trace_matches_finite_differences_random():
    gen = np.random.default_rng(42)
    for _ in range(10):
        n = int(gen.integers(2, 8))
        x = gen.integers(1, 500, n).astype(float)
        a = gen.uniform(0.5, 2.0, n)
        data = _counts(x)
        problem = AllotmentProblem(a)
        for i in range(n):
            t = allotment_hessian_trace(problem, data, "count", i)
            fd = _fd_hessian_trace(problem, data, "count", i)
            assert abs(fd - t) <= 1e-3 * max(abs(t), 1e-12)


def test_hessian_trace_scaling_degree():
    # multiplying the dataset by 10 divides every trace by 100
    x = np.array([3, 50, 200], dtype=float)
    a = np.array([1.0, 2.0, 0.5])
    problem = AllotmentProblem(a)
    for i in range(3):
        t1 = allotment_hessian_trace(problem, _counts(x), "count", i)
        t10 = allotment_hessian_trace(problem, _counts(10 * x), "count", i)
        assert t10 == pytest.approx(t1 / 100.0, rel=1e-12)


def test_fixed_normalizer_trace_zero():
    problem = AllotmentProblem([1.0, 1.0], normalizer=10.0)
    assert allotment_hessian_trace(problem, _counts([1, 2]), "count", 0) == 0.0


# --------------------------------------------------------------------------
# sensitivity


def test_sensitivity_formula():
    assert allotment_sensitivity(1.0, 100.0) == pytest.approx(0.02)
    assert allotment_sensitivity(5.0, 0.9 * 1e4) == pytest.approx(10.0 / 9000.0)
    with pytest.raises(InvalidParameterError):
        allotment_sensitivity(0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        allotment_sensitivity(1.0, 0.0)


def _neighbor_l1_worst(x, a):
    """Oracle: remove one individual from each entity, track the L1 change."""
    problem = AllotmentProblem(a)
    base = eval_allotment(problem, _counts(x), "count").values
    worst = 0.0
    for i in range(len(x)):
        if x[i] < 1:
            continue
        x2 = x.copy()
        x2[i] -= 1
        if (x2 * a).sum() <= 0:
            continue
        neigh = eval_allotment(problem, _counts(x2), "count").values
        worst = max(worst, float(np.abs(neigh - base).sum()))
    return worst


def test_sensitivity_bounds_neighbor_enumeration():
    gen = np.random.default_rng(11)
    for _ in range(20):
        n = int(gen.integers(2, 50))
        x = gen.integers(1, 200, n).astype(float)
        a = gen.uniform(0.5, 4.0, n)
        lower = 0.9 * float((x * a).sum() - a.max())
        bound = allotment_sensitivity(float(a.max()), lower)
        assert _neighbor_l1_worst(x, a) <= bound + 1e-12


def test_sensitivity_half_tight_instance():
    # two entities with one individual each: removing one swings half the bound
    x = np.array([1.0, 1.0])
    a = np.array([1.0, 1.0])
    worst = _neighbor_l1_worst(x, a)
    bound = allotment_sensitivity(1.0, 1.0)  # L = total after removal
    assert worst >= 0.5 * bound


# --------------------------------------------------------------------------
# predicates


def _minority_dataset(rows):
    ids = [f"c{i}" for i in range(len(rows))]
    return Dataset(ids, np.asarray(rows, dtype=np.float64), ["x_s", "x_sp", "x_spe"])


def test_minority_rule_on_threshold_counties():
    rule = minority_language_rule()
    # ratio exactly at the level with strict comparison: does not qualify
    loving = _minority_dataset([[80, 4, 4]])
    assert eval_predicate(rule, loving, 0) is False
    # ratio below the level
    union = _minority_dataset([[3305, 160, 160]])
    assert 160 / 3305 == pytest.approx(0.0484, abs=1e-4)
    assert eval_predicate(rule, union, 0) is False
    # large absolute count qualifies through the second disjunct
    big = _minority_dataset([[10**6, 10_001, 500]])
    assert eval_predicate(rule, big, 0) is True


def test_count_threshold_comparators():
    data = _minority_dataset([[0, 10_001, 0], [0, 10_000, 0]])
    strict = CountThreshold("x_sp", 1e4, ">")
    weak = CountThreshold("x_sp", 1e4, ">=")
    assert eval_predicate(strict, data, 0) is True
    assert eval_predicate(strict, data, 1) is False
    assert eval_predicate(weak, data, 1) is True


def test_ratio_degenerate_denominator_flagged():
    data = Dataset(
        ["a", "b"],
        np.array([[10.0, -3.0, 1.0], [10.0, 5.0, 1.0]]),
        ["x_s", "x_sp", "x_spe"],
        raw=False,
    )
    pred = RatioThreshold("x_spe", "x_sp", 0.0131, ">")
    out = evaluate_predicate(pred, data)
    assert out.values[0] == False  # noqa: E712
    assert out.degenerate[0] == True  # noqa: E712
    assert out.degenerate[1] == False  # noqa: E712


@pytest.mark.parametrize(
    "node,table",
    [
        (And, lambda p, q: p and q),
        (Or, lambda p, q: p or q),
        (Xor, lambda p, q: p != q),
    ],
)
def test_node_truth_tables(node, table):
    for p in (False, True):
        for q in (False, True):
            # leaves engineered to evaluate to p and q
            left = CountThreshold("x_s", 0.0 if p else 1e9, ">=")
            right = CountThreshold("x_sp", 0.0 if q else 1e9, ">=")
            data = _minority_dataset([[5, 5, 5]])
            got = eval_predicate(node(left, right), data, 0)
            assert got == table(p, q)


def _predicate_strategy():
    leaf = st.one_of(
        st.builds(
            CountThreshold,
            attr=st.sampled_from(["x_s", "x_sp", "x_spe"]),
            level=st.floats(-1e6, 1e6, allow_nan=False),
            cmp=st.sampled_from([">=", ">"]),
        ),
        st.builds(
            RatioThreshold,
            numer_attr=st.sampled_from(["x_sp", "x_spe"]),
            denom_attr=st.sampled_from(["x_s", "x_sp"]),
            level=st.floats(0, 1, allow_nan=False),
            cmp=st.sampled_from([">=", ">"]),
        ),
    )
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            st.builds(And, kids, kids), st.builds(Or, kids, kids), st.builds(Xor, kids, kids)
        ),
        max_leaves=8,
    )


@given(_predicate_strategy())
@settings(max_examples=200)
def test_predicate_json_round_trip(pred):
    doc = predicate_to_json(pred)
    json.dumps(doc)  # must be JSON-serializable
    assert predicate_from_json(doc) == pred


def test_predicate_json_canonical_form():
    rule = minority_language_rule()
    doc = predicate_to_json(rule)
    assert doc["op"] == "and"
    assert doc["l"]["op"] == "or"
    assert doc["l"]["l"] == {
        "leaf": "ratio",
        "num": "x_sp",
        "den": "x_s",
        "level": 0.05,
        "cmp": ">",
    }


def test_predicate_json_rejects_unknown():
    with pytest.raises(InvalidParameterError):
        predicate_from_json({"op": "nand", "l": {}, "r": {}})
    with pytest.raises(InvalidParameterError):
        predicate_from_json({"leaf": "mystery"})


def test_unknown_attribute_raises():
    with pytest.raises(InvalidParameterError):
        eval_predicate(CountThreshold("nope", 1.0), _minority_dataset([[1, 1, 1]]), 0)
