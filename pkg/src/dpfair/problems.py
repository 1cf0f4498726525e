"""Decision problems evaluated on (possibly noisy) count datasets.

Two families are covered:

* weighted proportional allotments: entity i receives
  ``a_i * x_i / Z`` where ``Z`` is either the data-dependent total
  ``sum_j a_j * x_j`` or a fixed constant (the linear-proxy variant);
* Boolean decision rules: expression trees of count/ratio threshold
  leaves combined with and/or/xor.

Batch evaluation operates on an (m, n, k) stack of dataset values so the
Monte Carlo estimators can process a whole block of releases at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameterError, NormalizerError
from .mechanisms import Dataset

COMPARATORS = (">=", ">")


def _check_comparator(cmp: str) -> str:
    if cmp not in COMPARATORS:
        raise InvalidParameterError(f"comparator must be one of {COMPARATORS}, got {cmp!r}")
    return cmp


def _compare(values: np.ndarray, level: float, cmp: str) -> np.ndarray:
    return values >= level if cmp == ">=" else values > level


@dataclass
class ProblemOutput:
    """Per-entity result of one problem evaluation.

    ``degenerate`` marks entities whose ratio leaves saw a nonpositive
    denominator (possible after noising); those leaves evaluate False.
    """

    values: np.ndarray
    kind: str  # "allotment" | "decision"
    degenerate: Optional[np.ndarray] = None


@dataclass
class AllotmentProblem:
    """Weighted proportional share problem.

    ``normalizer=None`` divides by the data-dependent total; a float
    fixes the denominator, making the shares affine in the counts.
    """

    weights: np.ndarray
    normalizer: Optional[float] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise InvalidParameterError("weights must be a nonempty 1-D vector")
        if np.any(self.weights <= 0):
            raise InvalidParameterError("weights must be positive")
        if self.normalizer is not None and not (self.normalizer > 0):
            raise InvalidParameterError(
                f"fixed normalizer must be positive, got {self.normalizer}"
            )

    def batch_shares(self, counts: np.ndarray) -> np.ndarray:
        """Shares for an (m, n) stack of count vectors."""
        weighted = counts * self.weights
        if self.normalizer is None:
            z = weighted.sum(axis=-1)
            bad = z <= 0
            if np.any(bad):
                raise NormalizerError(float(np.atleast_1d(z[bad])[0]))
            return weighted / z[..., None]
        return weighted / self.normalizer


def eval_allotment(problem: AllotmentProblem, data: Dataset, attr: str) -> ProblemOutput:
    """Evaluate the share vector on one dataset.

    Raises :class:`NormalizerError` carrying the offending total when the
    data-dependent normalizer is not positive (the caller chooses between
    clipping and a fixed-normalizer proxy).
    """
    counts = data.column(attr)
    if problem.weights.size != data.n:
        raise InvalidParameterError(
            f"weights length {problem.weights.size} != dataset size {data.n}"
        )
    shares = problem.batch_shares(counts[None, :])[0]
    return ProblemOutput(values=shares, kind="allotment")


def allotment_hessian_trace(
    problem: AllotmentProblem, data: Dataset, attr: str, i: int
) -> float:
    """Trace of the second-derivative matrix of entity ``i``'s share.

    For shares a_i x_i / Z with Z = sum_j a_j x_j the closed form is
    ``2 a_i (x_i * sum_j a_j^2 - a_i Z) / Z^3``.  Only defined for the
    data-dependent normalizer (fixed normalizers are affine: trace 0).
    """
    if problem.normalizer is not None:
        return 0.0
    x = data.column(attr)
    a = problem.weights
    if a.size != data.n:
        raise InvalidParameterError("weights length must match dataset size")
    z = float(a @ x)
    if z <= 0:
        raise NormalizerError(z)
    a_i = a[i]
    return float(2.0 * a_i * (x[i] * float(a @ a) - a_i * z) / z**3)


def allotment_sensitivity(a_max: float, lower_bound: float) -> float:
    """L1 sensitivity of the full share vector under one-individual change.

    ``lower_bound`` is a public lower bound on the weighted total; the
    worst-case L1 output change is ``2 * a_max / lower_bound``.
    """
    if not (a_max > 0):
        raise InvalidParameterError(f"a_max must be positive, got {a_max}")
    if not (lower_bound > 0):
        raise InvalidParameterError(f"lower_bound must be positive, got {lower_bound}")
    return 2.0 * a_max / lower_bound


@dataclass
class LinearProblem:
    """Affine per-entity rule ``coefficient * x[attr] + intercept``.

    Useful as the canonical zero-curvature problem in fairness audits.
    """

    coefficient: float
    intercept: float = 0.0

    def batch_values(self, counts: np.ndarray) -> np.ndarray:
        return self.coefficient * counts + self.intercept


# --------------------------------------------------------------------------
# Boolean decision rules


@dataclass(frozen=True)
class CountThreshold:
    attr: str
    level: float
    cmp: str = ">="

    def __post_init__(self):
        _check_comparator(self.cmp)


@dataclass(frozen=True)
class RatioThreshold:
    numer_attr: str
    denom_attr: str
    level: float
    cmp: str = ">"

    def __post_init__(self):
        _check_comparator(self.cmp)


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Or:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Xor:
    left: "Predicate"
    right: "Predicate"


Predicate = Union[CountThreshold, RatioThreshold, And, Or, Xor]

_NODE_OPS = {And: "and", Or: "or", Xor: "xor"}
_OP_NODES = {"and": And, "or": Or, "xor": Xor}


def predicate_attributes(pred: Predicate) -> set[str]:
    """All attribute names referenced by the tree."""
    if isinstance(pred, CountThreshold):
        return {pred.attr}
    if isinstance(pred, RatioThreshold):
        return {pred.numer_attr, pred.denom_attr}
    return predicate_attributes(pred.left) | predicate_attributes(pred.right)


def batch_eval_predicate(
    pred: Predicate, values: np.ndarray, attr_names: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a predicate on an (m, n, k) stack of dataset values.

    Returns (decisions, degenerate) boolean arrays of shape (m, n).
    Ratio leaves with nonpositive denominators evaluate False and set
    the degenerate flag instead of dividing.
    """

    def column(name: str) -> np.ndarray:
        try:
            return values[..., attr_names.index(name)]
        except ValueError:
            raise InvalidParameterError(
                f"unknown attribute {name!r}; have {attr_names}"
            ) from None

    if isinstance(pred, CountThreshold):
        out = _compare(column(pred.attr), pred.level, pred.cmp)
        return out, np.zeros_like(out, dtype=bool)
    if isinstance(pred, RatioThreshold):
        num = column(pred.numer_attr)
        den = column(pred.denom_attr)
        ok = den > 0
        ratio = np.divide(num, den, out=np.zeros_like(num), where=ok)
        out = _compare(ratio, pred.level, pred.cmp) & ok
        return out, ~ok
    if isinstance(pred, (And, Or, Xor)):
        lv, ld = batch_eval_predicate(pred.left, values, attr_names)
        rv, rd = batch_eval_predicate(pred.right, values, attr_names)
        if isinstance(pred, And):
            return lv & rv, ld | rd
        if isinstance(pred, Or):
            return lv | rv, ld | rd
        return lv ^ rv, ld | rd
    raise InvalidParameterError(f"not a predicate: {pred!r}")


def evaluate_predicate(pred: Predicate, data: Dataset) -> ProblemOutput:
    """Evaluate the rule for every entity of one dataset."""
    out, degen = batch_eval_predicate(pred, data.values[None, :, :], data.attribute_names)
    return ProblemOutput(values=out[0], kind="decision", degenerate=degen[0])


def eval_predicate(pred: Predicate, data: Dataset, i: int) -> bool:
    """Decision for entity ``i`` of one dataset."""
    return bool(evaluate_predicate(pred, data).values[i])


def predicate_to_json(pred: Predicate) -> dict:
    """Canonical JSON form; lossless round trip with predicate_from_json."""
    if isinstance(pred, CountThreshold):
        return {"leaf": "count", "attr": pred.attr, "level": pred.level, "cmp": pred.cmp}
    if isinstance(pred, RatioThreshold):
        return {
            "leaf": "ratio",
            "num": pred.numer_attr,
            "den": pred.denom_attr,
            "level": pred.level,
            "cmp": pred.cmp,
        }
    op = _NODE_OPS.get(type(pred))
    if op is None:
        raise InvalidParameterError(f"not a predicate: {pred!r}")
    return {"op": op, "l": predicate_to_json(pred.left), "r": predicate_to_json(pred.right)}


def predicate_from_json(doc: dict) -> Predicate:
    if not isinstance(doc, dict):
        raise InvalidParameterError(f"predicate node must be an object, got {doc!r}")
    if "op" in doc:
        node = _OP_NODES.get(doc["op"])
        if node is None:
            raise InvalidParameterError(f"unknown predicate op {doc['op']!r}")
        return node(predicate_from_json(doc["l"]), predicate_from_json(doc["r"]))
    if doc.get("leaf") == "count":
        return CountThreshold(doc["attr"], float(doc["level"]), doc.get("cmp", ">="))
    if doc.get("leaf") == "ratio":
        return RatioThreshold(
            doc["num"], doc["den"], float(doc["level"]), doc.get("cmp", ">")
        )
    raise InvalidParameterError(f"unknown predicate node: {doc!r}")


def minority_language_rule(
    speakers_attr: str = "x_s",
    limited_english_attr: str = "x_sp",
    low_education_attr: str = "x_spe",
    ratio_level: float = 0.05,
    count_level: float = 1e4,
    education_level: float = 0.0131,
) -> Predicate:
    """Ballot language-assistance qualification rule.

    A jurisdiction qualifies when limited-English speakers of the
    minority language exceed 5% of its speakers or 10,000 people, and
    more than 1.31% of those additionally have less than a 5th-grade
    education.  All comparisons are strict.
    """
    return And(
        Or(
            RatioThreshold(limited_english_attr, speakers_attr, ratio_level, ">"),
            CountThreshold(limited_english_attr, count_level, ">"),
        ),
        RatioThreshold(low_education_attr, limited_english_attr, education_level, ">"),
    )
