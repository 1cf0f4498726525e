"""Mitigation strategies for privacy-induced allocation bias.

Four remedies are implemented:

* output perturbation: noise the exact shares instead of the counts;
  unbiased by construction but pays the full vector sensitivity;
* linearization by redundant release: spend half the budget on the
  weighted total so the share problem becomes affine in the counts;
* learned piecewise-linear proxies for discontinuous decision rules,
  fit per quantile group of a released attribute;
* cost-of-privacy accounting: the extra budget needed so that no
  entity is under-allocated in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidModeError, InvalidParameterError, NormalizerError
from .fairness import (
    BLOCK_SIZE,
    BiasEstimate,
    FairnessReport,
    SIGNED,
    _disparity,
    empirical_bias,
)
from .mechanisms import Dataset, PrivacySpec, RngStream, release, sample_laplace, split_budget
from .postprocess import ClipLower
from .problems import (
    AllotmentProblem,
    ProblemOutput,
    allotment_sensitivity,
    evaluate_predicate,
    minority_language_rule,
)


@dataclass
class RedundantRelease:
    """Noisy counts plus a separately released weighted total.

    The two component budgets sum to the declared total by sequential
    composition; the normalizer is released with sensitivity equal to
    the largest weight.
    """

    noisy_counts: Dataset
    noisy_normalizer: float
    epsilon_total: float
    epsilon_counts: float
    epsilon_normalizer: float

    def __post_init__(self):
        total = self.epsilon_counts + self.epsilon_normalizer
        if abs(total - self.epsilon_total) > 1e-12:
            raise InvalidParameterError(
                f"component budgets {total} do not sum to the declared {self.epsilon_total}"
            )


def release_with_redundant_normalizer(
    data: Dataset,
    weights,
    epsilon: float,
    rng: RngStream,
    attr: str = "count",
) -> RedundantRelease:
    """Release counts and the weighted total under an even budget split.

    Counts get Laplace noise at sensitivity 1 with epsilon/2; the total
    ``sum_i a_i x_i`` gets sensitivity ``max_i a_i`` with epsilon/2.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != data.n or np.any(weights <= 0):
        raise InvalidParameterError("weights must be positive and match the dataset size")
    eps_counts, eps_norm = split_budget(epsilon, [0.5, 0.5])
    noisy = release(data, PrivacySpec(eps_counts, 1.0), rng.child(0))
    z = float(weights @ data.column(attr))
    a_max = float(weights.max())
    z_noisy = z + sample_laplace(a_max / eps_norm, rng.child(1))
    return RedundantRelease(
        noisy_counts=noisy,
        noisy_normalizer=z_noisy,
        epsilon_total=float(epsilon),
        epsilon_counts=eps_counts,
        epsilon_normalizer=eps_norm,
    )


def linear_proxy_allotment(
    rel: RedundantRelease, weights, attr: str = "count"
) -> ProblemOutput:
    """Shares with the released normalizer treated as a constant.

    The map from noisy counts to shares is affine, so conditionally on
    the released normalizer the mechanism is fair for this proxy.  The
    shares need not sum to 1.
    """
    if not (rel.noisy_normalizer > 0):
        raise NormalizerError(rel.noisy_normalizer)
    weights = np.asarray(weights, dtype=np.float64)
    shares = weights * rel.noisy_counts.column(attr) / rel.noisy_normalizer
    return ProblemOutput(values=shares, kind="allotment")


def output_perturbation_allotment(
    data: Dataset,
    weights,
    epsilon: float,
    rng: RngStream,
    attr: str = "count",
    lower_bound: float | None = None,
) -> ProblemOutput:
    """Exact shares plus Laplace noise at the share-vector sensitivity.

    ``lower_bound`` is the public lower bound on the weighted total
    (default 0.9 of the true total); the per-share noise scale is
    ``(2 a_max / lower_bound) / epsilon``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    problem = AllotmentProblem(weights)
    counts = data.column(attr)
    z = float(weights @ counts)
    if lower_bound is None:
        lower_bound = 0.9 * z
    if not (0 < lower_bound <= z):
        raise InvalidParameterError(
            f"lower_bound must satisfy 0 < L <= weighted total, got L={lower_bound}, total={z}"
        )
    sens = allotment_sensitivity(float(weights.max()), lower_bound)
    shares = problem.batch_shares(counts[None, :])[0]
    noise = sample_laplace(sens / epsilon, rng, size=data.n)
    return ProblemOutput(values=shares + noise, kind="allotment")


def proxy_bias_report(
    data: Dataset,
    weights,
    epsilon: float,
    m: int,
    rng: RngStream,
    attr: str = "count",
    antithetic: bool = False,
) -> FairnessReport:
    """Signed-bias report of the redundant-release proxy, marginal over
    the normalizer noise.

    Each sample redraws both the count noise (epsilon/2, sensitivity 1)
    and the normalizer noise (epsilon/2, sensitivity max weight); the
    reference values are the true shares.  Sample blocks follow the
    same substream layout as :func:`dpfair.fairness.empirical_bias`.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if m < 2:
        raise InvalidParameterError("need at least two samples")
    if antithetic and m % 2:
        raise InvalidParameterError("antithetic estimation needs an even sample count")
    counts = data.column(attr)
    z = float(weights @ counts)
    if z <= 0:
        raise NormalizerError(z)
    true_shares = weights * counts / z
    eps_counts, eps_norm = split_budget(epsilon, [0.5, 0.5])
    count_scale = 1.0 / eps_counts
    norm_scale = float(weights.max()) / eps_norm

    n = data.n
    n_blocks = -(-m // BLOCK_SIZE)
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    count = 0
    failures = 0
    for b in range(n_blocks):
        bs = min(BLOCK_SIZE, m - b * BLOCK_SIZE)
        gen = rng.substream(b)
        if antithetic:
            half = bs // 2
            u = gen.random(half * (n + 1))
            eta = kernels.laplace_from_uniform(u, 1.0).reshape(half, n + 1)
            eta = np.concatenate([eta, -eta], axis=0)
        else:
            u = gen.random(bs * (n + 1))
            eta = kernels.laplace_from_uniform(u, 1.0).reshape(bs, n + 1)
        noisy_counts = counts[None, :] + count_scale * eta[:, :n]
        noisy_norm = z + norm_scale * eta[:, n]
        ok = noisy_norm > 0
        failures += int(np.count_nonzero(~ok))
        shares = weights * noisy_counts[ok] / noisy_norm[ok, None]
        stats = shares - true_shares[None, :]
        if antithetic:
            if not np.all(ok):
                raise NormalizerError(float(noisy_norm[~ok][0]))
            half = bs // 2
            stats = 0.5 * (stats[:half] + stats[half:])
        s1 += stats.sum(axis=0)
        s2 += (stats * stats).sum(axis=0)
        count += stats.shape[0]

    if count < 2:
        raise NormalizerError(0.0, "released normalizer was nonpositive in nearly all samples")
    mean = s1 / count
    var = np.maximum(s2 - count * mean**2, 0.0) / (count - 1)
    se = np.sqrt(var / count)
    estimates = [
        BiasEstimate(
            entity_id=data.entity_ids[i],
            true_value=float(true_shares[i]),
            expected_private_value=float(true_shares[i] + mean[i]),
            bias=float(mean[i]),
            absolute_bias=float(abs(mean[i])),
            std_error=float(se[i]),
            samples=m,
        )
        for i in range(n)
    ]
    disparity, alpha = _disparity(mean)
    return FairnessReport(
        per_entity=estimates,
        disparity=disparity,
        alpha=float(alpha),
        mode=SIGNED,
        config={
            "epsilon": float(epsilon),
            "sensitivity": 1.0,
            "samples": m,
            "master_seed": int(rng.master_seed),
            "stream_id": int(rng.stream_id),
            "strategy": "linear_proxy_marginal",
        },
        metadata={
            "normalizer_failures": failures,
            "antithetic": antithetic,
            "budget_split": [eps_counts, eps_norm],
        },
    )


# --------------------------------------------------------------------------
# Piecewise-linear learned proxies


def partition_groups(released_attr, groups: int) -> np.ndarray:
    """Quantile breakpoints splitting the attribute into ``groups`` bins.

    With distinct values the bins differ in size by at most one;
    duplicate-heavy attributes may produce unequal (or fewer) bins, but
    the bins always partition the data.
    """
    values = np.asarray(released_attr, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise InvalidParameterError("released_attr must be a nonempty 1-D vector")
    if not 1 <= groups <= values.size:
        raise InvalidParameterError(
            f"groups must lie in [1, {values.size}], got {groups}"
        )
    if groups == 1:
        return np.empty(0)
    order = np.sort(values)
    chunks = np.array_split(order, groups)
    cuts = []
    for left, right in zip(chunks[:-1], chunks[1:]):
        cuts.append(0.5 * (left[-1] + right[0]))
    return np.unique(cuts)


def assign_groups(values, breakpoints) -> np.ndarray:
    """Piece index for each value: count of breakpoints <= value."""
    return np.searchsorted(np.asarray(breakpoints), np.asarray(values), side="right")


@dataclass(frozen=True)
class LinearDecisionModel:
    """Decide ``coef . features + intercept > threshold``."""

    coef: tuple
    intercept: float
    threshold: float

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ np.asarray(self.coef) + self.intercept

    def decide(self, features: np.ndarray) -> np.ndarray:
        return self.scores(features) > self.threshold


@dataclass
class PiecewiseProxy:
    """Piecewise-linear stand-in for a discontinuous decision rule.

    The piece is selected by the grouping attribute of the (released)
    input row, then that piece's linear model decides.  Evaluation is a
    pure function of the input row once breakpoints are frozen.
    """

    breakpoints: np.ndarray
    pieces: list[LinearDecisionModel]
    feature_attrs: list[str]
    grouping_attr: str

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=np.float64)
        if len(self.pieces) != self.breakpoints.size + 1:
            raise InvalidParameterError("need exactly one piece per group")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise InvalidParameterError("breakpoints must be strictly increasing")

    def decide_rows(self, features: np.ndarray, grouping: np.ndarray) -> np.ndarray:
        idx = assign_groups(grouping, self.breakpoints)
        out = np.zeros(features.shape[:-1], dtype=bool)
        for g, piece in enumerate(self.pieces):
            mask = idx == g
            if np.any(mask):
                out[mask] = piece.decide(features[mask])
        return out

    def batch_decisions(self, values: np.ndarray, attr_names: list[str]) -> np.ndarray:
        cols = [attr_names.index(a) for a in self.feature_attrs]
        grouping = values[..., attr_names.index(self.grouping_attr)]
        return self.decide_rows(values[..., cols], grouping)

    def to_json(self) -> dict:
        return {
            "breakpoints": [float(b) for b in self.breakpoints],
            "pieces": [
                {
                    "coef": [float(c) for c in p.coef],
                    "intercept": p.intercept,
                    "threshold": p.threshold,
                }
                for p in self.pieces
            ],
            "feature_attrs": list(self.feature_attrs),
            "grouping_attr": self.grouping_attr,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PiecewiseProxy":
        return cls(
            breakpoints=np.asarray(doc["breakpoints"], dtype=np.float64),
            pieces=[
                LinearDecisionModel(tuple(p["coef"]), float(p["intercept"]), float(p["threshold"]))
                for p in doc["pieces"]
            ],
            feature_attrs=list(doc["feature_attrs"]),
            grouping_attr=doc["grouping_attr"],
        )


def _fit_least_squares(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    gram = design.T @ design
    reg = 1e-6 * np.trace(gram) / gram.shape[0]
    gram = gram + reg * np.eye(gram.shape[0])
    return np.linalg.solve(gram, design.T @ y)


def _fit_hinge(design: np.ndarray, y: np.ndarray, epochs: int = 1000) -> np.ndarray:
    labels = 2.0 * y - 1.0
    w = np.zeros(design.shape[1])
    for epoch in range(1, epochs + 1):
        margins = labels * (design @ w)
        viol = margins < 1.0
        if not np.any(viol):
            break
        grad = -(labels[viol, None] * design[viol]).sum(axis=0) / design.shape[0]
        w -= (1e-2 / np.sqrt(epoch)) * grad
    return w


def fit_piecewise_proxy(
    features: np.ndarray,
    labels,
    grouping,
    groups: int,
    method: str = "least_squares",
    feature_attrs: list[str] | None = None,
    grouping_attr: str = "x_sp",
) -> PiecewiseProxy:
    """Fit one linear decision model per quantile group.

    ``features`` are the released attribute rows, ``labels`` the true
    rule outputs, ``grouping`` the released attribute used for the
    quantile split.  Least squares fits a ridge-regularized linear
    score thresholded at 0.5; hinge runs subgradient descent and
    thresholds at 0.  Features are standardized per group with
    released-data statistics; the stored coefficients operate on raw
    features.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    grouping = np.asarray(grouping, dtype=np.float64)
    if features.ndim != 2 or not (features.shape[0] == labels.size == grouping.size):
        raise InvalidParameterError("features, labels, grouping must agree on rows")
    if method not in ("least_squares", "hinge"):
        raise InvalidParameterError(f"method must be 'least_squares' or 'hinge', got {method!r}")
    if feature_attrs is None:
        feature_attrs = [f"f{j}" for j in range(features.shape[1])]

    breakpoints = partition_groups(grouping, groups)
    idx = assign_groups(grouping, breakpoints)
    pieces = []
    for g in range(breakpoints.size + 1):
        mask = idx == g
        if not np.any(mask):
            raise InvalidParameterError(f"group {g} is empty")
        x = features[mask]
        y = labels[mask]
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        design = np.column_stack([np.ones(x.shape[0]), (x - mu) / sd])
        if method == "least_squares":
            w = _fit_least_squares(design, y)
            threshold = 0.5
        else:
            w = _fit_hinge(design, y)
            threshold = 0.0
        coef = w[1:] / sd
        intercept = float(w[0] - (w[1:] * mu / sd).sum())
        pieces.append(LinearDecisionModel(tuple(coef), intercept, threshold))
    return PiecewiseProxy(
        breakpoints=breakpoints,
        pieces=pieces,
        feature_attrs=list(feature_attrs),
        grouping_attr=grouping_attr,
    )


def piecewise_proxy_experiment(
    data: Dataset,
    epsilon: float,
    groups: int,
    m: int,
    rng: RngStream,
    method: str = "least_squares",
    rule=None,
) -> dict:
    """Fit a piecewise proxy on one release and audit it per group.

    The grouping and the training features come from a single released
    dataset (the grouping is privacy-preserving); labels are the true
    rule outputs.  Both the original rule and the proxy are then
    audited against fresh noise with the same sample stream, and the
    decision-error spread (alpha) is reported within each group.
    """
    if rule is None:
        rule = minority_language_rule()
    spec = PrivacySpec(epsilon, 1.0)
    fit_release = release(data, spec, rng.child(0))
    labels = evaluate_predicate(rule, data).values.astype(np.float64)
    grouping = fit_release.column("x_sp")
    proxy = fit_piecewise_proxy(
        fit_release.values,
        labels,
        grouping,
        groups,
        method=method,
        feature_attrs=list(data.attribute_names),
        grouping_attr="x_sp",
    )
    report_original = empirical_bias(rule, data, spec, m, rng.child(1))
    report_proxy = empirical_bias(proxy, data, spec, m, rng.child(1))

    group_idx = assign_groups(grouping, proxy.breakpoints)
    orig_bias = np.array([e.absolute_bias for e in report_original.per_entity])
    proxy_bias = np.array([e.absolute_bias for e in report_proxy.per_entity])
    rows = []
    for g in range(len(proxy.pieces)):
        mask = group_idx == g
        if not np.any(mask):
            continue
        rows.append(
            {
                "group": g,
                "size": int(mask.sum()),
                "median_grouping_value": float(np.median(grouping[mask])),
                "alpha_original": float(orig_bias[mask].max() - orig_bias[mask].min()),
                "alpha_proxy": float(proxy_bias[mask].max() - proxy_bias[mask].min()),
            }
        )
    return {
        "proxy": proxy,
        "groups": rows,
        "report_original": report_original,
        "report_proxy": report_proxy,
    }


# --------------------------------------------------------------------------
# Cost of privacy


@dataclass
class CostOfPrivacyReport:
    """Budget increase required so no entity is under-allocated."""

    entity_ids: list[str]
    per_entity_shortfall: list[float]
    total: float
    budget: float


def cost_of_privacy(report: FairnessReport, budget: float) -> CostOfPrivacyReport:
    """Sum of |bias| * budget over the negatively biased entities."""
    if report.mode != SIGNED:
        raise InvalidModeError("cost_of_privacy needs a signed-bias report")
    if not (budget > 0):
        raise InvalidParameterError(f"budget must be positive, got {budget}")
    shortfalls = [
        abs(e.bias) * budget if e.bias < 0 else 0.0 for e in report.per_entity
    ]
    return CostOfPrivacyReport(
        entity_ids=[e.entity_id for e in report.per_entity],
        per_entity_shortfall=shortfalls,
        total=float(sum(shortfalls)),
        budget=float(budget),
    )


# --------------------------------------------------------------------------
# Strategy comparison


def _blocked_mae(m: int, rng: RngStream, sample_block) -> float:
    """Mean absolute error accumulated block by block.

    ``sample_block(gen, block_size)`` returns an (block_size, n) array
    of per-entity absolute errors for fresh draws from ``gen``.
    """
    total = 0.0
    count = 0
    for b in range(-(-m // BLOCK_SIZE)):
        bs = min(BLOCK_SIZE, m - b * BLOCK_SIZE)
        errors = sample_block(rng.substream(b), bs)
        total += float(errors.sum())
        count += errors.size
    return total / count


def compare_mitigations(
    data: Dataset,
    weights,
    epsilon: float,
    m: int,
    rng: RngStream,
    attr: str = "count",
    strategies: tuple[str, ...] = ("plain", "proxy", "output_perturbation"),
) -> dict:
    """Paired accuracy/fairness comparison of allotment strategies.

    Returns, per strategy, the mean absolute share error against the
    true shares and the relevant fairness summary: marginal alpha for
    plain and the proxy, conditional alpha (normalizer held fixed) for
    the proxy, and the per-entity bias report for output perturbation.
    """
    weights = np.asarray(weights, dtype=np.float64)
    counts = data.column(attr)
    z = float(weights @ counts)
    true_shares = weights * counts / z
    n = data.n
    results: dict = {}

    if "plain" in strategies:
        problem = AllotmentProblem(weights)
        spec = PrivacySpec(epsilon, 1.0)
        report = empirical_bias(problem, data, spec, m, rng.child(1), attr=attr)

        def plain_errors(gen, bs):
            u = gen.random(bs * n)
            noisy = counts[None, :] + kernels.laplace_from_uniform(u, spec.scale).reshape(bs, n)
            return np.abs(problem.batch_shares(noisy) - true_shares[None, :])

        results["plain"] = {
            "alpha": report.alpha,
            "alpha_std_error": report.alpha_std_error(),
            "mae": _blocked_mae(m, rng.child(10), plain_errors),
            "report": report,
        }

    if "proxy" in strategies:
        marginal = proxy_bias_report(data, weights, epsilon, m, rng.child(2), attr=attr)
        rel = release_with_redundant_normalizer(data, weights, epsilon, rng.child(3), attr=attr)
        conditional = empirical_bias(
            AllotmentProblem(weights, normalizer=rel.noisy_normalizer),
            data,
            PrivacySpec(rel.epsilon_counts, 1.0),
            m,
            rng.child(4),
            attr=attr,
        )
        eps_counts, eps_norm = split_budget(epsilon, [0.5, 0.5])
        a_max = float(weights.max())

        def proxy_errors(gen, bs):
            u = gen.random(bs * (n + 1))
            eta = kernels.laplace_from_uniform(u, 1.0).reshape(bs, n + 1)
            noisy_counts = counts[None, :] + eta[:, :n] / eps_counts
            noisy_norm = z + eta[:, n] * a_max / eps_norm
            keep = noisy_norm > 0
            shares = weights * noisy_counts[keep] / noisy_norm[keep, None]
            return np.abs(shares - true_shares[None, :])

        results["proxy"] = {
            "marginal_alpha": marginal.alpha,
            "marginal_alpha_std_error": marginal.alpha_std_error(),
            "conditional_alpha": conditional.alpha,
            "conditional_alpha_std_error": conditional.alpha_std_error(),
            "mae": _blocked_mae(m, rng.child(11), proxy_errors),
            "report": marginal,
            "conditional_report": conditional,
        }

    if "output_perturbation" in strategies:
        lower = 0.9 * z
        sens = allotment_sensitivity(float(weights.max()), lower)
        scale = sens / epsilon
        s1 = np.zeros(n)
        s2 = np.zeros(n)
        abs_total = 0.0
        for b in range(-(-m // BLOCK_SIZE)):
            bs = min(BLOCK_SIZE, m - b * BLOCK_SIZE)
            gen = rng.child(12).substream(b)
            noise = kernels.laplace_from_uniform(gen.random(bs * n), scale).reshape(bs, n)
            s1 += noise.sum(axis=0)
            s2 += (noise * noise).sum(axis=0)
            abs_total += float(np.abs(noise).sum())
        bias = s1 / m
        var = np.maximum(s2 - m * bias**2, 0.0) / (m - 1)
        se = np.sqrt(var / m)
        disparity, alpha = _disparity(bias)
        estimates = [
            BiasEstimate(
                entity_id=data.entity_ids[i],
                true_value=float(true_shares[i]),
                expected_private_value=float(true_shares[i] + bias[i]),
                bias=float(bias[i]),
                absolute_bias=float(abs(bias[i])),
                std_error=float(se[i]),
                samples=m,
            )
            for i in range(n)
        ]
        report = FairnessReport(
            per_entity=estimates,
            disparity=disparity,
            alpha=float(alpha),
            mode=SIGNED,
            config={
                "epsilon": float(epsilon),
                "sensitivity": sens,
                "samples": m,
                "master_seed": int(rng.master_seed),
                "stream_id": int(rng.stream_id),
                "strategy": "output_perturbation",
                "lower_bound": lower,
            },
            metadata={},
        )
        results["output_perturbation"] = {
            "alpha": report.alpha,
            "alpha_std_error": report.alpha_std_error(),
            "mae": abs_total / (m * n),
            "report": report,
        }

    return results


def cost_ranking(
    data: Dataset,
    weights,
    epsilon: float,
    budget: float,
    m: int,
    rng: RngStream,
    attr: str = "count",
    antithetic: bool = True,
) -> dict:
    """Cost of privacy for clipped, plain, and proxy share releases."""
    problem = AllotmentProblem(np.asarray(weights, dtype=np.float64))
    spec = PrivacySpec(epsilon, 1.0)
    clip_report = empirical_bias(
        problem, data, spec, m, rng.child(1), pipeline=(ClipLower(0.0),),
        attr=attr, antithetic=antithetic,
    )
    plain_report = empirical_bias(
        problem, data, spec, m, rng.child(2), attr=attr, antithetic=antithetic
    )
    proxy_report = proxy_bias_report(
        data, weights, epsilon, m, rng.child(3), attr=attr, antithetic=antithetic
    )
    return {
        "clip": cost_of_privacy(clip_report, budget),
        "plain": cost_of_privacy(plain_report, budget),
        "proxy": cost_of_privacy(proxy_report, budget),
    }
