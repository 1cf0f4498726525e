"""Fairness auditing for decisions made on differentially private data.

The toolkit releases count datasets through the Laplace mechanism,
estimates the per-entity bias this induces in downstream allotment
problems and Boolean decision rules, evaluates the closed-form bias
bounds and composition results, and implements mitigation strategies
(output perturbation, redundant-release linearization, learned
piecewise proxies, temperature-corrected clipping) together with
cost-of-privacy accounting.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DpfairError,
    InvalidModeError,
    InvalidParameterError,
    NormalizerError,
)
from .fairness import (
    BiasEstimate,
    FairnessReport,
    compose_fairness_bound,
    compose_flip_probability,
    empirical_bias,
    report_from_json,
    report_to_csv,
    report_to_json,
    taylor_bias,
    threshold_bias_closed_form,
    worst_truth_assignment,
)
from .mechanisms import (
    Dataset,
    PrivacySpec,
    RngStream,
    compose_budgets,
    release,
    sample_laplace,
    split_budget,
)
from .mitigation import (
    CostOfPrivacyReport,
    PiecewiseProxy,
    RedundantRelease,
    compare_mitigations,
    cost_of_privacy,
    cost_ranking,
    fit_piecewise_proxy,
    linear_proxy_allotment,
    output_perturbation_allotment,
    partition_groups,
    piecewise_proxy_experiment,
    proxy_bias_report,
    release_with_redundant_normalizer,
)
from .postprocess import (
    ClipLower,
    ProjectSum,
    StochasticRound,
    TemperatureClip,
    clip_lower,
    expected_clipped,
    pipeline_from_json,
    pipeline_to_json,
    project_sum,
    stochastic_round,
    temperature_clip,
    tune_temperature,
)
from .problems import (
    AllotmentProblem,
    And,
    CountThreshold,
    LinearProblem,
    Or,
    Predicate,
    ProblemOutput,
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
