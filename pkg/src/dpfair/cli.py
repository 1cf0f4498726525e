"""Config-driven experiment runner and report emission.

Subcommands
-----------
synth                 generate a synthetic raw dataset CSV
release               write one privacy-preserving release of a dataset
audit                 run the bias/fairness estimator from a config file
compose-bound         fairness bound of a predicate composition
postprocess-analyze   clipped-mean closed form and sum-projection checks
mitigate              proxy / output-perturbation / piecewise / temperature runs
cost-of-privacy       budget shortfall from a signed-bias report

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/domain
error.  Failures print a structured JSON error object to stderr.

Every experiment is reproducible: reports embed the full config and the
toolkit version, numbers serialize as shortest round-trip decimals, and
rerunning with the same master seed yields byte-identical CSVs for any
shard count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (
    load_allotment_csv,
    load_minority_csv,
    synthetic_from_spec,
    write_dataset_csv,
)
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
    FairnessReport,
    compose_fairness_bound,
    empirical_bias,
    report_from_json,
    report_to_csv,
    report_to_json,
)
from .kernels import clipped_laplace_moments
from .mechanisms import Dataset, PrivacySpec, RngStream, release
from .mitigation import (
    compare_mitigations,
    cost_of_privacy,
    cost_ranking,
    piecewise_proxy_experiment,
)
from .postprocess import expected_clipped, pipeline_from_json, project_sum, tune_temperature
from .problems import (
    AllotmentProblem,
    LinearProblem,
    minority_language_rule,
    predicate_from_json,
)


def _resolve_dataset(block: dict):
    """Returns (Dataset, csv_weights_or_None)."""
    if not isinstance(block, dict):
        raise ConfigError("dataset block must be an object")
    if "synthetic" in block:
        return synthetic_from_spec(block["synthetic"]), None
    if "csv" in block:
        kind = block.get("kind", "allotment")
        if kind == "allotment":
            data, weights = load_allotment_csv(
                block["csv"], filter_min_count=block.get("filter_min_count")
            )
            return data, weights
        if kind == "minority":
            return load_minority_csv(
                block["csv"], filter_min_lep=block.get("filter_min_lep")
            ), None
        raise ConfigError(f"unknown dataset kind {kind!r}")
    raise ConfigError("dataset block needs a 'csv' or 'synthetic' entry")


def _resolve_weights(spec, data: Dataset, csv_weights):
    if spec == "csv" or spec is None:
        if csv_weights is not None:
            return np.asarray(csv_weights, dtype=np.float64)
        return np.ones(data.n)
    if isinstance(spec, (int, float)):
        return np.full(data.n, float(spec))
    weights = np.asarray(spec, dtype=np.float64)
    if weights.size != data.n:
        raise ConfigError(f"weights length {weights.size} != dataset size {data.n}")
    return weights


def _resolve_problem(block: dict, data: Dataset, csv_weights):
    """Returns (problem, attr)."""
    if not isinstance(block, dict) or len(block) != 1:
        raise ConfigError("problem block must name exactly one problem kind")
    (kind, body), = block.items()
    if kind == "allotment":
        attr = body.get("attr", "count")
        weights = _resolve_weights(body.get("weights"), data, csv_weights)
        problem = AllotmentProblem(weights, normalizer=body.get("normalizer"))
        return problem, attr
    if kind == "linear":
        return (
            LinearProblem(float(body.get("coefficient", 1.0)), float(body.get("intercept", 0.0))),
            body.get("attr", "count"),
        )
    if kind == "predicate":
        return predicate_from_json(body), None
    if kind == "minority_rule":
        return minority_language_rule(**(body or {})), None
    raise ConfigError(f"unknown problem kind {kind!r}")


def _check_attrs(problem, attr, data: Dataset):
    from .problems import predicate_attributes

    if attr is not None and attr not in data.attribute_names:
        raise ConfigError(f"attribute {attr!r} not in dataset header {data.attribute_names}")
    if attr is None and not hasattr(problem, "batch_decisions"):
        missing = predicate_attributes(problem) - set(data.attribute_names)
        if missing:
            raise ConfigError(f"predicate references unknown attributes {sorted(missing)}")


def _fmt(value: float) -> str:
    return repr(float(value))


def run_experiment(config: dict, out_dir: str | None = None) -> dict:
    """Run the configured estimator for every epsilon and write reports.

    Writes, per epsilon, a FairnessReport JSON and a plot-data CSV with
    entities sorted by size, plus one alpha summary CSV across epsilons.
    Returns the written paths and the alpha table.
    """
    for key in ("dataset", "problem", "privacy"):
        if key not in config:
            raise ConfigError(f"config is missing the {key!r} block")
    data, csv_weights = _resolve_dataset(config["dataset"])
    problem, attr = _resolve_problem(config["problem"], data, csv_weights)
    _check_attrs(problem, attr, data)

    privacy = config["privacy"]
    epsilons = privacy.get("epsilons")
    if not epsilons:
        raise ConfigError("privacy.epsilons must be a nonempty list")
    sensitivity = float(privacy.get("sensitivity", 1.0))

    pipeline = pipeline_from_json(config.get("pipeline", []))

    est = config.get("estimator", {})
    samples = int(est.get("samples", 10_000))
    master_seed = int(est.get("master_seed", 0))
    shards = int(est.get("shards", 1))
    mode = est.get("mode")
    antithetic = bool(est.get("antithetic", False))
    true_positives_only = bool(est.get("true_positives_only", False))

    outputs = config.get("outputs", {})
    directory = Path(out_dir if out_dir is not None else outputs.get("dir", "."))
    directory.mkdir(parents=True, exist_ok=True)
    prefix = outputs.get("prefix", "experiment")

    size_attr = attr if attr is not None else data.attribute_names[0]
    order = np.argsort(data.column(size_attr), kind="stable")

    written = []
    alpha_rows = []
    for j, eps in enumerate(epsilons):
        rng = RngStream(master_seed, stream_id=j)
        report = empirical_bias(
            problem,
            data,
            PrivacySpec(float(eps), sensitivity),
            samples,
            rng,
            pipeline,
            attr=attr,
            mode=mode,
            shards=shards,
            antithetic=antithetic,
            true_positives_only=true_positives_only,
        )
        report.config["toolkit_version"] = __version__
        report.config["experiment"] = config
        stem = f"{prefix}_eps{eps}"
        json_path = directory / f"{stem}.report.json"
        json_path.write_text(json.dumps(report_to_json(report), indent=2) + "\n")
        csv_path = directory / f"{stem}.plot.csv"
        csv_path.write_text(_plot_csv(report, data, size_attr, order))
        written.extend([str(json_path), str(csv_path)])
        alpha_rows.append((eps, report.alpha, report.alpha_std_error()))

    alpha_path = directory / f"{prefix}_alpha.csv"
    lines = ["epsilon,alpha,alpha_std_error"]
    for eps, alpha, se in alpha_rows:
        lines.append(f"{_fmt(eps)},{_fmt(alpha)},{_fmt(se)}")
    alpha_path.write_text("\n".join(lines) + "\n")
    written.append(str(alpha_path))
    return {"written": written, "alphas": alpha_rows}


def _plot_csv(report: FairnessReport, data: Dataset, size_attr: str, order) -> str:
    """Per-entity plot data sorted by entity size (raw attribute value)."""
    by_id = {e.entity_id: (e, d) for e, d in zip(report.per_entity, report.disparity)}
    sizes = data.column(size_attr)
    lines = [
        "entity_id,size,true_value,expected_private_value,bias,abs_bias,std_error,disparity"
    ]
    for idx in order:
        eid = data.entity_ids[int(idx)]
        if eid not in by_id:  # filtered out (e.g. true positives only)
            continue
        e, d = by_id[eid]
        lines.append(
            ",".join(
                [
                    eid,
                    _fmt(sizes[int(idx)]),
                    _fmt(e.true_value),
                    _fmt(e.expected_private_value),
                    _fmt(e.bias),
                    _fmt(e.absolute_bias),
                    _fmt(e.std_error),
                    _fmt(d),
                ]
            )
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Subcommand handlers


def _cmd_synth(args) -> int:
    spec = {
        "generator": args.generator.replace("-", "_"),
        "n": args.n,
        "seed": args.seed,
        "exponent": args.exponent,
        "min": args.minimum,
        "max": args.maximum,
    }
    data = synthetic_from_spec(spec)
    write_dataset_csv(data, args.out)
    print(json.dumps({"written": str(args.out), "n": data.n, "attributes": data.attribute_names}))
    return 0


def _load_any_csv(path: str, kind: str):
    if kind == "minority":
        return load_minority_csv(path), None
    return load_allotment_csv(path)


def _cmd_release(args) -> int:
    data, weights = _load_any_csv(args.data, args.kind)
    eps = _single_epsilon(args)
    spec = PrivacySpec(eps, args.sensitivity)
    out = release(data, spec, RngStream(args.seed))
    write_dataset_csv(out, args.out, weights=weights)
    print(json.dumps({"written": str(args.out), "epsilon": eps, "scale": spec.scale}))
    return 0


def _cmd_audit(args) -> int:
    config = json.loads(Path(args.config).read_text())
    if args.epsilon:
        config.setdefault("privacy", {})["epsilons"] = args.epsilon
    est = config.setdefault("estimator", {})
    if args.samples is not None:
        est["samples"] = args.samples
    if args.seed is not None:
        est["master_seed"] = args.seed
    if args.shards is not None:
        est["shards"] = args.shards
    result = run_experiment(config, out_dir=args.out_dir)
    print(json.dumps({"written": result["written"]}, indent=2))
    return 0


def _cmd_compose_bound(args) -> int:
    bound = compose_fairness_bound(args.op, args.alpha1, args.alpha2, args.bmin1, args.bmin2)
    print(json.dumps({"op": args.op, "bound": bound}))
    return 0


def _cmd_postprocess_analyze(args) -> int:
    result: dict = {}
    if args.x is not None:
        closed = expected_clipped(args.x, args.level, args.scale)
        u = RngStream(args.seed).generator().random(args.samples)
        s1, s2 = clipped_laplace_moments(args.x, args.level, args.scale, u)
        mean = s1 / args.samples
        var = max(s2 - args.samples * mean * mean, 0.0) / (args.samples - 1)
        se = (var / args.samples) ** 0.5
        result["clipped_mean"] = {
            "closed_form": closed,
            "monte_carlo": mean,
            "std_error": se,
            "z_score": (mean - closed) / se if se else 0.0,
        }
    if args.values:
        z = np.array([float(v) for v in args.values.split(",")])
        projected = project_sum(z, args.target)
        again = project_sum(projected, args.target)
        pairwise_before = z[:, None] - z[None, :]
        pairwise_after = projected[:, None] - projected[None, :]
        result["projection"] = {
            "input": z.tolist(),
            "projected": projected.tolist(),
            "sum": float(projected.sum()),
            "idempotent": bool(np.array_equal(projected, again)),
            "max_pairwise_shift": float(np.abs(pairwise_after - pairwise_before).max()),
        }
    if not result:
        raise ConfigError("nothing to analyze: pass --x and/or --values")
    print(json.dumps(result, indent=2))
    return 0


def _single_epsilon(args) -> float:
    if not args.epsilon:
        raise ConfigError("this command needs exactly one --epsilon")
    if len(args.epsilon) != 1:
        raise ConfigError("this command takes exactly one --epsilon")
    return float(args.epsilon[0])


def _cmd_mitigate(args) -> int:
    eps = _single_epsilon(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed)
    samples = args.samples or 10_000

    if args.strategy in ("proxy", "output-perturbation", "plain"):
        data, weights = _load_any_csv(args.data, "allotment")
        name = args.strategy.replace("-", "_")
        results = compare_mitigations(
            data, weights, eps, samples, rng, strategies=(name,)
        )
        body = results[name]
        doc = {k: v for k, v in body.items() if not isinstance(v, FairnessReport)}
        doc["strategy"] = args.strategy
        doc["epsilon"] = eps
        doc["non_private_tuning"] = False
        for key in ("report", "conditional_report"):
            if key in body:
                path = out_dir / f"mitigate_{name}_{key}.json"
                path.write_text(json.dumps(report_to_json(body[key]), indent=2) + "\n")
                doc[f"{key}_path"] = str(path)
    elif args.strategy == "piecewise":
        data, _ = _load_any_csv(args.data, "minority")
        result = piecewise_proxy_experiment(
            data, eps, args.groups, samples, rng, method=args.method
        )
        proxy_path = out_dir / "piecewise_proxy.json"
        proxy_path.write_text(json.dumps(result["proxy"].to_json(), indent=2) + "\n")
        doc = {
            "strategy": "piecewise",
            "epsilon": eps,
            "method": args.method,
            "groups": result["groups"],
            "proxy_path": str(proxy_path),
        }
    elif args.strategy == "temperature":
        data, _ = _load_any_csv(args.data, "allotment")
        domain = np.unique(data.column("count"))
        t_star, score = tune_temperature(
            domain, PrivacySpec(eps, args.sensitivity), m=samples, rng=rng, level=args.level
        )
        doc = {
            "strategy": "temperature",
            "epsilon": eps,
            "temperature": t_star,
            "score": score,
            "level": args.level,
            "non_private_tuning": True,
        }
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown strategy {args.strategy!r}")

    path = out_dir / f"mitigate_{args.strategy.replace('-', '_')}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({"written": str(path)}))
    return 0


def _cmd_cost_of_privacy(args) -> int:
    if args.report:
        report = report_from_json(json.loads(Path(args.report).read_text()))
        cost = cost_of_privacy(report, args.budget)
        doc = {
            "budget": cost.budget,
            "total": cost.total,
            "per_entity": dict(zip(cost.entity_ids, cost.per_entity_shortfall)),
        }
    else:
        if not args.data:
            raise ConfigError("cost-of-privacy needs --report or --data")
        data, weights = _load_any_csv(args.data, "allotment")
        eps = _single_epsilon(args)
        ranking = cost_ranking(
            data, weights, eps, args.budget, args.samples or 10_000, RngStream(args.seed)
        )
        doc = {
            "budget": args.budget,
            "totals": {name: cost.total for name, cost in ranking.items()},
        }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        print(json.dumps({"written": str(args.out)}))
    else:
        print(json.dumps(doc, indent=2))
    return 0


# --------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpfair",
        description="Audit bias and fairness of decisions on differentially private data.",
    )
    parser.add_argument("--version", action="version", version=f"dpfair {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--samples", type=int, default=None, help="Monte Carlo samples")
    common.add_argument("--shards", type=int, default=None, help="worker shards")
    common.add_argument(
        "--epsilon", type=float, action="append", default=[], help="privacy loss (repeatable)"
    )
    common.add_argument("--out-dir", default=".", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset CSV")
    p.add_argument("--generator", required=True, choices=["power-law", "linear-ramp", "minority"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--exponent", type=float, default=1.5)
    p.add_argument("--minimum", type=int, default=10)
    p.add_argument("--maximum", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("release", parents=[common], help="release a dataset once")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["allotment", "minority"], default="allotment")
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_release)

    p = sub.add_parser("audit", parents=[common], help="run a configured fairness audit")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_audit, seed=None, out_dir=None)

    p = sub.add_parser("compose-bound", parents=[common], help="composition fairness bound")
    p.add_argument("--op", required=True, choices=["and", "or", "xor"])
    p.add_argument("--alpha1", type=float, required=True)
    p.add_argument("--alpha2", type=float, required=True)
    p.add_argument("--bmin1", type=float, default=0.0)
    p.add_argument("--bmin2", type=float, default=0.0)
    p.set_defaults(func=_cmd_compose_bound)

    p = sub.add_parser(
        "postprocess-analyze", parents=[common], help="closed-form post-processing checks"
    )
    p.add_argument("--x", type=float, default=None, help="true value for the clipped-mean check")
    p.add_argument("--level", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--values", default=None, help="comma-separated vector to sum-project")
    p.add_argument("--target", type=float, default=1.0)
    p.set_defaults(func=_cmd_postprocess_analyze, samples=100_000)

    p = sub.add_parser("mitigate", parents=[common], help="run a mitigation strategy")
    p.add_argument("--data", required=True)
    p.add_argument(
        "--strategy",
        required=True,
        choices=["proxy", "output-perturbation", "plain", "piecewise", "temperature"],
    )
    p.add_argument("--groups", type=int, default=9)
    p.add_argument("--method", choices=["least_squares", "hinge"], default="least_squares")
    p.add_argument("--level", type=float, default=0.0)
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.set_defaults(func=_cmd_mitigate)

    p = sub.add_parser("cost-of-privacy", parents=[common], help="budget shortfall accounting")
    p.add_argument("--report", default=None, help="FairnessReport JSON (signed mode)")
    p.add_argument("--data", default=None, help="allotment CSV for the three-way ranking")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_cost_of_privacy)

    return parser


_EXIT_CODES = [
    (ConfigError, 2, "config"),
    (DataError, 3, "data"),
    ((InvalidParameterError, DomainError, NormalizerError, InvalidModeError), 4, "numeric"),
]


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DpfairError as exc:
        for types, code, kind in _EXIT_CODES:
            if isinstance(exc, types):
                print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
                return code
        print(json.dumps({"error": "internal", "message": str(exc)}), file=sys.stderr)
        return 4
    except (json.JSONDecodeError, FileNotFoundError) as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
