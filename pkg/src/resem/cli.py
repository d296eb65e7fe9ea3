"""Command-line entry point: ``resem design|estimate|simulate|frt``.

Results go to stdout as JSON unless ``--out`` is given.  Exit status is 0 on
success, 2 when inputs fail validation and 3 when a rejection loop starves.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io
from .balance import BalanceCriteria
from .design import DEFAULT_MAX_ATTEMPTS, DesignSpec, Realization, RngStream, run_resem, run_resem_single_stage
from .errors import AcceptanceStarvationError, ResemError
from .estimation import KnowledgeFlags
from .inference import analyze
from .randomization_test import GridSpec, SharpNull, StatisticSpec, frt_p_value, invert_tests_ci
from .simulation import SimulationConfig, run_replications

EXIT_OK, EXIT_INVALID, EXIT_STARVED = 0, 2, 3


def _read_json(path) -> dict:
    with open(path) as handle:
        return json.load(handle)


def _emit(payload: dict, out) -> None:
    text = json.dumps(io._jsonable(payload), indent=2) + "\n"
    if out:
        with open(out, "w") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _criteria_record(criteria: BalanceCriteria) -> dict:
    return {
        "dim_sampling": criteria.dim_sampling,
        "dim_assignment": criteria.dim_assignment,
        "threshold_sampling": criteria.threshold_sampling,
        "threshold_assignment": criteria.threshold_assignment,
    }


def _criteria_from(record: dict) -> BalanceCriteria:
    def threshold(value):
        return math.inf if value is None else float(value)

    return BalanceCriteria(
        int(record["dim_sampling"]),
        int(record["dim_assignment"]),
        threshold(record.get("threshold_sampling")),
        threshold(record.get("threshold_assignment")),
    )


def _load_design(path) -> tuple[Realization, BalanceCriteria]:
    document = _read_json(path)
    if "criteria" not in document or "realization" not in document:
        raise io.SchemaError(f"{path} is not a design document (needs 'criteria' and 'realization')")
    return Realization.from_json_dict(document["realization"]), _criteria_from(document["criteria"])


def _cmd_design(args) -> None:
    schema = _read_json(args.schema)
    pop = io.load_covariates(args.covariates, schema)
    spec = DesignSpec.from_acceptance(
        pop, args.n, args.n1, args.p_sampling, args.p_assignment, max_attempts=args.max_attempts
    )
    stream = RngStream(args.seed)
    runner = run_resem_single_stage if args.single_stage else run_resem
    realization = runner(pop, spec, stream)
    _emit({"criteria": _criteria_record(spec.criteria), "realization": realization.to_json_dict()}, args.out)


def _vector(text):
    if text is None:
        return None
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _cmd_estimate(args) -> None:
    realization, criteria = _load_design(args.design)
    exp = io.load_experiment(args.data, _read_json(args.schema), realization)
    knowledge = KnowledgeFlags(not args.no_sampling_knowledge, not args.no_assignment_knowledge)
    report = analyze(
        exp,
        criteria,
        args.adjust,
        beta=_vector(args.beta),
        gamma=_vector(args.gamma),
        knowledge=knowledge,
        alpha=args.alpha,
        mc_draws=args.mc_draws,
        seed=args.mc_seed,
    )
    _emit(report.to_json_dict(), args.out)


def _cmd_simulate(args) -> None:
    payload = _read_json(args.config) if args.config else {}
    if args.replicates is not None:
        payload["replicates"] = args.replicates
    if args.full_scale:
        payload["full_scale"] = True
    if args.seed is not None:
        payload["seed"] = args.seed
    config = SimulationConfig.from_dict(payload)
    summary = run_replications(config)
    out = args.out or config.output_path
    fmt = args.format or config.output_format
    if out:
        io.write_report(summary, out, fmt)
    else:
        _emit(
            {"config": config.to_dict(), "population": summary.population, "rows": [r.record() for r in summary.rows]},
            None,
        )


def _cmd_frt(args) -> None:
    realization, criteria = _load_design(args.design)
    exp = io.load_experiment(args.data, _read_json(args.schema), realization)
    statistic = StatisticSpec("zero" if args.statistic == "dim" else "estimated", not args.no_prepivot)
    knowledge = KnowledgeFlags(not args.no_sampling_knowledge, not args.no_assignment_knowledge)
    result = frt_p_value(
        exp,
        SharpNull.constant(args.null_effect, exp.n),
        criteria,
        statistic,
        args.draws,
        RngStream(args.seed),
        knowledge,
        args.mode,
    )
    payload = {"null_effect": args.null_effect, "statistic": args.statistic, **result.to_json_dict()}
    if args.invert:
        interval = invert_tests_ci(
            exp, criteria, args.alpha, statistic, args.draws, RngStream(args.seed), GridSpec(), knowledge
        )
        payload["interval"] = {
            "lo": interval.lo,
            "hi": interval.hi,
            "alpha": args.alpha,
            "empty": interval.empty,
            "truncated": interval.truncated,
            "resolution": interval.resolution,
        }
    _emit(payload, args.out)


def _knowledge_flags(parser) -> None:
    parser.add_argument("--no-sampling-knowledge", action="store_true", help="treat the sampling criterion as unknown")
    parser.add_argument(
        "--no-assignment-knowledge", action="store_true", help="treat the assignment criterion as unknown"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resem", description="Rerandomized survey experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    design = sub.add_parser("design", help="draw a sample and treatment assignment")
    design.add_argument("--covariates", required=True, help="population CSV with covariate columns")
    design.add_argument("--schema", required=True, help="JSON mapping column roles to CSV headers")
    design.add_argument("--n", type=int, required=True)
    design.add_argument("--n1", type=int, required=True)
    design.add_argument("--p-sampling", type=float, default=1.0)
    design.add_argument("--p-assignment", type=float, default=1.0)
    design.add_argument("--seed", type=int, default=0)
    design.add_argument("--max-attempts", type=int, default=DEFAULT_MAX_ATTEMPTS)
    design.add_argument("--single-stage", action="store_true", help="accept sample and assignment jointly")
    design.add_argument("--out")
    design.set_defaults(handler=_cmd_design)

    estimate = sub.add_parser("estimate", help="point estimate and confidence interval")
    estimate.add_argument("--data", required=True, help="population CSV with an outcome column")
    estimate.add_argument("--schema", required=True)
    estimate.add_argument("--design", required=True, help="JSON written by the design command")
    estimate.add_argument("--alpha", type=float, default=0.05)
    estimate.add_argument("--adjust", choices=("none", "fixed", "estimated"), default="none")
    estimate.add_argument("--beta", help="comma-separated coefficients on the sample covariates")
    estimate.add_argument("--gamma", help="comma-separated coefficients on the population covariates")
    estimate.add_argument("--mc-draws", type=int, default=10**6)
    estimate.add_argument("--mc-seed", type=int, default=20240917)
    _knowledge_flags(estimate)
    estimate.add_argument("--out")
    estimate.set_defaults(handler=_cmd_estimate)

    simulate = sub.add_parser("simulate", help="coverage study on the model population")
    simulate.add_argument("--config", help="JSON simulation config; defaults apply when omitted")
    simulate.add_argument("--replicates", type=int)
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--full-scale", action="store_true")
    simulate.add_argument("--format", choices=("csv", "json"))
    simulate.add_argument("--out")
    simulate.set_defaults(handler=_cmd_simulate)

    frt = sub.add_parser("frt", help="randomization test of a constant effect")
    frt.add_argument("--data", required=True)
    frt.add_argument("--schema", required=True)
    frt.add_argument("--design", required=True)
    frt.add_argument("--null-effect", type=float, default=0.0)
    frt.add_argument("--statistic", choices=("dim", "adjusted"), default="dim")
    frt.add_argument("--no-prepivot", action="store_true", help="use the raw distance |estimate - c|")
    frt.add_argument("--draws", type=int, default=999)
    frt.add_argument("--mode", choices=("sample", "enumerate", "auto"), default="sample")
    frt.add_argument("--seed", type=int, default=0)
    frt.add_argument("--invert", action="store_true", help="also report the test-inversion interval")
    frt.add_argument("--alpha", type=float, default=0.05)
    _knowledge_flags(frt)
    frt.add_argument("--out")
    frt.set_defaults(handler=_cmd_frt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.handler(args)
    except AcceptanceStarvationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARVED
    except (ResemError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
