"""Command-line entry point: ``pipeadapt <command> [options]``.

Every command writes deterministic CSV/JSON files under ``--out``. Wall-clock
solve times go to separate ``*timing*`` files (or columns) so that reruns with
the same inputs and seed reproduce the other outputs byte for byte.

Exit codes: 0 success, 2 input error, 3 infeasible, 4 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import adapter, optimizer, profiler, synthetic
from .accuracy import pipeline_accuracy
from .catalog import ADMISSIBLE_BATCHES, CatalogError, load_pipeline
from .predictor import PREDICTOR_KINDS, PredictorSpec, load_external_predictions, load_trace
from .simulator import ARRIVAL_MODES, UPSTREAM_BUDGETS, SimConfig, load_schedule, simulate

log = logging.getLogger("pipeadapt")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 2, 3, 4
UNCAPPABLE = "✗"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class InputError(Exception):
    pass


class InfeasibleError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _existing(path: str | None, flag: str) -> Path:
    if path is None:
        raise InputError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{flag}: no such file {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _write_csv(path: Path, header: list, rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _weights(args) -> optimizer.ObjectiveWeights:
    return optimizer.ObjectiveWeights(args.alpha, args.beta, args.delta)


def _predictor(args) -> PredictorSpec:
    if args.predictor not in PREDICTOR_KINDS:
        raise InputError(f"unknown predictor kind {args.predictor!r}; expected one of {PREDICTOR_KINDS}")
    external = None
    if args.predictor == "external":
        external = load_external_predictions(_existing(args.predictions, "--predictions"))
    return PredictorSpec(args.predictor, args.window, args.horizon, args.headroom, external)


def _settings(args, policy: str = "ipa") -> adapter.AdapterSettings:
    return adapter.AdapterSettings(
        interval_s=args.interval,
        history_window_s=args.window,
        predictor=_predictor(args),
        weights=_weights(args),
        fallback=args.fallback,
        batch_set=args.batch_set,
        replica_cap=args.replica_cap,
        policy=policy,
        rim_replicas=args.rim_replicas,
        arrival_mode=args.arrival,
        seed=args.seed,
        reconfig_latency=args.reconfig_latency,
        batch_max_wait=args.batch_max_wait,
        upstream_budget=args.upstream_budget,
    )


def cmd_fit(args) -> int:
    samples = profiler.load_profiles(_existing(args.profiles, "--profiles"))
    if not samples:
        raise InputError(f"{args.profiles}: no profile rows")
    rows = []
    for vid, group in profiler.group_by_variant(samples).items():
        for cores, prof in profiler.group_by_cores(group).items():
            m = profiler.fit_latency(prof, args.max_batch)
            rows.append([vid, cores, repr(m.quad_coeff), repr(m.lin_coeff), repr(m.const_coeff), len(prof)])
    out = _out_dir(args)
    _write_csv(out / "fit.csv", ["variant_id", "cores", "a", "b", "c", "samples"], rows)
    log.info("fitted %d profiles", len(rows))
    return EXIT_OK


def cmd_base_alloc(args) -> int:
    samples = profiler.load_profiles(_existing(args.profiles, "--profiles"))
    if not samples:
        raise InputError(f"{args.profiles}: no profile rows")
    table = profiler.base_allocation_table(samples, args.thresholds, args.stage_sla, args.max_batch)
    names = list(profiler.group_by_variant(samples))
    rows = [
        [f"{row['threshold_rps']:g}"] + [UNCAPPABLE if row[n] is None else row[n] for n in names] for row in table
    ]
    out = _out_dir(args)
    _write_csv(out / "base_alloc.csv", ["threshold_rps", *names], rows)
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK


def cmd_solve(args) -> int:
    pipeline = load_pipeline(_existing(args.pipeline, "--pipeline"))
    inp = optimizer.SolveInput(pipeline, _weights(args), args.rate, args.sla, args.batch_set, args.replica_cap)
    outcome = optimizer.solve(inp)
    out = _out_dir(args)
    if args.timing:
        _write_json(out / "solve_timing.json", {"solve_ms": outcome.solve_time * 1000, "nodes": outcome.nodes_explored})
    if not outcome.feasible:
        _write_json(out / "solution.json", {"feasible": False, "violation": outcome.violation})
        raise InfeasibleError(outcome.violation)
    config = outcome.configuration
    result = {
        "feasible": True,
        "arrival_rate": args.rate,
        "sla": inp.effective_sla,
        "objective": outcome.objective,
        "accuracy_rank": pipeline_accuracy(pipeline, config),
        "cores": optimizer.total_cores(pipeline, config),
        "latency_s": optimizer.pipeline_latency(pipeline, config, args.rate),
        **config.to_dict(),
    }
    _write_json(out / "solution.json", result)
    print(config.describe())
    return EXIT_OK


def cmd_simulate(args) -> int:
    pipeline = load_pipeline(_existing(args.pipeline, "--pipeline"))
    trace = load_trace(_existing(args.trace, "--trace"))
    schedule = load_schedule(_existing(args.schedule, "--schedule"))
    sim = SimConfig(
        trace,
        tuple(schedule),
        args.arrival,
        args.seed,
        args.reconfig_latency,
        args.batch_max_wait,
        upstream_budget=args.upstream_budget,
    )
    report = simulate(pipeline, sim)
    _check_conservation(report)
    report.write(_out_dir(args), "report")
    return EXIT_OK


def _check_conservation(report) -> None:
    if report.total_arrivals != report.total_completions + report.total_drops + report.in_flight:
        raise AssertionError("simulator lost requests: arrivals != completions + drops + in-flight")


def cmd_adapt(args) -> int:
    pipeline = load_pipeline(_existing(args.pipeline, "--pipeline"))
    trace = load_trace(_existing(args.trace, "--trace"))
    if not len(trace):
        raise InputError(f"{args.trace}: trace is empty")
    settings = _settings(args)
    timeline, report = adapter.run_adaptation(pipeline, trace, settings)
    _check_conservation(report)
    bad = adapter.check_timeline(pipeline, timeline)
    if bad:
        raise AssertionError("applied configuration failed feasibility re-check: " + "; ".join(bad))
    out = _out_dir(args)
    timeline.write(out, "timeline", timing=args.timing)
    report.write(out, "report")
    return EXIT_OK


def cmd_compare(args) -> int:
    pipeline = load_pipeline(_existing(args.pipeline, "--pipeline"))
    trace = load_trace(_existing(args.trace, "--trace"))
    if not len(trace):
        raise InputError(f"{args.trace}: trace is empty")
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    unknown = [p for p in policies if p not in adapter.POLICIES]
    if unknown:
        raise InputError(f"unknown policies {unknown}; expected a subset of {adapter.POLICIES}")
    results = adapter.compare_policies(pipeline, trace, _settings(args), policies)
    out = _out_dir(args)
    (out / "comparison.csv").write_text(adapter.comparison_csv(results))
    sys.stdout.write(adapter.comparison_csv(results))
    return EXIT_OK


def cmd_bench_solver(args) -> int:
    rng = np.random.default_rng(args.seed)
    objective_rows, timing_rows = [], []
    times = []
    for rep in range(args.reps):
        pipeline = synthetic.random_pipeline(rng, args.stages, args.variants, max(args.batch_set))
        rate = float(rng.uniform(2.0, 30.0))
        inp = optimizer.SolveInput(pipeline, _weights(args), rate, None, args.batch_set, args.replica_cap)
        outcome = optimizer.solve(inp)
        config = outcome.configuration.describe() if outcome.feasible else "infeasible"
        objective_rows.append([rep, repr(rate), repr(outcome.objective), outcome.nodes_explored, config])
        timing_rows.append([rep, f"{outcome.solve_time * 1000:.3f}"])
        times.append(outcome.solve_time)
    out = _out_dir(args)
    _write_csv(out / "bench_objectives.csv", ["rep", "arrival_rate", "objective", "nodes", "configuration"], objective_rows)
    _write_csv(out / "bench_timing.csv", ["rep", "solve_ms"], timing_rows)
    median = statistics.median(times)
    verdict = "within" if median < args.budget else "over"
    print(
        f"{args.stages}x{args.variants}: median {median * 1000:.2f} ms, max {max(times) * 1000:.2f} ms "
        f"over {args.reps} solves ({verdict} the {args.budget:g} s budget)"
    )
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, *groups: str) -> None:
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=0)
    if "pipeline" in groups:
        p.add_argument("--pipeline", help="pipeline catalog YAML/JSON")
    if "profiles" in groups:
        p.add_argument("--profiles", help="profile CSV: variant_id,cores,batch,latency_s")
        p.add_argument("--max-batch", type=int, default=64)
    if "trace" in groups:
        p.add_argument("--trace", help="load trace CSV: t_s,rps")
    if "solver" in groups:
        p.add_argument("--alpha", type=float, default=1.0, help="accuracy weight")
        p.add_argument("--beta", type=float, default=0.02, help="cost weight")
        p.add_argument("--delta", type=float, default=0.001, help="batch penalty")
        p.add_argument("--batch-set", type=_int_list, default=ADMISSIBLE_BATCHES)
        p.add_argument("--replica-cap", type=int, default=optimizer.DEFAULT_REPLICA_CAP)
        p.add_argument("--timing", action="store_true", help="also write wall-clock solve times")
    if "sim" in groups:
        p.add_argument("--arrival", choices=ARRIVAL_MODES, default="uniform_spaced")
        p.add_argument("--reconfig-latency", type=float, default=0.0)
        p.add_argument("--batch-max-wait", type=float, default=None)
        p.add_argument("--upstream-budget", choices=UPSTREAM_BUDGETS, default="stage_slas")
    if "adapt" in groups:
        p.add_argument("--predictor", default="reactive_max", help=f"one of {', '.join(PREDICTOR_KINDS)}")
        p.add_argument("--predictions", help="t,predicted_rps CSV for --predictor external")
        p.add_argument("--headroom", type=float, default=0.1)
        p.add_argument("--interval", type=int, default=10)
        p.add_argument("--window", type=int, default=120, help="history window in seconds")
        p.add_argument("--horizon", type=int, default=20, help="oracle look-ahead in seconds")
        p.add_argument("--fallback", choices=adapter.FALLBACKS, default="lightest_max_replicas")
        p.add_argument("--rim-replicas", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipeadapt", description="Inference pipeline configuration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit quadratic latency models to profiles")
    _add_common(p, "profiles")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("base-alloc", help="base core allocation per variant and load threshold")
    _add_common(p, "profiles")
    p.add_argument("--thresholds", type=_float_list, default=(5.0, 10.0, 15.0))
    p.add_argument("--stage-sla", type=float, default=None)
    p.set_defaults(func=cmd_base_alloc)

    p = sub.add_parser("solve", help="one-shot configuration for a given arrival rate")
    _add_common(p, "pipeline", "solver")
    p.add_argument("--rate", type=float, required=True, help="arrival rate (RPS)")
    p.add_argument("--sla", type=float, default=None, help="override the pipeline SLA (s)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="replay a trace against a configuration schedule")
    _add_common(p, "pipeline", "trace", "sim")
    p.add_argument("--schedule", help="YAML/JSON list of {t, stages}")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("adapt", help="run the adaptation loop over a trace")
    _add_common(p, "pipeline", "trace", "solver", "sim", "adapt")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("compare", help="compare adaptation policies on one trace")
    _add_common(p, "pipeline", "trace", "solver", "sim", "adapt")
    p.add_argument("--policies", default=",".join(adapter.POLICIES))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench-solver", help="solver timing on synthetic pipelines")
    _add_common(p, "solver")
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--budget", type=float, default=2.0, help="per-solve time budget (s) for the verdict line")
    p.set_defaults(func=cmd_bench_solver)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("IPA_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AssertionError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, CatalogError, profiler.FitError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
