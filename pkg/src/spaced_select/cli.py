"""Command-line entry point: ``spaced-select <subcommand> ...``.

Exit codes: 0 success, 2 validation error (bad input, flags or config),
1 internal failure (including a failed numerical verification).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import analysis, control, fitting, io, metrics, policies, report, simulator
from .errors import SpacedError
from .memory import ModelKind, ModelParams

log = logging.getLogger("spaced_select")

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ingest(path: str, strict: bool):
    rep = io.ingest(path, strict=strict)
    log.info("%s: %s", path, rep.counts())
    return rep.events


# -- subcommands -----------------------------------------------------------


def cmd_ingest(args) -> int:
    rep = io.ingest(args.input, fmt=args.format, strict=args.strict)
    out = _outdir(args.out)
    events_path = out / "events.jsonl"
    io.write_events(events_path, rep.events)
    io.write_manifest(out / "manifest.json", "ingest", {"format": args.format, "strict": args.strict},
                      None, [args.input], [events_path])
    print(json.dumps(rep.counts(), sort_keys=True))
    return EXIT_OK


def cmd_fit(args) -> int:
    events = _ingest(args.input, args.strict)
    cfg = fitting.FitConfig(
        kind=args.kind, learning_rate=args.learning_rate, epochs=args.epochs, l2_item=args.l2,
        recall_clamp=args.clamp, seed=args.seed, workers=args.workers,
    )
    params, rep = fitting.fit(events, cfg)
    out = _outdir(args.out)
    params_path = out / "params.json"
    io.save_params(params_path, params)
    (out / "fit_report.json").write_text(json.dumps(asdict(rep), indent=2) + "\n")
    conf = asdict(cfg)
    conf["kind"] = cfg.kind.value
    io.write_manifest(out / "manifest.json", "fit", conf, args.seed, [args.input], [params_path])
    print(json.dumps({"alpha": params.alpha, "beta": params.beta, "final_nll": rep.final_nll,
                      "epochs_run": rep.epochs_run, "converged": rep.converged}))
    return EXIT_OK


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise SpacedError("INVALID_ARGUMENT", f"config file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise SpacedError("INVALID_ARGUMENT", f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise SpacedError("INVALID_ARGUMENT", f"{path}: config must be a mapping")
    return data


SIM_KEYS = {
    "learners": "n_learners", "items": "n_items", "horizon": "horizon_days",
    "rate": "mean_sessions_per_day", "size": "session_size", "seed": "seed",
    "workers": "workers", "rate_median": "rate_median", "review_seconds": "review_seconds",
}


def _sim_config(args) -> tuple[simulator.SimConfig, dict]:
    conf = {
        "n_learners": 100, "n_items": 100, "horizon_days": 30.0, "mean_sessions_per_day": 1.0,
        "session_size": 10, "seed": 0, "workers": 1, "rate_median": 1.0, "review_seconds": 10,
        "kind": "exponential", "alpha": 0.4, "beta": 0.6, "arms": ["select", "difficulty", "random"],
        "q": [1.0, 2.0, 4.0], "truth_params": None, "scheduler_params": None,
    }
    if args.config:
        file_conf = _load_config(args.config)
        unknown = set(file_conf) - set(conf)
        if unknown:
            raise SpacedError("INVALID_ARGUMENT", f"unknown config keys {sorted(unknown)}")
        conf.update(file_conf)
    for flag, key in SIM_KEYS.items():
        if getattr(args, flag) is not None:
            conf[key] = getattr(args, flag)
    for key in ("kind", "alpha", "beta", "truth_params", "scheduler_params"):
        if getattr(args, key) is not None:
            conf[key] = getattr(args, key)
    if args.arms is not None:
        conf["arms"] = args.arms.split(",")
    if args.q is not None:
        conf["q"] = [float(v) for v in args.q.split(",")]

    if conf["truth_params"]:
        truth = io.load_params(conf["truth_params"])
    else:
        truth = ModelParams(ModelKind.parse(conf["kind"]), float(conf["alpha"]), float(conf["beta"]), {})
    sched = io.load_params(conf["scheduler_params"]) if conf["scheduler_params"] else None
    size = int(conf["session_size"])
    arms = []
    for name in conf["arms"]:
        kind = policies.PolicyKind.parse(name)
        if kind is policies.PolicyKind.SELECT:
            arms.extend(policies.PolicySpec(kind, size, q=float(q)) for q in conf["q"])
        else:
            arms.append(policies.PolicySpec(kind, size))
    cfg = simulator.SimConfig(
        n_learners=int(conf["n_learners"]), n_items=int(conf["n_items"]),
        horizon_days=float(conf["horizon_days"]), mean_sessions_per_day=float(conf["mean_sessions_per_day"]),
        session_size=size, ground_truth=truth, arms=tuple(arms), seed=int(conf["seed"]), scheduler=sched,
        review_seconds=int(conf["review_seconds"]), workers=int(conf["workers"]),
        rate_median=float(conf["rate_median"]),
    )
    return cfg, conf


def cmd_simulate(args) -> int:
    cfg, conf = _sim_config(args)
    res = simulator.run(cfg)
    out = _outdir(args.out)
    outputs = []
    for label, events in res.events.items():
        path = out / f"events_{label}.jsonl"
        io.write_events(path, events)
        outputs.append(path)
    truth_path = out / "truth.json"
    io.save_params(truth_path, res.truth)
    outputs.append(truth_path)
    inputs = [p for p in (args.config, conf["truth_params"], conf["scheduler_params"]) if p]
    conf = dict(conf, session_counts=res.session_counts, audit=res.audit)
    io.write_manifest(out / "manifest.json", "simulate", conf, cfg.seed, inputs, outputs)
    print(json.dumps({k: len(v) for k, v in res.events.items()}, sort_keys=True))
    return EXIT_OK


def _arm_logs(specs: list[str]) -> dict[str, str]:
    logs = {}
    for spec in specs:
        if "=" in spec:
            label, path = spec.split("=", 1)
        else:
            stem = Path(spec).stem
            label = stem[len("events_"):] if stem.startswith("events_") else stem
            path = spec
        if label in logs:
            raise SpacedError("INVALID_ARGUMENT", f"arm {label!r} given twice")
        logs[label] = path
    return logs


def cmd_analyze(args) -> int:
    paths = _arm_logs(args.logs)
    logs = {label: _ingest(path, args.strict) for label, path in paths.items()}
    bins = analysis.figure_bins(range(args.min_reviews, args.max_reviews + 1))
    rep = analysis.compare_arms(
        logs, bins, epsilon=args.epsilon, min_active_days=args.min_active_days,
        min_learners_per_item=args.min_learners, prefixes=args.records == "prefix",
    )
    out = _outdir(args.out)
    outputs = [out / "report.csv", out / "tests.csv"]
    report.write_report_csv(outputs[0], rep)
    report.write_tests_csv(outputs[1], rep)
    if args.svg:
        outputs.append(out / "figure.svg")
        report.write_svg(outputs[-1], rep)
    conf = {k: v for k, v in vars(args).items() if k not in ("func", "logs")}
    conf["arms"] = paths
    conf["excluded_items"] = rep.excluded_items
    io.write_manifest(out / "manifest.json", "analyze", conf, None, list(paths.values()), outputs)
    sig = sum(t.significant for t in rep.tests)
    print(json.dumps({"populated_bins": len(rep.populated_bins()), "tests": len(rep.tests), "significant": sig}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    events = _ingest(args.input, args.strict)
    results = []
    for path in args.params:
        params = io.load_params(path)
        res = metrics.evaluate_model(events, params, args.holdout, args.seed, args.correlation)
        if args.reference:
            res["reference"] = metrics.compare_to_reference(res, args.tolerance)
        res["params"] = path
        res["label"] = Path(path).stem
        results.append(res)
    out = _outdir(args.out)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    io.write_manifest(out / "manifest.json", "evaluate",
                      {"holdout": args.holdout, "correlation": args.correlation, "reference": args.reference},
                      args.seed, [args.input, *args.params], [metrics_path])
    print(metrics.format_table(results))
    if args.reference:
        for res in results:
            for name, cell in res["reference"].items():
                verdict = "agrees" if cell["agrees"] else "DISAGREES"
                print(f"{res['label']:<14} {name:<6} {cell['value']} vs {cell['reference']} -> {verdict}")
    return EXIT_OK


def cmd_session(args) -> int:
    params = io.load_params(args.params)
    state_path = Path(args.state)
    policy = policies.PolicyKind.parse(args.policy)
    if state_path.exists():
        state = io.load_state(state_path)
    elif args.events and args.learner:
        events = _ingest(args.events, args.strict)
        state = io.learner_state_from_events(args.learner, events, params.items, policy)
    else:
        raise SpacedError("INVALID_ARGUMENT", f"no state file at {state_path} (pass --events and --learner to build one)")
    rng = np.random.default_rng(args.seed)
    if policy is policies.PolicyKind.SELECT:
        spec = policies.PolicySpec(policy, args.size, q=args.q, seed=args.seed)
        items = policies.build_session_select(state.states, params, spec, args.now, rng)
    elif policy is policies.PolicyKind.DIFFICULTY:
        cursor = state.cursor or policies.DifficultyCursor.from_params(params, [s.item_id for s in state.states])
        items, state.cursor = policies.build_session_difficulty(cursor, args.size)
    else:
        items = policies.build_session_random([s.item_id for s in state.states], args.size, rng)
    state.policy = policy
    io.save_state(state_path, state)
    manifest = state_path.with_name(state_path.stem + ".manifest.json")
    io.write_manifest(manifest, "session", {"policy": policy.value, "q": args.q, "size": args.size, "now": args.now},
                      args.seed, [args.params], [state_path])
    print(json.dumps(items))
    return EXIT_OK


def cmd_verify_hjb(args) -> int:
    cfg = control.ControlConfig(args.q)
    grid = control.residual_grid(args.d, args.alpha, args.beta, cfg, args.c1, args.c2, args.u, args.grid)
    out = _outdir(args.out)
    path = out / "residuals.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "delta", "residual"])
        w.writerows([repr(float(v)) for v in row] for row in grid)
    worst = float(np.max(np.abs(grid[:, 3]))) if len(grid) else 0.0
    io.write_manifest(out / "manifest.json", "verify-hjb", {k: v for k, v in vars(args).items() if k != "func"},
                      None, [], [path])
    print(json.dumps({"points": len(grid), "max_abs_residual": worst, "tolerance": args.tol}))
    return EXIT_OK if worst < args.tol else EXIT_INTERNAL


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spaced-select", description="Retention-optimal spaced repetition toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate and canonicalise a review log")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit memory-model parameters")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="exponential", choices=[k.value for k in ModelKind])
    p.add_argument("--learning-rate", type=float, default=10.0)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--clamp", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true")

    p = add("simulate", cmd_simulate, "simulate learners under each policy arm")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    for flag, typ in (("learners", int), ("items", int), ("horizon", float), ("rate", float), ("size", int),
                      ("seed", int), ("workers", int), ("rate-median", float), ("review-seconds", int)):
        p.add_argument(f"--{flag}", type=typ)
    p.add_argument("--kind", choices=[k.value for k in ModelKind])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--arms", help="comma-separated subset of select,difficulty,random")
    p.add_argument("--q", help="comma-separated q values for the select arm")
    p.add_argument("--truth-params", help="parameter file used as ground truth")
    p.add_argument("--scheduler-params", help="parameter file the policies plan with")

    p = add("analyze", cmd_analyze, "compare arms by normalised empirical forgetting rate")
    p.add_argument("logs", nargs="+", help="ARM=path.jsonl, or events_<arm>.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--records", choices=("prefix", "pair"), default="prefix")
    p.add_argument("--epsilon", type=float, default=analysis.EPSILON)
    p.add_argument("--min-active-days", type=float, default=2.0)
    p.add_argument("--min-learners", type=int, default=5)
    p.add_argument("--min-reviews", type=int, default=2)
    p.add_argument("--max-reviews", type=int, default=8)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--strict", action="store_true")

    p = add("evaluate", cmd_evaluate, "MAE / AUC / half-life correlation of fitted models")
    p.add_argument("--input", required=True)
    p.add_argument("--params", required=True, action="append", help="repeat to evaluate several models")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlation", choices=("spearman", "pearson"), default="spearman")
    p.add_argument("--reference", action="store_true", help="flag agreement with the published table")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")

    p = add("session", cmd_session, "build the next study session for one learner")
    p.add_argument("--state", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--policy", choices=[k.value for k in policies.PolicyKind], default="select")
    p.add_argument("--q", type=float)
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--now", type=int, required=True, help="epoch seconds")
    p.add_argument("--events", help="review log used to build a missing state file")
    p.add_argument("--learner")
    p.add_argument("--strict", action="store_true")

    p = add("verify-hjb", cmd_verify_hjb, "check the HJB equation on a grid")
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--d", type=float, default=2.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default=".")
    return parser


def _configure_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}
    logging.basicConfig(
        level=level.get(os.environ.get("SPACED_LOG", "warn").lower(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_INVALID
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SpacedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
