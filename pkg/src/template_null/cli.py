"""Command-line entry point: ``template-null {fit-template,assess,simulate,power}``.

Exit codes: 0 success, 1 validation error, 2 non-convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .data import (PriorConfig, RunConfig, ValidationError, ingest_csv, load_config,
                   parse_design, validate_test_design)
from .decision import format_chart, physician_chart, write_chart_csv
from .gibbs import RHAT_THRESHOLD, NonConvergenceError, fit_training
from .simlab import SCENARIO_DESIGNS, _floats, load_scenario, power_study, run_table, scenario
from .template import build_template, load_template, save_template

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NONCONVERGED = 2


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    artifacts: list[str] = field(default_factory=list)
    summary: str = ""


def _header(seed: int, settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return f"template-null {__version__} seed={seed} config={hashlib.sha256(blob).hexdigest()[:12]}"


def _configs(args) -> tuple[RunConfig, PriorConfig]:
    run, priors = RunConfig(), PriorConfig()
    if getattr(args, "config", None):
        run, priors = load_config(args.config, run, priors)
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    return run, priors


def cmd_fit_template(args) -> CommandResult:
    run, priors = _configs(args)
    design = parse_design(args.design)
    train = ingest_csv(args.train)
    for w in validate_test_design(train.design, design):
        print(f"warning: {w}", file=sys.stderr)
    if train.unbalanced:
        print("warning: training data are unbalanced", file=sys.stderr)
    post = fit_training(train, priors, run)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = build_template(post, design, run.template_draws, run.seed)
    save_template(t, args.out)
    res = CommandResult(artifacts=[args.out])
    if args.draws_out:
        settings = {"train": train.design, "design": design, "run": asdict(run), "priors": asdict(priors)}
        post.to_csv(args.draws_out, _header(run.seed, settings))
        res.artifacts.append(args.draws_out)
    rhat = ", ".join(f"{k}={v:.4f}" for k, v in post.rhat.items())
    lines = [f"R-hat: {rhat}", f"benchmark slope: {t.benchmark_slope:.4f}",
             f"template: {t.M} values for design {design} -> {args.out}"]
    if not post.converged:
        lines.append(f"NOT CONVERGED: some R-hat exceeds {RHAT_THRESHOLD}; artifact marked converged=false")
        res.exit_code = EXIT_NONCONVERGED
    res.summary = "\n".join(lines)
    return res


def cmd_assess(args) -> CommandResult:
    if not 0 < args.level < 1:
        raise ValidationError("--level must lie in (0, 1)")
    templates = {}
    for path in args.template:
        name = Path(path).stem
        if name in templates:
            raise ValidationError(f"two templates share the name {name!r}")
        templates[name] = load_template(path)
    if len(args.data) == 1:
        subjects = ingest_csv(args.data[0])
    elif len(args.data) == len(args.template):
        subjects = {name: ingest_csv(p) for name, p in zip(templates, args.data)}
    else:
        raise ValidationError("pass one --data file, or one per --template")
    rows = physician_chart(templates, subjects, args.level, seed=args.seed or 0)
    settings = {"level": args.level, "templates": [_template_key(templates[n]) for n in templates]}
    write_chart_csv(rows, args.out, _header(args.seed or 0, settings))
    notes = sorted({w for r in rows if r.report for w in r.report.warnings})
    summary = format_chart(rows)
    if notes:
        summary += "".join(f"warning: {w}\n" for w in notes)
    return CommandResult(EXIT_OK, [args.out], summary.rstrip("\n"))


def _template_key(t) -> dict:
    return {"design": str(t.design), "benchmark": t.benchmark_slope, "M": t.M,
            "seed": t.provenance.get("seed")}


def cmd_simulate(args) -> CommandResult:
    run, priors = _configs(args)
    common = dict(run=run, priors=priors)
    if args.levels is not None:
        common["levels"] = _floats(args.levels)
    if args.replicates is not None:
        common["replicates"] = args.replicates
    if args.scenario in SCENARIO_DESIGNS:
        scn = scenario(args.scenario, seed=run.seed, **common)
    elif Path(args.scenario).is_file():
        # the file's own seed holds unless --seed or --config overrides it
        if args.seed is not None or args.config:
            common["seed"] = run.seed
        scn = load_scenario(args.scenario, **common)
    else:
        raise ValidationError(f"unknown scenario {args.scenario!r}: expected one, two or a scenario file")
    tests = tuple(t.strip().upper() for t in args.tests.split(",") if t.strip())
    if not set(tests) <= {"A", "B", "C"} or not tests:
        raise ValidationError("--tests takes a comma list drawn from A, B, C")
    table = run_table(scn, args.templates, tests)
    settings = {"scenario": asdict(scn), "templates": args.templates, "tests": tests}
    table.to_csv(args.out, _header(scn.seed, settings))
    res = CommandResult(artifacts=[args.out])
    lines = [f"scenario {scn.name}: {scn.test_design}, R={scn.replicates}"]
    flagged = table.meta.get("flagged_templates", 0)
    if "B" in tests:
        lines.append(f"templates: {table.meta['n_templates']} used, {flagged} flagged non-converged")
        if flagged > 0.10 * args.templates:
            res.exit_code = EXIT_NONCONVERGED
    if "C" in tests:
        nf, n = table.meta["flagged_joint_fits"], table.meta["joint_fits"]
        lines.append(f"joint fits: {n} run, {nf} flagged non-converged")
        if nf > 0.10 * n:
            res.exit_code = EXIT_NONCONVERGED
    lines.append(table.to_csv().rstrip("\n"))
    res.summary = "\n".join(lines)
    return res


def cmd_power(args) -> CommandResult:
    run, priors = _configs(args)
    path = Path(args.designs)
    if not path.is_file():
        raise ValidationError(f"design file {path} not found")
    designs = [parse_design(ln) for ln in path.read_text(encoding="utf-8").splitlines()
               if ln.strip() and not ln.lstrip().startswith("#")]
    if not designs:
        raise ValidationError(f"design file {path} lists no designs")
    if not 0 < args.level < 1:
        raise ValidationError("--level must lie in (0, 1)")
    deltas = _floats(args.delta)
    if any(d < 0 for d in deltas) or not deltas:
        raise ValidationError("--delta must list nonnegative values")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curves = power_study(designs, delta_grid=deltas, level=args.level, n_runs=args.runs,
                             seed=run.seed, priors=priors, run=run)
    settings = {"designs": [str(d) for d in designs], "delta": deltas, "level": args.level,
                "runs": args.runs, "run": asdict(run), "priors": asdict(priors)}
    curves.to_csv(args.out, _header(run.seed, settings))
    return CommandResult(EXIT_OK, [args.out],
                         f"{len(designs)} power curves over {len(deltas)} deltas, {curves.n_runs} runs -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="template-null", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, dest="global_seed", help="seed for every subcommand")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit-template", help="fit training data and write a template artifact")
    f.add_argument("--train", required=True, help="training trial CSV")
    f.add_argument("--design", required=True, help='test design, e.g. "250,500g x 5"')
    f.add_argument("--out", required=True, help="template JSON to write")
    f.add_argument("--config", help="key=value run/prior configuration file")
    f.add_argument("--seed", type=int)
    f.add_argument("--draws-out", help="optional CSV of posterior draws")
    f.set_defaults(func=cmd_fit_template)

    a = sub.add_parser("assess", help="assess subjects against one or more templates")
    a.add_argument("--template", required=True, action="append", help="template JSON (repeatable)")
    a.add_argument("--data", required=True, action="append", help="subject trial CSV (one, or one per template)")
    a.add_argument("--level", type=float, default=0.05)
    a.add_argument("--out", required=True, help="chart CSV to write")
    a.add_argument("--seed", type=int, help="bootstrap seed")
    a.set_defaults(func=cmd_assess)

    s = sub.add_parser("simulate", help="error-rate table for a simulation scenario")
    s.add_argument("--scenario", required=True, help="one, two, or a scenario file")
    s.add_argument("--levels", help="comma list; default 0.05,0.10 or the scenario file's")
    s.add_argument("--replicates", type=int, help="default 500 or the scenario file's")
    s.add_argument("--templates", type=int, default=50)
    s.add_argument("--tests", default="A,B,C", help="subset of A,B,C to run")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("power", help="power curves for candidate test designs")
    w.add_argument("--designs", required=True, help="file with one design string per line")
    w.add_argument("--delta", default="0.1:1.3:0.1", help="lo:hi:step or comma list")
    w.add_argument("--level", type=float, default=0.10)
    w.add_argument("--runs", type=int, default=100)
    w.add_argument("--out", required=True)
    w.add_argument("--config")
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_power)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = args.global_seed
    try:
        res = args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    if res.summary:
        print(res.summary)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
