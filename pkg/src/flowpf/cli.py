"""Command line entry point: ``flowpf run|sweep|reproduce``.

Artifacts per run are ``steps.csv``, ``summary.json`` (with the effective
config embedded) and ``summary.txt``. The process exits with status 1 when
any trial aborted, 2 on usage or config errors, 3 when a reproduce check
fails, and 0 otherwise.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SCHEMA_VERSION, ConfigError, load_config, parse_config
from .experiment import CSV_COLUMNS, format_cell, dumps, run_experiment
from .suites import SUITE_RUNS, SUITES, evaluate

log = logging.getLogger("flowpf")

EXIT_OK, EXIT_ABORTED, EXIT_USAGE, EXIT_CHECKS = 0, 1, 2, 3


def resolve_seed(cfg, flag):
    """--seed, then an explicit config seed, then FLOWPF_SEED, then 0."""
    if flag is not None:
        return flag
    if "seed" in cfg.model_fields_set:
        return cfg.seed
    env = os.environ.get("FLOWPF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FLOWPF_SEED must be an integer, got {env!r}") from None
    return cfg.seed


def apply_overrides(cfg, args):
    seed = resolve_seed(cfg, getattr(args, "seed", None))
    return cfg.with_overrides(seed=seed, trials=getattr(args, "trials", None),
                              steps=getattr(args, "steps", None))


def metric_name(cfg):
    return "OMAT" if cfg.scenario.preset == "acoustic" else "MSE"


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def execute_run(cfg, out, workers):
    """Run one config and write its three artifacts into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg.experiment_spec(workers=workers))
    result.to_csv(out / "steps.csv")
    payload = {"schema_version": SCHEMA_VERSION, "config": cfg.effective(), **result.to_dict()}
    _write(out / "summary.json", dumps(payload))
    table = result.summary_table(metric_name(cfg))
    _write(out / "summary.txt", table + "\n")
    return result, table


def _value_dir(parameter, value):
    return f"{parameter}={value:g}" if isinstance(value, float) else f"{parameter}={value}"


def execute_sweep(cfg, out, workers, echo=print):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    param = cfg.sweep.parameter
    results, blocks, rows, merged = {}, [], [], []
    for value in cfg.sweep.values:
        sub = cfg.at_sweep_value(value)
        result, table = execute_run(sub, out / _value_dir(param, value), workers)
        results[value] = result
        block = f"{param} = {value:g}\n{table}"
        echo(block)
        blocks.append(block)
        merged.append({"value": value, "aggregates": result.to_dict()["aggregates"]})
        for row in result.steps:
            rows.append([format_cell(value)] + [format_cell(row[c]) for c in CSV_COLUMNS])
    header = ",".join(("sweep_value",) + CSV_COLUMNS)
    _write(out / "steps.csv", "\n".join([header] + [",".join(r) for r in rows]) + "\n")
    payload = {"schema_version": SCHEMA_VERSION, "config": cfg.effective(),
               "sweep": {"parameter": param, "runs": merged}}
    _write(out / "summary.json", dumps(payload))
    _write(out / "summary.txt", "\n\n".join(blocks) + "\n")
    return results


def run_suite(suite, out, workers=None, trials=None, seed=None, echo=print):
    """Execute every run of a suite; returns ``({run: {value: aggregates}}, any_aborted)``."""
    results, aborted = {}, False
    for run_name, data in SUITE_RUNS[suite].items():
        cfg = parse_config(data).with_overrides(trials=trials, seed=seed)
        target = Path(out) / suite / run_name
        if cfg.sweep is None:
            result, table = execute_run(cfg, target, workers)
            echo(table)
            per_value = {None: result}
        else:
            per_value = execute_sweep(cfg, target, workers, echo=echo)
        results[run_name] = {v: r.aggregates for v, r in per_value.items()}
        aborted = aborted or any(r.any_aborted for r in per_value.values())
    return results, aborted


def cmd_run(args):
    cfg = apply_overrides(load_config(args.config), args)
    out = args.out or cfg.out or "flowpf-out"
    result, table = execute_run(cfg, out, args.workers or cfg.workers or os.cpu_count() or 1)
    print(table)
    return EXIT_ABORTED if result.any_aborted else EXIT_OK


def cmd_sweep(args):
    cfg = apply_overrides(load_config(args.config), args)
    if cfg.sweep is None:
        raise ConfigError("sweep: this config has no sweep axis; add {'parameter': ..., 'values': [...]}")
    out = args.out or cfg.out or "flowpf-out"
    results = execute_sweep(cfg, out, args.workers or cfg.workers or os.cpu_count() or 1)
    return EXIT_ABORTED if any(r.any_aborted for r in results.values()) else EXIT_OK


def cmd_reproduce(args):
    out = Path(args.out or "flowpf-reproduce")
    results, aborted = run_suite(args.suite, out, args.workers or os.cpu_count() or 1,
                                 trials=args.trials, seed=args.seed)
    report = evaluate(args.suite, results)
    text = report.table()
    print(text)
    _write(out / args.suite / "comparison.txt", text + "\n")
    if aborted:
        return EXIT_ABORTED
    return EXIT_OK if report.passed else EXIT_CHECKS


def build_parser():
    parser = argparse.ArgumentParser(prog="flowpf", description="Particle flow particle filter experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-trial warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="base seed (falls back to FLOWPF_SEED)")
        p.add_argument("--workers", type=int, help="trial worker processes")
        p.add_argument("--trials", type=int, help="override the number of trials")
        if config:
            p.add_argument("--steps", type=int, help="override the number of time steps")

    common(sub.add_parser("run", help="run one configuration"))
    common(sub.add_parser("sweep", help="run a configuration once per sweep value"))
    rep = sub.add_parser("reproduce", help="run a benchmark suite and compare with published values")
    rep.add_argument("suite", choices=SUITES)
    common(rep, config=False)
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "reproduce": cmd_reproduce}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"flowpf: config error\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"flowpf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
