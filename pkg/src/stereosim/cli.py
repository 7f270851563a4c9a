"""Command-line driver.

Subcommands: ``run``, ``batch``, ``metrics``, ``heatmap``, ``ablation`` and
``llm-eval``.  Global flags ``--seed``, ``--out-dir`` and ``--verbosity`` may
appear before or after the subcommand.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration or
unusable input, 3 LLM transport exhausted (a partial log is kept).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

from .agents.llm import LlmConfigError, client_from_params
from .config import load_config, load_profiles, read_toml
from .core import ConfigError, ProfileMode, SimConfig, validate_config
from .engine import run_experiment
from .evaluation import EvaluationError, association_matrix
from .logio import CorruptLogError, RunLogWriter, read_run_log
from .metrics import MetricError, meta_aggregate, reports_csv, run_metrics
from .qualitative import llm_qualitative_eval

logger = logging.getLogger("stereosim")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3
LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}


def _status_code(status: str, error: Optional[dict]) -> int:
    if status == "complete":
        return EXIT_OK
    if error and error.get("kind") == "transport_exhausted":
        return EXIT_TRANSPORT
    if error and error.get("kind") == "llm_config":
        return EXIT_CONFIG
    return EXIT_FAIL


def execute(config: SimConfig, path: Path) -> tuple[str, Optional[dict]]:
    """Run one experiment, streaming its log to ``path``."""
    with RunLogWriter(path) as sink:
        log = run_experiment(config, sink=sink)
    return log.status, log.error


def _report_config_error(exc: ConfigError) -> int:
    print("invalid configuration:", file=sys.stderr)
    for v in exc.violations:
        print(f"  - {v}", file=sys.stderr)
    return EXIT_CONFIG


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands ------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, args.set, args.seed)
        out = Path(args.out_dir)
        path = out / (args.name or f"run_seed{config.seed}.ndjson")
        status, error = execute(config, path)
    except ConfigError as exc:
        return _report_config_error(exc)
    except LlmConfigError as exc:
        print(f"LLM configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    if error:
        print(f"run ended early ({error['kind']}): {error['message']}", file=sys.stderr)
    return _status_code(status, error)


def _batch_job(job: tuple[dict, str]) -> dict:
    config_dict, path = job
    config = SimConfig.from_dict(config_dict)
    try:
        status, error = execute(config, Path(path))
    except Exception as exc:  # recorded in the manifest; the batch continues
        status, error = "error", {"kind": type(exc).__name__, "message": str(exc)}
    return {"seed": config.seed, "path": path, "status": status, "error": error}


Runner = Callable[[tuple[dict, str]], dict]


def cmd_batch(args, runner: Runner = _batch_job) -> int:
    if args.n_runs < 1:
        print("--n-runs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        base = load_config(args.config, args.set, args.seed)
    except ConfigError as exc:
        return _report_config_error(exc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i in range(args.n_runs):
        config = dataclasses.replace(base, seed=base.seed + i)
        jobs.append((config.to_dict(), str(out / f"run_seed{config.seed}.ndjson")))
    if args.parallelism > 1:
        with ProcessPoolExecutor(args.parallelism) as pool:
            results = list(pool.map(runner, jobs))
    else:
        results = [runner(j) for j in jobs]
    failures = [r for r in results if r["status"] != "complete"]
    _write_json(out / "manifest.json", {"runs": results, "failures": failures})
    for f in failures:
        print(f"run with seed {f['seed']} failed: {f['error']}", file=sys.stderr)
    print(out / "manifest.json")
    return EXIT_OK


def _read_logs(paths: Sequence[str]) -> list:
    logs = []
    for p in paths:
        try:
            logs.append((p, read_run_log(p)))
        except (CorruptLogError, OSError) as exc:
            logger.warning("skipping %s: %s", p, exc)
    return logs


def cmd_metrics(args) -> int:
    logs = _read_logs(args.logs)
    reports, labels = [], []
    for path, log in logs:
        try:
            reports.append(run_metrics(log, not args.no_probes))
            labels.append(Path(path).stem)
        except MetricError as exc:
            logger.warning("skipping %s: %s", path, exc)
    if not reports:
        print("no usable logs", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"reports": {label: r.to_dict() for label, r in zip(labels, reports)}}
    (out / "metrics.csv").write_text(reports_csv(reports, labels), encoding="utf-8")
    if len(reports) >= 2:
        summary = meta_aggregate(reports)
        doc["aggregate"] = summary.to_dict()
        (out / "histograms.csv").write_text(summary.histogram_csv(), encoding="utf-8")
    _write_json(out / "metrics.json", doc)
    print(out / "metrics.json")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    logs = _read_logs(args.logs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.mode == "pooled":
            matrix = association_matrix([r for _, log in logs for r in log.evaluations], across_runs=True)
            targets = [(out / "heatmap_pooled.csv", matrix)]
        else:
            targets = [(out / f"heatmap_{Path(p).stem}.csv", association_matrix(log.evaluations)) for p, log in logs]
    except EvaluationError as exc:
        print(f"no evaluations to build a heatmap from: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not targets:
        print("no usable logs", file=sys.stderr)
        return EXIT_CONFIG
    for path, matrix in targets:
        path.write_text(matrix.to_csv(), encoding="utf-8")
        print(path)
    return EXIT_OK


def cmd_ablation(args) -> int:
    try:
        base = load_config(args.config, args.set, args.seed)
        profiles = load_profiles(args.profiles)
        if len(profiles) != base.n_agents:
            raise ConfigError([f"{len(profiles)} profiles given for {base.n_agents} agents"])
        neutral = dataclasses.replace(base, profile_mode=ProfileMode.NEUTRAL, profiles=())
        demographic = dataclasses.replace(base, profile_mode=ProfileMode.DEMOGRAPHIC, profiles=profiles)
        validate_config(demographic)
    except ConfigError as exc:
        return _report_config_error(exc)
    out = Path(args.out_dir)
    runs, code = {}, EXIT_OK
    for label, config in (("neutral", neutral), ("demographic", demographic)):
        path = out / f"ablation_{label}_seed{config.seed}.ndjson"
        try:
            status, error = execute(config, path)
        except LlmConfigError as exc:
            print(f"LLM configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        runs[label] = {"path": str(path), "status": status, "error": error}
        code = max(code, _status_code(status, error))
    _write_json(out / "ablation_manifest.json", {"seed": base.seed, "runs": runs})
    print(out / "ablation_manifest.json")
    return code


def cmd_llm_eval(args) -> int:
    try:
        log = read_run_log(args.log)
    except (CorruptLogError, OSError) as exc:
        print(f"cannot read {args.log}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    eval_client = parser_client = None
    if args.backend:
        try:
            tables = read_toml(args.backend)
            if "eval" in tables:
                eval_client = client_from_params(dict(tables["eval"]))
            if "parser" in tables:
                parser_client = client_from_params(dict(tables["parser"]))
        except ConfigError as exc:
            return _report_config_error(exc)
        except LlmConfigError as exc:
            print(f"LLM configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    result = llm_qualitative_eval(log, eval_client, parser_client)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.log).stem
    _write_json(out / f"{stem}_flags.json", result.document())
    (out / f"{stem}_report.txt").write_text(result.report, encoding="utf-8")
    if result.flags.indeterminate:
        print("flags are indeterminate (see report)", file=sys.stderr)
    print(out / f"{stem}_flags.json")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="override the configured seed")
    p.add_argument("--out-dir", default=d("out"), help="directory for outputs (default: out)")
    p.add_argument(
        "--verbosity", type=int, choices=(0, 1, 2), default=d(0), help="0 warnings, 1 info, 2 debug"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereosim", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("run", cmd_run, "run one experiment")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--name", help="log file name (default: run_seed<seed>.ndjson)")

    p = add("batch", cmd_batch, "run many seeds of one experiment")
    p.add_argument("config")
    p.add_argument("--n-runs", type=int, required=True)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = add("metrics", cmd_metrics, "compute stereotype indices from logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--no-probes", action="store_true", help="ignore probe evaluation rounds")

    p = add("heatmap", cmd_heatmap, "export person-job association matrices")
    p.add_argument("logs", nargs="+")
    p.add_argument("--mode", choices=("single", "pooled"), default="single")

    p = add("ablation", cmd_ablation, "paired neutral / demographic runs")
    p.add_argument("config")
    p.add_argument("profiles")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = add("llm-eval", cmd_llm_eval, "qualitative bias review of a log")
    p.add_argument("log")
    p.add_argument("--backend", help="TOML with [eval] and/or [parser] LLM endpoints; rule-based if omitted")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=LEVELS[args.verbosity], format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
