"""Command line: ``run``, ``compare``, ``check`` and ``sweep``.

Exit codes: 0 success, 1 failed check or run error, 2 configuration error,
3 numerical failure (non-finite loss; the partial trace is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .checks import SUITES, run_suites
from .config import ConfigError, RunSpec, expand_sweep, load_config, parse_config
from .problems import QuadraticObjective
from .runners import RunAborted, RunResult
from .tolerances import reset_tolerances, set_tolerances

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def summary_line(result: RunResult) -> str:
    s = result.summary
    return f"final_loss={_fmt(s.final_loss)} min_grad_norm={_fmt(s.min_grad_norm)} restarts={s.restarts}"


def _execute(spec: RunSpec) -> tuple[RunResult, Optional[RunAborted]]:
    try:
        return spec.run(), None
    except RunAborted as exc:
        return exc.result, exc


def _trace_path(spec: RunSpec, out: Optional[str], name: str = "trace.csv") -> Path:
    if out is not None:
        path = Path(out) / name
    elif spec.output is not None:
        path = Path(spec.output)
    else:
        path = Path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args) -> int:
    spec = load_config(args.config, args.seed)
    result, aborted = _execute(spec)
    path = _trace_path(spec, args.out)
    result.trace.to_csv(path)
    if aborted is not None:
        print(f"error: {aborted}", file=sys.stderr)
        return EXIT_NUMERICAL if aborted.numerical else EXIT_FAIL
    print(summary_line(result))
    return EXIT_OK


def _labels(specs: Sequence[RunSpec]) -> list[str]:
    labels, seen = [], {}
    for spec in specs:
        seen[spec.method] = seen.get(spec.method, 0) + 1
        labels.append(spec.method if seen[spec.method] == 1 else f"{spec.method}_{seen[spec.method]}")
    return labels


def cmd_compare(args) -> int:
    paths = list(args.configs or []) + list(args.config or [])
    if len(paths) < 2:
        raise ConfigError("compare", "needs at least two configs")
    specs = [load_config(p, args.seed) for p in paths]
    for p, spec in zip(paths[1:], specs[1:]):
        if spec.problem != specs[0].problem:
            raise ConfigError("problem", f"{p} optimizes a different problem than {paths[0]}")
    labels = _labels(specs)
    results = []
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        for result, aborted in pool.map(_execute, specs):
            if aborted is not None:
                print(f"error: {aborted}", file=sys.stderr)
                return EXIT_NUMERICAL if aborted.numerical else EXIT_FAIL
            results.append(result)

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    losses = [r.trace.column("loss") for r in results]
    steps = max(len(col) for col in losses)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + labels + [f"gap_{lab}" for lab in labels[1:]])
        for i in range(steps):
            row = [col[i] if i < len(col) else None for col in losses]
            gaps = [None if row[0] is None or x is None else x - row[0] for x in row[1:]]
            w.writerow([i + 1] + ["" if x is None else _fmt(x) for x in row + gaps])

    objective = specs[0].objective
    floor = objective.lora_floor if isinstance(objective, QuadraticObjective) else None
    report = {"methods": []}
    for label, res in zip(labels, results):
        entry = {"label": label, "final_loss": res.summary.final_loss, "min_grad_norm": res.summary.min_grad_norm}
        line = f"{label}: final_loss={_fmt(res.summary.final_loss)}"
        if floor is not None:
            entry["gap_to_floor"] = res.summary.final_loss - floor
            line += f" gap_to_floor={_fmt(entry['gap_to_floor'])}"
        report["methods"].append(entry)
        print(line)
    if floor is not None:
        report["lora_floor"] = floor
        print(f"lora_floor={_fmt(floor)}")
    (out / "comparison.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _parse_tol(items) -> dict:
    values = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("--tol", f"expected name=value, got {item!r}")
        try:
            values[name] = float(value)
        except ValueError:
            raise ConfigError(f"--tol {name}", f"not a number: {value!r}") from None
    return values


def cmd_check(args) -> int:
    suite = args.suite or args.suite_name or "all"
    if suite == "all":
        names = list(SUITES)
    elif suite in SUITES:
        names = [suite]
    else:
        raise ConfigError("--suite", f"unknown suite {suite!r}; expected one of {['all'] + list(SUITES)}")
    overrides = _parse_tol(args.tol)
    try:
        set_tolerances(overrides)
    except KeyError as exc:
        raise ConfigError("--tol", str(exc.args[0])) from None
    try:
        results = run_suites(names)
    finally:
        reset_tolerances()
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        extra = f"  ({r.detail})" if r.detail else ""
        print(f"{verdict} {r.suite}/{r.name}: measured={r.measured:.6g} bound={r.bound:.6g}{extra}")
    failed = [f"{r.suite}/{r.name}" for r in results if not r.passed]
    report = {"suites": names, "passed": not failed, "failed": failed, "results": [r.as_dict() for r in results]}
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "check_report.json").write_text(json.dumps(report, indent=2, allow_nan=True) + "\n")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    cells = expand_sweep(doc)
    specs = [parse_config(cfg, args.seed) for _, cfg in cells]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        outcomes = list(pool.map(_execute, specs))
    keys = list(cells[0][0])
    status = EXIT_OK
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell"] + keys + ["file", "final_loss", "min_grad_norm", "status"])
        for i, ((cell, _), (result, aborted)) in enumerate(zip(cells, outcomes)):
            name = f"cell_{i:03d}.csv"
            result.trace.to_csv(out / name)
            if aborted is None:
                final, best, state = _fmt(result.summary.final_loss), _fmt(result.summary.min_grad_norm), "ok"
            else:
                final, best = "", ""
                state = "numerical" if aborted.numerical else "error"
                status = max(status, EXIT_NUMERICAL if aborted.numerical else EXIT_FAIL)
            w.writerow([i] + [json.dumps(cell[k]) for k in keys] + [name, final, best, state])
    print(f"{len(cells)} cells written to {out}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pesokit", description="Subspace-restart optimizer runs and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration and write its trace")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several configurations on one problem")
    p.add_argument("configs", nargs="*")
    p.add_argument("--config", action="append")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="run invariant suites")
    p.add_argument("suite_name", nargs="?")
    p.add_argument("--suite")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="grid over a config's sweep block")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
