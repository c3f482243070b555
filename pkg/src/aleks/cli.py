"""Command-line entry point: run, repeat, replay, export, report, cross-year.

Exit codes: 0 success, 1 configuration problem, 2 runtime failure
(including an experiment halted on unusable agent output), 3 backend
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import load_schema, year_tag
from .errors import AleksError, BackendError, ConfigError
from .ledger import iteration_selections, load_records
from .metrics import (
    feature_frequency,
    selection_heatmap,
    write_frequency_csv,
    write_heatmap_csv,
)
from .orchestrator import (
    ExperimentHalted,
    cross_year_validate,
    load_config,
    load_report,
    render_report_text,
    run_experiment,
    run_repeat,
    make_task,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_BACKEND = 3

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aleks",
        description="Autonomous multi-agent engine for iterative data-driven experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_data: bool = True) -> None:
        p.add_argument("--config", help="TOML config file path")
        p.add_argument("--preset", choices=["exp1", "exp2", "exp3", "exp4"], help="named experiment design")
        p.add_argument("--workspace", help="experiment workspace directory")
        if with_data:
            p.add_argument("--data", help="dataset file path (CSV with header)")

    run_p = sub.add_parser("run", help="run one experiment")
    common(run_p)
    run_p.add_argument("--question", required=True, help="the research question")
    run_p.add_argument("--budget", type=int, help="maximum number of iterations")
    run_p.add_argument("--backend", choices=["scripted", "remote", "replay"], help="backend kind override")

    repeat_p = sub.add_parser("repeat", help="run N independent experiments and aggregate")
    common(repeat_p)
    repeat_p.add_argument("--question", required=True, help="the research question")
    repeat_p.add_argument("--budget", type=int, help="maximum number of iterations")
    repeat_p.add_argument("--backend", choices=["scripted", "remote", "replay"], help="backend kind override")
    repeat_p.add_argument("--repeat", type=int, required=True, metavar="N", help="number of runs")
    repeat_p.add_argument("--parallel", action="store_true", help="run children in parallel")

    replay_p = sub.add_parser("replay", help="re-run an experiment from its transcript")
    common(replay_p)
    replay_p.add_argument("--question", required=True, help="the research question")
    replay_p.add_argument("--budget", type=int, help="maximum number of iterations")
    replay_p.add_argument("--out", help="output workspace (default: <workspace>/replay)")

    export_p = sub.add_parser("export", help="export heatmap or frequency CSV from a workspace")
    export_p.add_argument("kind", choices=["heatmap", "frequency"])
    export_p.add_argument("--workspace", required=True)
    export_p.add_argument("--data", help="dataset path for schema column ordering")

    report_p = sub.add_parser("report", help="print the report of a finished workspace")
    report_p.add_argument("--workspace", required=True)

    cross_p = sub.add_parser("cross-year", help="re-test the recommended model on shifted years")
    cross_p.add_argument("--workspace", required=True)
    cross_p.add_argument("--data", required=True, help="dataset file path")
    cross_p.add_argument("--delta", type=int, default=1, help="year shift to apply (default +1)")
    cross_p.add_argument("--config", help="TOML config file path")
    cross_p.add_argument("--preset", choices=["exp1", "exp2", "exp3", "exp4"])

    return parser


def _config_from_args(args, require_workspace: bool = False):
    overrides = {}
    if getattr(args, "workspace", None):
        overrides["workspace"] = args.workspace
    elif require_workspace:
        raise ConfigError("a workspace is required (--workspace or config file)")
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
    config = load_config(getattr(args, "config", None), preset=getattr(args, "preset", None), overrides=overrides)
    backend_kind = getattr(args, "backend", None)
    if backend_kind:
        config = replace(config, backend=replace(config.backend, kind=backend_kind))
    return config


def _load_dataset(path: str | None):
    if not path:
        raise ConfigError("a dataset is required (--data)")
    if not Path(path).exists():
        raise ConfigError(f"dataset file not found: {path}")
    return load_schema(path)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    dataset = _load_dataset(args.data)
    task = make_task(args.question, dataset)
    _, report = run_experiment(config, task)
    print(render_report_text(report))
    return EXIT_OK


def cmd_repeat(args) -> int:
    config = _config_from_args(args)
    dataset = _load_dataset(args.data)
    task = make_task(args.question, dataset)
    reports = run_repeat(config, task, args.repeat, parallel=args.parallel)
    completed = sum(1 for r in reports if r is not None)
    print(f"{completed}/{args.repeat} runs completed; aggregate in {config.workspace}/frequency.csv")
    return EXIT_OK if completed == args.repeat else EXIT_RUNTIME


def cmd_replay(args) -> int:
    if not args.workspace:
        raise ConfigError("replay needs --workspace with a recorded transcript.jsonl")
    source = Path(args.workspace)
    transcript = source / "transcript.jsonl"
    if not transcript.exists():
        raise ConfigError(f"no transcript to replay: {transcript}")
    out = args.out or str(source / "replay")
    config = _config_from_args(args)
    config = replace(
        config,
        workspace=out,
        backend=replace(config.backend, kind="replay"),
        replay_transcript=str(transcript),
        record_transcript=False,
    )
    dataset = _load_dataset(args.data)
    task = make_task(args.question, dataset)
    _, report = run_experiment(config, task)
    print(render_report_text(report))
    return EXIT_OK


def _collect_selections(workspace: Path):
    reports = []
    if (workspace / "report.json").exists():
        reports.append(load_report(workspace))
    else:
        for child in sorted(workspace.glob("run_*")):
            if (child / "report.json").exists():
                reports.append(load_report(child))
    if not reports:
        raise AleksError(f"no report.json under {workspace}")
    return [
        (r.raw_features, tuple(name for name, _ in r.derived_features))
        for r in reports
    ]


def cmd_export(args) -> int:
    workspace = Path(args.workspace)
    if args.kind == "heatmap":
        ledger_path = workspace / "ledger.jsonl"
        if not ledger_path.exists():
            raise AleksError(f"no ledger.jsonl in {workspace}")
        records = load_records(ledger_path)
        if args.data:
            schema_columns = load_schema(args.data).column_names()
        else:
            logger.warning("no --data given; raw column order falls back to first mention")
            schema_columns = []
        heatmap = selection_heatmap(iteration_selections(records), schema_columns)
        out = workspace / "heatmap.csv"
        write_heatmap_csv(heatmap, out)
    else:
        table = feature_frequency(_collect_selections(workspace))
        out = workspace / "frequency.csv"
        write_frequency_csv(table, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.workspace)
    print(render_report_text(report))
    return EXIT_OK


def cmd_cross_year(args) -> int:
    workspace = Path(args.workspace)
    report = load_report(workspace)
    dataset = _load_dataset(args.data)
    config = load_config(args.config, preset=args.preset, overrides={"workspace": str(workspace)})
    metrics = cross_year_validate(report, dataset, args.delta, config)

    source_year = year_tag(report.label_column)
    test_year = source_year + args.delta if source_year is not None else None
    print("suggestion_source | test_question | model_type | metrics")
    metric_text = " ".join(
        f"{k}={v}" for k, v in sorted(vars(metrics).items()) if k not in ("confusion",)
    )
    print(
        f"{source_year or '?'} (iteration {report.recommended_iteration}) | "
        f"{test_year or '?'} | {report.model_type} | {metric_text}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "repeat": cmd_repeat,
        "replay": cmd_replay,
        "export": cmd_export,
        "report": cmd_report,
        "cross-year": cmd_cross_year,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ExperimentHalted as exc:
        print(f"experiment halted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AleksError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
