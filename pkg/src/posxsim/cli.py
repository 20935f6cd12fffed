"""Command-line entry point.

Subcommands:

* ``run``               -- execute a scenario file; writes the transcript,
                           summary, offline-validation registry, report data,
                           and figures into the output directory.
* ``ldp-aggregate``     -- frequency estimation over a report file.
* ``fl-round``          -- run a federated-learning scenario and emit the
                           aggregated global model.
* ``replay``            -- human-readable inspection of a transcript.
* ``verify-transcript`` -- offline re-validation of every recorded response.

Exit codes: 0 on success; 1 when verdicts or validations fail; 2 for unusable
inputs (bad flags, unparsable files).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import List, Optional

from . import report
from .fltrain import ModelWeights
from .harness import ScenarioConfig, ScenarioError, fleet_registry, load_scenario, run_scenario
from .rappor import LdpParams, estimate_frequency, read_report_file, report_counts
from .transcript import (
    OfflineRegistry,
    TranscriptFormatError,
    read_transcript,
    transcript_text,
    validate_response_records,
)

TRANSCRIPT_FILE = "transcript.txt"
SUMMARY_FILE = "summary.txt"
REGISTRY_FILE = "registry.txt"
PMEM_FILE = "pmem.bin"
REPORTS_FILE = "reports.txt"
WEIGHTS_FILE = "global_weights.bin"
VERDICT_FIGURE = "verdicts.png"
LDP_FIGURE = "frequencies.png"
FL_FIGURE = "updates.png"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write(text)


def _run_to_dir(config: ScenarioConfig, out_dir: str):
    """Run a scenario and materialize every artifact under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    result = run_scenario(config)

    _write_text(os.path.join(out_dir, TRANSCRIPT_FILE), transcript_text(result.records))
    _write_text(os.path.join(out_dir, SUMMARY_FILE), result.summary_text())

    pmem_expected, registry = fleet_registry(config)
    with open(os.path.join(out_dir, PMEM_FILE), "wb") as handle:
        handle.write(pmem_expected)
    registry.write(os.path.join(out_dir, REGISTRY_FILE))

    report.render_verdict_grid(result, os.path.join(out_dir, VERDICT_FIGURE))
    if config.app == "ldp":
        _write_text(os.path.join(out_dir, REPORTS_FILE), result.reports_text())
        if result.ldp_estimate is not None:
            report.render_ldp_frequencies(
                result.ldp_estimate,
                len(result.ldp_reports),
                os.path.join(out_dir, LDP_FIGURE),
                true_freqs=config.padded_true_freqs(),
            )
    else:
        if result.fl_global is not None:
            with open(os.path.join(out_dir, WEIGHTS_FILE), "wb") as handle:
                handle.write(result.fl_global.serialize())
            report.render_fl_updates(
                result.fl_updates, result.fl_global, os.path.join(out_dir, FL_FIGURE)
            )
    return result


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = _run_to_dir(config, args.out)
    sys.stdout.write(result.summary_text())
    return 0 if result.all_ok else 1


def _cmd_ldp_aggregate(args: argparse.Namespace) -> int:
    try:
        params = LdpParams(f=args.f, p=args.p, q=args.q, k=args.k)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        with open(args.reports, "r", encoding="ascii") as handle:
            reports = read_report_file(handle.readlines(), params.k)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not reports:
        print("error: report file holds no reports", file=sys.stderr)
        return 2
    try:
        counts = report_counts(reports)
        estimates = estimate_frequency(reports, params)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("value\tcount\testimate")
    for value in range(params.domain_size):
        print(f"{value}\t{int(counts[value])}\t{float(estimates[value])!r}")
    if args.fig:
        report.render_ldp_frequencies(estimates, len(reports), args.fig)
    return 0


def _cmd_fl_round(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if config.app != "fl":
        print(f"error: fl-round needs an fl scenario, got app = {config.app}", file=sys.stderr)
        return 2
    result = _run_to_dir(config, args.out)
    sys.stdout.write(result.summary_text())
    if result.fl_global is None:
        print("error: no accepted updates; nothing aggregated", file=sys.stderr)
        return 1
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        records = read_transcript(args.transcript)
    except (OSError, TranscriptFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for index, record in enumerate(records, start=1):
        print(f"{index:4d}  {record.describe()}")
    print(f"{len(records)} records, all well-formed")
    return 0


def _cmd_verify_transcript(args: argparse.Namespace) -> int:
    try:
        records = read_transcript(args.transcript)
        with open(args.pmem, "rb") as handle:
            pmem_expected = handle.read()
        registry = OfflineRegistry.read(args.pk)
    except (OSError, TranscriptFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failures = validate_response_records(records, pmem_expected, registry)
    checked = sum(1 for record in records if record.kind == "response")
    if failures:
        for index, reason in failures:
            print(f"record {index}: {reason}")
        print(f"{len(failures)} of {checked} response records failed validation")
        return 1
    print(f"all {checked} response records validate")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posxsim",
        description="Simulate attested stateful execution over LDP and FL data collection.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="execute a scenario file")
    run_parser.add_argument("--scenario", required=True, help="scenario file path")
    run_parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_parser.add_argument("--out", default="out", help="output directory (default: out)")
    run_parser.set_defaults(func=_cmd_run)

    agg_parser = commands.add_parser("ldp-aggregate", help="estimate frequencies from reports")
    agg_parser.add_argument("--reports", required=True, help="report file, one hex vector per line")
    agg_parser.add_argument("--f", type=float, required=True, help="permanent-stage probability f")
    agg_parser.add_argument("--p", type=float, required=True, help="instantaneous-stage p")
    agg_parser.add_argument("--q", type=float, required=True, help="instantaneous-stage q")
    agg_parser.add_argument("--k", type=int, required=True, help="reading bit width")
    agg_parser.add_argument("--fig", default="", help="also render a bar chart to this path")
    agg_parser.set_defaults(func=_cmd_ldp_aggregate)

    fl_parser = commands.add_parser("fl-round", help="run one federated round")
    fl_parser.add_argument("--scenario", required=True, help="scenario file path (app = fl)")
    fl_parser.add_argument("--out", default="out", help="output directory (default: out)")
    fl_parser.set_defaults(func=_cmd_fl_round)

    replay_parser = commands.add_parser("replay", help="inspect a transcript")
    replay_parser.add_argument("--transcript", required=True, help="transcript file path")
    replay_parser.set_defaults(func=_cmd_replay)

    verify_parser = commands.add_parser(
        "verify-transcript", help="re-validate recorded responses offline"
    )
    verify_parser.add_argument("--transcript", required=True, help="transcript file path")
    verify_parser.add_argument("--pmem", required=True, help="expected program image file")
    verify_parser.add_argument("--pk", required=True, help="registry file with device public keys")
    verify_parser.set_defaults(func=_cmd_verify_transcript)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # stdout consumer went away (e.g. piping into head); not a failure
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
