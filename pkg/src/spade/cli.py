"""Command-line pipeline: ingest, segment, prompt, analyze, parse, evaluate.

Subcommands: analyze, evaluate, synth, ablate, cost. Exit codes are stable:
0 success, 1 usage error, 2 partial failure (some segments errored, the rest
were written), 3 total failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import timedelta
from pathlib import Path

from . import evaluation, gateway, ingest, promptkit, report, segmenter, synth
from .core import SeriesMeta, SpadeError, validate_report
from .detectors import DetectorParams, load_detector_params
from .gateway import BackendConfig, CostLedger, TokenRateLimiter

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_TOTAL = 3

# Disabling these prompt rules turns off the local backend's irrigation
# suppression, mirroring a run without the re-examination instruction.
DEFAULT_SUPPRESSION_RULES = {"anomaly.7"}

DEFAULTS = {
    "backend": "local-rules",
    "window_days": 7,
    "budget": 30_000,
    "tolerance": 60,
    "model": "gpt-4.1",
    "endpoint": "",
    "tpm_limit": 30_000,
    "max_inflight": 4,
    "price_in": 2.00,
    "price_out": 8.00,
    "depth_cm": 10,
    "out": "spade-out",
}


class CliUsageError(SpadeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliUsageError(f"expected key=value in {path}, line {lineno}")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _opt(args, cfg: dict, key: str, cast=None):
    """Flag value if given, else config-file value, else the default."""
    value = getattr(args, key, None)
    if value is None:
        value = cfg.get(key, DEFAULTS.get(key))
    if value is None:
        return None
    return cast(value) if cast else value


def build_parser() -> _Parser:
    parser = _Parser(prog="spade", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="key=value config file merged under flags")

    backendish = argparse.ArgumentParser(add_help=False)
    backendish.add_argument("--backend", choices=["local-rules", "remote"])
    backendish.add_argument("--window-days", dest="window_days", type=int)
    backendish.add_argument("--budget", type=int)
    backendish.add_argument("--params", help="detector parameter file (key=value)")
    backendish.add_argument("--rules", help="prompt rule template file")
    backendish.add_argument(
        "--disable", action="append", default=[], metavar="RULE_ID",
        help="disable a prompt rule (repeatable)",
    )
    backendish.add_argument(
        "--no-suppression-map", action="append", default=[], metavar="RULE_ID",
        dest="no_suppression_map",
        help="when RULE_ID is disabled, also switch off the local backend's "
             "irrigation suppression",
    )
    backendish.add_argument("--model", help="remote model name")
    backendish.add_argument("--endpoint", help="remote endpoint URL")
    backendish.add_argument("--tpm-limit", dest="tpm_limit", type=int)
    backendish.add_argument("--max-inflight", dest="max_inflight", type=int)
    backendish.add_argument("--price-in", dest="price_in", type=float)
    backendish.add_argument("--price-out", dest="price_out", type=float)
    backendish.add_argument("--depth-cm", dest="depth_cm", type=int)
    backendish.add_argument("--seed", type=int, help="seed echoed into outputs")
    backendish.add_argument("--dry-run", action="store_true", dest="dry_run")

    p = sub.add_parser("analyze", parents=[common, backendish],
                       help="run the pipeline on sensor CSV files")
    p.add_argument("inputs", nargs="+", help="sensor CSV files")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score report files against ground truth")
    p.add_argument("--reports", required=True, help="directory of report JSON files")
    p.add_argument("--truth", required=True, help="directory of *.truth.json files")
    p.add_argument("--tolerance", type=int, help="matching tolerance in minutes")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common],
                       help="generate labeled synthetic series")
    p.add_argument("--spec", help="scenario spec file")
    p.add_argument("--name", help="basename for output files (default: spec stem)")
    p.add_argument("--standard-corpus", action="store_true", dest="standard_corpus",
                   help="write the 100-segment acceptance corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", parents=[common, backendish],
                       help="run with and without prompt rules, side by side")
    p.add_argument("inputs", nargs=1, help="sensor CSV file")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cost", parents=[common],
                       help="summarize a usage log into a cost table")
    p.add_argument("--usage", required=True, help="usage JSONL from analyze")
    p.add_argument("--price-in", dest="price_in", type=float)
    p.add_argument("--price-out", dest="price_out", type=float)
    p.set_defaults(func=cmd_cost)
    return parser


def _backend_setup(args, cfg):
    kind = _opt(args, cfg, "backend")
    config = BackendConfig(
        kind="remote-http" if kind == "remote" else "local-rules",
        endpoint=_opt(args, cfg, "endpoint") or "",
        model_name=_opt(args, cfg, "model"),
        tpm_limit=_opt(args, cfg, "tpm_limit", int),
        max_inflight=_opt(args, cfg, "max_inflight", int),
        price_in=_opt(args, cfg, "price_in", float),
        price_out=_opt(args, cfg, "price_out", float),
    )
    params_file = _opt(args, cfg, "params")
    params = load_detector_params(params_file) if params_file else DetectorParams()
    ruleset = promptkit.load_rules(_opt(args, cfg, "rules"))
    disabled = list(args.disable or [])
    for rule_id in disabled:
        ruleset = promptkit.toggle_rule(ruleset, rule_id, False)
    suppression_rules = DEFAULT_SUPPRESSION_RULES | set(args.no_suppression_map or [])
    suppress = not (set(disabled) & suppression_rules)
    return config, params, ruleset, suppress


def _segment_key(probe: str, seg: segmenter.Segment) -> str:
    return f"{probe}_{seg.window_start:%Y%m%dT%H%M%S}"


def cmd_analyze(args) -> int:
    cfg = _read_config(args.config)
    out_dir = Path(_opt(args, cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        config, params, ruleset, suppress = _backend_setup(args, cfg)
        backend = None
        limiter = None
        if not args.dry_run:
            if config.kind == "local-rules":
                backend = gateway.LocalRulesBackend(
                    params, suppress_irrigation=suppress
                )
            else:
                backend = gateway.RemoteHttpBackend(config)
                limiter = TokenRateLimiter(config.tpm_limit)
    except (SpadeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOTAL

    ledger = CostLedger()
    failures = 0
    usage_rows = []
    totals = {"segments": 0, "anomalies": 0, "events": 0, "net_gain": 0.0}

    for raw_path in args.inputs:
        path = Path(raw_path)
        try:
            series, segments = _load_segments(path, args, cfg)
        except (SpadeError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_TOTAL

        for seg in segments:
            key = _segment_key(series.meta.probe, seg)
            try:
                text = promptkit.serialize_segment(seg)
                prompt = promptkit.build_prompt(ruleset, text)
                if args.dry_run:
                    (out_dir / f"{key}.prompt.txt").write_text(prompt, "utf-8")
                    cost = gateway.estimate_cost(
                        segmenter.estimate_text_tokens(prompt), 0, config
                    )
                    ledger.record(cost)
                    usage_rows.append(
                        {"segment": key, "input_tokens": cost.input_tokens,
                         "output_tokens": 0, "total_cost": cost.total_cost}
                    )
                    continue
                response, cost = gateway.analyze(
                    prompt, config, backend=backend, limiter=limiter, ledger=ledger
                )
                parsed = report.parse(response)
                problems = validate_report(parsed)
                if problems:
                    print(f"warning: {key}: {'; '.join(problems)}", file=sys.stderr)
                (out_dir / f"{key}.txt").write_text(report.render(parsed), "utf-8")
                (out_dir / f"{key}.json").write_text(report.dumps_json(parsed), "utf-8")
                usage_rows.append(
                    {"segment": key, "input_tokens": cost.input_tokens,
                     "output_tokens": cost.output_tokens,
                     "total_cost": cost.total_cost}
                )
                totals["segments"] += 1
                totals["anomalies"] += len(parsed.anomalies)
                totals["events"] += len(parsed.irrigation_events)
                totals["net_gain"] += parsed.final_net_gain
            except (SpadeError, OSError) as exc:
                failures += 1
                print(f"error: {key}: {exc}", file=sys.stderr)

    with open(out_dir / "usage.jsonl", "w", encoding="utf-8") as fh:
        for row in usage_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    if args.dry_run:
        print(f"dry run: {len(usage_rows)} prompts written to {out_dir}")
        print(f"estimated input cost: ${ledger.total_cost:.4f}")
    else:
        print(
            f"{totals['segments']} segments analyzed: "
            f"{totals['anomalies']} anomalies, {totals['events']} irrigation "
            f"events, total net gain {totals['net_gain']:.1f}, "
            f"total cost ${ledger.total_cost:.4f}"
        )
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_segments(path: Path, args, cfg):
    data = path.read_bytes()
    meta = SeriesMeta(probe=path.stem, depth_cm=_opt(args, cfg, "depth_cm", int))
    series = ingest.parse_csv(data, meta)
    segments = segmenter.segment_weekly(
        series,
        window_days=_opt(args, cfg, "window_days", int),
        budget=_opt(args, cfg, "budget", int),
    )
    if len(series.samples) >= 2:
        from .core import infer_interval

        gaps = ingest.detect_gaps(series, infer_interval(series))
        segments = segmenter.extend_for_gaps(segments, gaps)
    return series, segments


def cmd_evaluate(args) -> int:
    cfg = _read_config(args.config)
    reports_dir = Path(args.reports)
    truth_dir = Path(args.truth)
    tolerance = timedelta(minutes=_opt(args, cfg, "tolerance", int))

    truth_files = sorted(truth_dir.glob("*.truth.json"))
    if not truth_files:
        print(f"error: no *.truth.json files in {truth_dir}", file=sys.stderr)
        return EXIT_TOTAL

    reports = []
    truths = []
    n_report_files = 0
    for tf in truth_files:
        base = tf.name[: -len(".truth.json")]
        matches = sorted(
            p for p in reports_dir.glob(f"{base}*.json")
            if not p.name.endswith(".truth.json")
        )
        if not matches:
            print(f"error: no report files match basename {base!r}", file=sys.stderr)
            return EXIT_TOTAL
        n_report_files += len(matches)
        merged = _merge_reports([report.loads_json(p.read_text("utf-8"))
                                 for p in matches])
        reports.append(merged)
        truths.append(synth.loads_truth(tf.read_text("utf-8")))

    outcome = evaluation.evaluate_corpus(reports, truths, tolerance)
    out_dir = Path(_opt(args, cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "evaluation.json").write_text(
        evaluation.dumps_outcome(outcome), "utf-8"
    )
    print(evaluation.format_summary_table({"reports": outcome}))
    print(f"({n_report_files} report files against {len(truth_files)} truth files)")
    return EXIT_OK


def _merge_reports(parts: list) -> "report.AnalysisReport":
    from .core import AnalysisReport, key_event_onset, round1

    anomalies = tuple(
        sorted((a for p in parts for a in p.anomalies), key=lambda a: a.span_start)
    )
    events = tuple(
        sorted((e for p in parts for e in p.irrigation_events), key=lambda e: e.onset)
    )
    return AnalysisReport(
        anomaly_detected=bool(anomalies),
        anomalies=anomalies,
        irrigation_events=events,
        key_event=key_event_onset(events),
        final_net_gain=round1(sum(p.final_net_gain for p in parts)),
    )


def cmd_synth(args) -> int:
    cfg = _read_config(args.config)
    out_dir = Path(_opt(args, cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.standard_corpus:
            items = synth.standard_corpus()
            for spec, series, truth in items:
                synth.export_csv(series, out_dir / f"{spec.probe}.csv")
                (out_dir / f"{spec.probe}.truth.json").write_text(
                    synth.dumps_truth(truth), "utf-8"
                )
            print(f"{len(items)} series written to {out_dir}")
            return EXIT_OK
        if not args.spec:
            raise CliUsageError("synth needs --spec FILE or --standard-corpus")
        spec = synth.load_scenario(args.spec)
        name = args.name or Path(args.spec).stem
        series, truth = synth.generate(spec)
        synth.export_csv(series, out_dir / f"{name}.csv")
        (out_dir / f"{name}.truth.json").write_text(synth.dumps_truth(truth), "utf-8")
        print(f"series {name}: {len(series.samples)} samples, "
              f"{len(truth.irrigation)} events, {len(truth.anomalies)} anomalies")
        return EXIT_OK
    except CliUsageError:
        raise
    except (SpadeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOTAL


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    out_dir = Path(_opt(args, cfg, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if not args.disable:
        raise CliUsageError("ablate needs at least one --disable RULE_ID")
    path = Path(args.inputs[0])
    try:
        base_cfg, params, _, _ = _backend_setup(
            argparse.Namespace(**{**vars(args), "disable": []}), cfg
        )
        ruleset = promptkit.load_rules(_opt(args, cfg, "rules"))
        series, segments = _load_segments(path, args, cfg)
    except (SpadeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOTAL

    suppression_rules = DEFAULT_SUPPRESSION_RULES | set(args.no_suppression_map or [])
    variants = [("baseline", ruleset, True)]
    for rule_id in args.disable:
        toggled = promptkit.toggle_rule(ruleset, rule_id, False)
        suppress = rule_id not in suppression_rules
        variants.append((f"without_{rule_id.replace('.', '_')}", toggled, suppress))

    failures = 0
    for seg in segments:
        key = _segment_key(series.meta.probe, seg)
        for label, rules, suppress in variants:
            try:
                backend = gateway.LocalRulesBackend(
                    params, suppress_irrigation=suppress
                )
                if base_cfg.kind != "local-rules":
                    backend = gateway.RemoteHttpBackend(base_cfg)
                prompt = promptkit.build_prompt(
                    rules, promptkit.serialize_segment(seg)
                )
                response, _ = gateway.analyze(prompt, base_cfg, backend=backend)
                parsed = report.parse(response)
                stem = f"{key}__{label}"
                (out_dir / f"{stem}.txt").write_text(report.render(parsed), "utf-8")
                (out_dir / f"{stem}.json").write_text(
                    report.dumps_json(parsed), "utf-8"
                )
            except (SpadeError, OSError) as exc:
                failures += 1
                print(f"error: {key} [{label}]: {exc}", file=sys.stderr)
    print(f"{len(segments)} segment(s) x {len(variants)} variants written to {out_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_cost(args) -> int:
    cfg = _read_config(args.config)
    price_in = _opt(args, cfg, "price_in", float)
    price_out = _opt(args, cfg, "price_out", float)
    config = BackendConfig(price_in=price_in, price_out=price_out)
    try:
        rows = []
        with open(args.usage, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOTAL

    total = gateway.CostLedger()
    print(f"{'segment':<32} {'in':>8} {'out':>8} {'cost':>10}")
    for row in rows:
        est = gateway.estimate_cost(
            int(row.get("input_tokens", 0)), int(row.get("output_tokens", 0)), config
        )
        total.record(est)
        print(f"{row.get('segment', '-'):<32} {est.input_tokens:>8} "
              f"{est.output_tokens:>8} {est.total_cost:>10.4f}")
    in_tokens, out_tokens = total.total_tokens
    print(f"{'TOTAL':<32} {in_tokens:>8} {out_tokens:>8} {total.total_cost:>10.4f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
