"""Command-line entry point.

Exit codes:
    0  success (per-case failures are recorded in failures.jsonl and do not change this)
    1  unexpected internal error
    2  usage error (bad arguments)
    3  invalid configuration
    4  invalid input data (corpus, predictions, traces, alignment)
    5  systemic failure: every case in the batch failed
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .case_model import load_corpus, load_traces
from .config import RunConfig, parse_disabled
from .corpus_builder import (
    STAGES,
    BuildContext,
    WorkItem,
    build_corpus,
    load_raw,
    load_work_items,
    save_work_items,
)
from .engine import RunStore, Runtime, annotate, compare, predict, scores_csv
from .errors import AlignmentError, ConfigError, CorpusError, LexstepError, StoreError
from .metrics import align, evaluate

log = logging.getLogger("lexstep.cli")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_SYSTEMIC = 0, 1, 2, 3, 4, 5


def _add_run_args(p: argparse.ArgumentParser, corpus: bool = True) -> None:
    p.add_argument("--config", required=True, help="TOML run configuration")
    if corpus:
        p.add_argument("--corpus", required=True, help="JSON-lines corpus of cases")
    p.add_argument("--out", default="runs", help="parent directory for run directories")
    p.add_argument("--force", action="store_true", help="replace an existing run directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--concurrency", type=int, help="override the worker pool size")
    p.add_argument("--threshold", type=float, help="override the verifier threshold")
    p.add_argument("--max-steps", type=int, help="override the reasoner step budget")
    p.add_argument("--max-correction-attempts", type=int)
    p.add_argument("--disable-strategy", default=None,
                   help="comma-separated error types whose strategy is replaced by reflection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexstep", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="build a case corpus from raw judgments")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True,
                   help="raw judgments JSONL (doc_id, text), or work items for later stages")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--stage", default="all",
                   help="a stage name, 'all', or a range such as extract:screen")

    p = sub.add_parser("predict", help="run verified reasoning over a corpus")
    _add_run_args(p)
    p.add_argument("--mode", choices=("full", "score", "plain"), default="full")
    p.add_argument("--dump-scores", metavar="PATH",
                   help="also write the per-step score CSV to PATH")

    p = sub.add_parser("annotate", help="build verifier training labels")
    _add_run_args(p)
    p.add_argument("--traces", help="annotate these traces instead of generating new ones")
    p.add_argument("--binarize", action="store_true", default=None,
                   help="threshold judge scores to 0/1 before taking the minimum")
    p.add_argument("--attribute", action="store_true", default=None,
                   help="label flagged steps with an error type")
    p.add_argument("--negatives", action="store_true",
                   help="also synthesize error-typed negative steps")

    p = sub.add_parser("compare", help="compare Best-of-N strategies with verify-and-correct")
    _add_run_args(p)
    p.add_argument("--n", type=int, help="override the number of candidates")
    p.add_argument("--elements", action="store_true",
                   help="also compute element-level metrics with the judge backend")

    p = sub.add_parser("evaluate", help="score predictions against gold cases")
    p.add_argument("--predictions", required=True, help="predictions.jsonl or traces.jsonl")
    p.add_argument("--gold", required=True, help="gold corpus JSONL")
    p.add_argument("--config", help="needed with --elements for the judge backend")
    p.add_argument("--elements", action="store_true")
    p.add_argument("--output", help="write the report JSON here instead of stdout")

    p = sub.add_parser("dump-scores", help="per-step scores of a traces file as CSV")
    p.add_argument("--traces", required=True)
    p.add_argument("--output", help="CSV path; stdout when omitted")
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides: dict[tuple[str, ...], Any] = {
        ("seed",): getattr(args, "seed", None),
        ("concurrency",): getattr(args, "concurrency", None),
        ("verifier", "threshold"): getattr(args, "threshold", None),
        ("reasoner", "max_steps"): getattr(args, "max_steps", None),
        ("correction", "max_attempts"): getattr(args, "max_correction_attempts", None),
        ("selection", "n"): getattr(args, "n", None),
        ("annotation", "binarize"): getattr(args, "binarize", None),
        ("annotation", "attribute"): getattr(args, "attribute", None),
    }
    disabled = getattr(args, "disable_strategy", None)
    if disabled is not None:
        overrides[("correction", "disable")] = sorted(e.value for e in parse_disabled(disabled))
    return cfg.with_overrides(overrides)


def _read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"malformed JSON: {exc.msg}", line=lineno) from None
    return rows


def _stages(spec: str) -> tuple[str, ...]:
    if spec == "all":
        return STAGES
    first, _, last = spec.partition(":")
    last = last or first
    if first not in STAGES or last not in STAGES or STAGES.index(first) > STAGES.index(last):
        raise ValueError(f"bad stage selection {spec!r}; stages are {', '.join(STAGES)}")
    return STAGES[STAGES.index(first):STAGES.index(last) + 1]


def cmd_build_corpus(args: argparse.Namespace) -> int:
    cfg = _config(args)
    stages = _stages(args.stage)
    if stages[0] == "compress":
        items = [WorkItem.from_raw(d) for d in load_raw(args.input)]
    else:
        items = load_work_items(args.input)
    backends = cfg.build_backends()
    ctx = BuildContext(backends.reasoner, backends.judge, cfg.templates(), cfg.concurrency)
    result = build_corpus(items, ctx, stages)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_work_items(result.items, out / "work_items.jsonl")
    if result.kept:
        with (out / "corpus.jsonl").open("w", encoding="utf-8") as fh:
            for case in result.kept:
                fh.write(json.dumps(case.to_record(), ensure_ascii=False) + "\n")
    removals = result.removals()
    for name, disp in (("dropped.jsonl", "dropped"), ("quarantine.jsonl", "quarantined")):
        with (out / name).open("w", encoding="utf-8") as fh:
            for r in removals:
                if r.disposition == disp:
                    fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
    with (out / "review_queue.jsonl").open("w", encoding="utf-8") as fh:
        for entry in result.review_queue:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    (out / "reports.json").write_text(
        json.dumps([r.to_dict() for r in result.reports], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    (out / "ledger.json").write_text(json.dumps(result.ledger(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    counts = {k: sum(v == k for v in result.ledger().values())
              for k in ("kept", "dropped", "quarantined")}
    print(f"build-corpus: {len(items)} docs -> kept={counts['kept']} "
          f"dropped={counts['dropped']} quarantined={counts['quarantined']}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cases = load_corpus(args.corpus)
    runtime = Runtime.build(cfg, args.mode)
    with RunStore.create(args.out, "predict", cfg, [args.corpus], force=args.force) as store:
        res = predict(cases, runtime, store)
    if args.dump_scores:
        Path(args.dump_scores).write_text(scores_csv(res.traces, store.run_id), encoding="utf-8")
    print(f"predict {store.run_id}: {len(res.traces)}/{len(cases)} cases "
          f"(support={res.distribution['support']}, reject={res.distribution['reject']}), "
          f"failures={len(res.failures)} -> {store.directory}")
    return EXIT_SYSTEMIC if res.systemic_failure else EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cases = load_corpus(args.corpus)
    traces = {t.case_id: t for t in load_traces(args.traces)} if args.traces else None
    inputs = [args.corpus] + ([args.traces] if args.traces else [])
    runtime = Runtime.build(cfg, "plain")
    with RunStore.create(args.out, "annotate", cfg, inputs, force=args.force) as store:
        res = annotate(cases, runtime, store, traces, negatives=args.negatives)
    s = res.stats
    print(f"annotate {store.run_id}: records={s['records']} quarantined={s['quarantined']} "
          f"failures={s['failures']} min_rule_violations={s['min_rule_violations']} "
          f"-> {store.directory}")
    return EXIT_SYSTEMIC if cases and len(res.failures) == len(cases) else EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cases = load_corpus(args.corpus)
    runtime = Runtime.build(cfg, "full")
    gpv = cfg.gpv_verifier(runtime.backends)
    with RunStore.create(args.out, "compare", cfg, [args.corpus], force=args.force) as store:
        res = compare(cases, runtime, store, gpv, elements=args.elements)
    print(f"compare {store.run_id} -> {store.directory / 'compare.csv'}")
    for r in res.rows:
        acc = "n/a" if r["cl_acc"] is None else f"{100 * r['cl_acc']:.2f}"
        cov = "n/a" if r["e_cov"] is None else f"{100 * r['e_cov']:.2f}"
        print(f"  {r['strategy']:<8} cases={r['cases']} CL-Acc={acc} E-Cov={cov}")
    return EXIT_SYSTEMIC if cases and len(res.failures) == len(cases) else EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    gold = load_corpus(args.gold)
    records = align(_read_jsonl(args.predictions), gold)
    judge = None
    templates = None
    if args.elements:
        if not args.config:
            raise ConfigError("--elements needs --config for the judge backend")
        cfg = RunConfig.load(args.config)
        judge = cfg.build_backends().judge
        templates = cfg.templates()
    report, el = evaluate(records, judge, templates)
    out = report.to_dict()
    if el is not None:
        out["element_details"] = [
            {"case_id": d.case_id, "gold_elements": d.gold_elements,
             "predicted_elements": d.predicted_elements, "covered": d.covered,
             "correct": d.correct, "error": d.error} for d in el.details]
    text = json.dumps(out, indent=2, ensure_ascii=False) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_dump_scores(args: argparse.Namespace) -> int:
    traces = load_traces(args.traces)
    run_id = next((t.metadata.get("run_id", "") for t in traces), "")
    text = scores_csv(traces, run_id)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "build-corpus": cmd_build_corpus,
    "predict": cmd_predict,
    "annotate": cmd_annotate,
    "compare": cmd_compare,
    "evaluate": cmd_evaluate,
    "dump-scores": cmd_dump_scores,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, AlignmentError, StoreError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LexstepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYSTEMIC


if __name__ == "__main__":
    raise SystemExit(main())
