"""Command-line interface.

Verbs: validate, generate, check, emit-tuning, mix, run, evaluate, report,
serve. Exit codes: 0 on success, 2 on validation errors, 3 on transport
aborts. Backends come either from scripted transcript fixtures (desk runs,
zero network) or from HTTP endpoints with bearer auth read from an
environment variable; auth tokens never live in config files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset, evaluation, generation, orchestrator
from .annotation import AnnotationStore
from .backends import (
    BackendEndpoint,
    HttpChatBackend,
    HttpDetectorBackend,
    ScriptedChatBackend,
    ScriptedDetectorBackend,
    TransportError,
)
from .dataset import (
    Manifest,
    ManifestValidationError,
    MixSpec,
    load_manifest,
    mix_datasets,
    save_conversations,
    validate_manifest,
)
from .generation import PassRateLedger, check_sentence, load_prompt_template
from .grammar import get_grammar, load_grammars

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3

logger = logging.getLogger("intentground")


def _grammar(args):
    if getattr(args, "grammar_config", None):
        grammars = load_grammars(args.grammar_config)
        if args.grammar not in grammars:
            raise SystemExit(f"grammar {args.grammar!r} not in {args.grammar_config}")
        return grammars[args.grammar]
    return get_grammar(args.grammar)


def _chat_backend(args):
    if getattr(args, "chat_transcript", None):
        return ScriptedChatBackend.from_file(args.chat_transcript)
    if getattr(args, "chat_url", None):
        endpoint = BackendEndpoint(
            kind="chat", base_url=args.chat_url, auth_env_var=args.auth_env, timeout=args.timeout
        )
        return HttpChatBackend(endpoint)
    raise SystemExit("need --chat-transcript or --chat-url")


def _detector_backend(args):
    if getattr(args, "detector_transcript", None):
        return ScriptedDetectorBackend.from_file(args.detector_transcript)
    if getattr(args, "detector_url", None):
        endpoint = BackendEndpoint(
            kind="detector",
            base_url=args.detector_url,
            auth_env_var=args.auth_env,
            timeout=args.timeout,
        )
        return HttpDetectorBackend(endpoint)
    return None


def _load_ledger(path: str | None) -> PassRateLedger:
    if path and Path(path).exists():
        return PassRateLedger.load(path)
    return PassRateLedger()


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    stats, issues = validate_manifest(manifest)
    print(json.dumps(stats, indent=2, sort_keys=True))
    if issues:
        for issue in issues:
            print(f"ERROR {issue}", file=sys.stderr)
        print(f"{len(issues)} issue(s) found", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"manifest clean: {len(manifest.records)} records")
    return EXIT_OK


def cmd_generate(args) -> int:
    manifest = load_manifest(args.manifest)
    backend = _chat_backend(args)
    template = (
        generation.PromptTemplate.from_dict(json.loads(Path(args.template).read_text()))
        if args.template
        else None
    )
    ledger = _load_ledger(args.ledger)
    records = [r for r in manifest.records if r.query_type == args.type]
    if args.limit:
        records = records[: args.limit]
    results = generation.generate_candidates_batch(
        records, args.type, backend, template, concurrency_limit=args.concurrency, ledger=ledger
    )
    written = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for record, candidates in zip(records, results):
            if candidates is None:
                logger.warning("no candidate set for %s (format failure)", record.record_id)
                continue
            fh.write(json.dumps(candidates.to_dict(), sort_keys=True) + "\n")
            written += 1
    if args.ledger:
        ledger.save(args.ledger)
    print(f"wrote {written} candidate sets to {args.out}")
    print(f"generation pass rate ({args.type}): {ledger.format_rate(args.type, 'generation')}")
    return EXIT_OK


def cmd_check(args) -> int:
    manifest = load_manifest(args.manifest)
    by_id = manifest.by_id()
    backend = _chat_backend(args)
    template = (
        generation.PromptTemplate.from_dict(json.loads(Path(args.template).read_text()))
        if args.template
        else None
    )
    ledger = _load_ledger(args.ledger)
    n_checked = 0
    with open(args.candidates, encoding="utf-8") as src, open(args.out, "w", encoding="utf-8") as out:
        for line in src:
            if not line.strip():
                continue
            cs = generation.CandidateSet.from_dict(json.loads(line))
            record = by_id.get(cs.record_id)
            if record is None:
                logger.warning("candidate set for unknown record %s", cs.record_id)
                continue
            for index, sentence in enumerate(cs.sentences):
                leaked = cs.intention_type == "uncommon" and generation.is_leaked(
                    sentence, record.object_category
                )
                verdict = check_sentence(
                    sentence, record.object_category, cs.intention_type, backend, template
                )
                ledger.record_outcome(
                    cs.intention_type, "checker", verdict.accepted, leaked=leaked
                )
                out.write(
                    json.dumps(
                        {
                            "record_id": cs.record_id,
                            "intention_type": cs.intention_type,
                            "sentence_index": index,
                            "sentence": sentence,
                            "accepted": verdict.accepted,
                            "rationale": verdict.rationale,
                            "leaked": leaked,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                n_checked += 1
    if args.ledger:
        ledger.save(args.ledger)
    print(f"checked {n_checked} sentences -> {args.out}")
    for itype in dataset.INTENTION_TYPES:
        print(f"checker pass rate ({itype}): {ledger.format_rate(itype, 'checker')}")
    return EXIT_OK


def cmd_emit_tuning(args) -> int:
    manifest = load_manifest(args.manifest)
    grammar = _grammar(args)
    emit = dataset.CONVERSATION_STYLES[args.style]
    conversations = emit(manifest, grammar)
    save_conversations(conversations, args.out)
    print(f"wrote {len(conversations)} {args.style} conversations to {args.out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    spec = MixSpec.from_file(args.spec)
    grammar = _grammar(args)
    conversations = mix_datasets(spec, grammar)
    save_conversations(conversations, args.out)
    print(f"wrote {len(conversations)} mixed conversations to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    grammar = _grammar(args)
    chat = _chat_backend(args)
    detector = _detector_backend(args)
    backends = orchestrator.ModeBackends(grounder=chat, reasoner=chat, detector=detector)
    vocabulary = (
        [line.strip() for line in Path(args.vocabulary).read_text().splitlines() if line.strip()]
        if args.vocabulary
        else dataset.vocabulary_categories()
    )
    query_types = args.query_types.split(",") if args.query_types else None
    result = orchestrator.batch_run(
        manifest,
        args.mode,
        backends,
        grammar,
        out_dir=args.out_dir,
        vocabulary=vocabulary,
        concurrency_limit=args.concurrency,
        query_types=query_types,
        max_failure_rate=args.max_failure_rate,
    )
    print(
        f"{result.n_records} records -> {result.predictions_path} "
        f"({result.n_ok} ok, {result.n_transport_failures} transport failures)"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.config:
        cfg = evaluation.EvalConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = evaluation.EvalConfig(
            thresholds=tuple(float(t) for t in args.thresholds.split(",")),
            strict=not args.non_strict,
            gt_mode=args.gt_mode,
            splits=tuple(args.splits.split(",")),
            query_types=tuple(args.query_types.split(",")),
        )
    report = evaluation.evaluate_files(args.predictions, args.manifest, cfg)
    payload = evaluation.render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
        print(f"wrote {args.format} report to {args.out}")
    else:
        sys.stdout.write(payload.decode())
    return EXIT_OK


def cmd_report(args) -> int:
    data = Path(args.report).read_bytes()
    if args.report.endswith(".csv"):
        report = evaluation.parse_report_csv(data)
    else:
        report = evaluation.parse_report_structured(data)
    if args.predictions and args.manifest:
        for warning in evaluation.check_provenance(report, args.predictions, args.manifest):
            print(f"WARNING {warning}", file=sys.stderr)
    payload = evaluation.render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode())
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    manifest = load_manifest(args.manifest)
    checker = None
    if args.checker_transcript:
        backend = ScriptedChatBackend.from_file(args.checker_transcript)
        template = load_prompt_template("checker")

        def checker(sentence: str, category: str):
            return check_sentence(sentence, category, "context", backend, template)

    store = AnnotationStore(
        manifest,
        checker=checker,
        lease_seconds=args.lease_seconds,
        event_log_path=args.event_log,
    )
    if args.candidates:
        candidate_sets = []
        with open(args.candidates, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    candidate_sets.append(generation.CandidateSet.from_dict(json.loads(line)))
        store.create_tasks(candidate_sets)
    app = create_app(store, images_root=args.images_root)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intentground", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backend_flags(p, detector: bool = False):
        p.add_argument("--chat-transcript", help="scripted chat transcript (JSONL)")
        p.add_argument("--chat-url", help="chat backend endpoint URL")
        p.add_argument("--auth-env", default="INTENTGROUND_TOKEN", help="env var holding the bearer token")
        p.add_argument("--timeout", type=float, default=30.0)
        if detector:
            p.add_argument("--detector-transcript", help="scripted detector transcript (JSONL)")
            p.add_argument("--detector-url", help="detector backend endpoint URL")

    p = sub.add_parser("validate", help="validate a manifest and print its stats")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="generate candidate intention sentences")
    p.add_argument("--manifest", required=True)
    p.add_argument("--type", choices=dataset.INTENTION_TYPES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--template", help="prompt template JSON (defaults to packaged fixture)")
    p.add_argument("--ledger", help="pass-rate ledger JSON, updated in place")
    p.add_argument("--limit", type=int)
    p.add_argument("--concurrency", type=int, default=4)
    add_backend_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("check", help="run the checker gate over candidate sentences")
    p.add_argument("--candidates", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--template", help="checker prompt template JSON")
    p.add_argument("--ledger", help="pass-rate ledger JSON, updated in place")
    add_backend_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("emit-tuning", help="emit instruction-tuning conversations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--style", choices=sorted(dataset.CONVERSATION_STYLES), required=True)
    p.add_argument("--grammar", default="curly-bins-100")
    p.add_argument("--grammar-config", help="grammar presets JSON (defaults to packaged fixture)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_tuning)

    p = sub.add_parser("mix", help="mix tuning conversations from several manifests")
    p.add_argument("--spec", required=True, help="mix spec JSON")
    p.add_argument("--grammar", default="curly-bins-100")
    p.add_argument("--grammar-config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("run", help="run an inference pipeline over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=orchestrator.MODES, required=True)
    p.add_argument("--grammar", default="curly-bins-100")
    p.add_argument("--grammar-config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocabulary", help="newline-delimited category file (defaults to packaged)")
    p.add_argument("--query-types", help="comma-separated query types to include")
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--max-failure-rate", type=float, default=0.10)
    add_backend_flags(p, detector=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score a predictions file against a manifest")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="EvalConfig JSON file; overrides the flags below")
    p.add_argument("--thresholds", default="0.3,0.5")
    p.add_argument("--non-strict", action="store_true", help="compare IoU >= t instead of > t")
    p.add_argument("--gt-mode", choices=evaluation.GT_MODES, default="with_alternatives")
    p.add_argument("--splits", default="test")
    p.add_argument("--query-types", default="context,uncommon")
    p.add_argument("--format", choices=evaluation.REPORT_FORMATS, default="structured")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-render a stored report")
    p.add_argument("--report", required=True, help="structured (.json) or csv report file")
    p.add_argument("--format", choices=evaluation.REPORT_FORMATS, default="text-table")
    p.add_argument("--out")
    p.add_argument("--predictions", help="check provenance hash against this file")
    p.add_argument("--manifest", help="check provenance hash against this file")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--candidates", help="candidate sets JSONL to seed sentence tasks")
    p.add_argument("--checker-transcript", help="scripted checker transcript (JSONL)")
    p.add_argument("--images-root")
    p.add_argument("--event-log")
    p.add_argument("--lease-seconds", type=float, default=900.0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestValidationError as exc:
        print(f"manifest validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except orchestrator.BatchAbortError as exc:
        print(f"batch aborted: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
