"""Command-line surface: ingest -> enrich -> query -> techniques -> layer.

stdout carries only machine-consumable data (counts, result rows, JSON
documents) so commands compose in pipelines; everything meant for a human
goes to stderr. Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys
from dataclasses import asdict

from . import analytics, navigator
from .enrichment import (
    Gazetteer,
    apply_enrichment,
    load_enrichment,
    suggest_enrichment,
)
from .graph_store import KnowledgeGraph, build_graph, group_view, resolve_group
from .query import compile_query, evaluate
from .stix_core import (
    Bundle,
    IntrusionSet,
    KbError,
    fatal_violations,
    parse_bundle,
    serialize_bundle,
    type_counts,
    validate,
)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL = 2


class _UsageError(KbError):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise _UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="attackgkb",
        description="Filter ATT&CK activity groups and export technique overlap.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_kb(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--kb",
            default=os.environ.get("ATTCK_KB"),
            help="path to the STIX 2.1 bundle (defaults to $ATTCK_KB)",
        )

    def add_gazetteer(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--gazetteer", help="path to a gazetteer JSON file (default: built-in)"
        )

    def add_group_source(p: argparse.ArgumentParser) -> None:
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--query", help="group filter query")
        src.add_argument(
            "--groups", help="comma-separated group names, aliases, or G#### ids"
        )
        src.add_argument(
            "--stdin",
            action="store_true",
            help="read group keys from standard input, one per line",
        )

    p = sub.add_parser("ingest", help="parse a bundle and print object counts")
    add_kb(p)

    p = sub.add_parser("validate", help="report structural violations in a bundle")
    add_kb(p)

    p = sub.add_parser("enrich", help="apply enrichment records to a bundle")
    add_kb(p)
    p.add_argument("--records", required=True, help="enrichment records JSON file")
    add_gazetteer(p)
    p.add_argument("--out", help="output path for the enhanced bundle (default: stdout)")

    p = sub.add_parser("suggest", help="draft an enrichment record from a description")
    p.add_argument("group", help="group name, alias, or G#### id")
    add_kb(p)
    add_gazetteer(p)

    p = sub.add_parser("query", help="filter groups with the query language")
    p.add_argument("query", nargs="?", help="query text")
    p.add_argument("--query-file", help="read the query from a file instead")
    add_kb(p)
    add_gazetteer(p)
    p.add_argument(
        "--format", choices=("table", "json", "ids"), default="table",
        help="output format (default: table)",
    )
    p.add_argument(
        "--expand-regions",
        action="store_true",
        help="let TargetCountry also match groups targeting a containing region",
    )

    p = sub.add_parser("techniques", help="prioritized techniques of a group set")
    add_kb(p)
    add_gazetteer(p)
    add_group_source(p)
    p.add_argument(
        "--rollup", action="store_true",
        help="credit sub-technique use to the parent technique as well",
    )
    p.add_argument("--expand-regions", action="store_true")
    p.add_argument(
        "--figure", help="also render the overlap chart to this image file"
    )

    p = sub.add_parser("layer", help="write an ATT&CK Navigator layer file")
    add_kb(p)
    add_gazetteer(p)
    add_group_source(p)
    p.add_argument("--rollup", action="store_true")
    p.add_argument("--expand-regions", action="store_true")
    p.add_argument("--out", help="output path for the layer (default: stdout)")
    p.add_argument("--palette", help="JSON file mapping tier count to #RRGGBB color")
    p.add_argument("--layer-name", default="Technique overlap")
    p.add_argument("--layer-description", default="")
    p.add_argument("--attack-version", default=navigator.DEFAULT_ATTACK_VERSION)
    p.add_argument("--layer-version", default=navigator.DEFAULT_LAYER_VERSION)
    p.add_argument("--navigator-version", default=navigator.DEFAULT_NAVIGATOR_VERSION)

    return parser


def _read_file(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc}")


def _write_file(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    except OSError as exc:
        raise _UsageError(f"cannot write {path}: {exc}")


def _load_kb(args) -> Bundle:
    if not args.kb:
        raise _UsageError("no knowledge base: pass --kb or set ATTCK_KB")
    bundle = parse_bundle(_read_file(args.kb))
    for problem in bundle.problems:
        print(f"warning: {problem.object_id}: {problem.reason}", file=sys.stderr)
    return bundle


def _load_gazetteer(args) -> Gazetteer:
    if getattr(args, "gazetteer", None):
        return Gazetteer.from_text(_read_file(args.gazetteer))
    return Gazetteer.default()


def _group_set(args, graph: KnowledgeGraph, gazetteer: Gazetteer, stdin: str | None):
    if args.query:
        result = evaluate(
            compile_query(args.query, gazetteer),
            graph,
            expand_regions=args.expand_regions,
            gazetteer=gazetteer,
        )
        for warning in result.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        return list(result.ids)
    if args.groups:
        keys = [k.strip() for k in args.groups.split(",") if k.strip()]
    else:
        if stdin is None:
            raise _UsageError("--stdin given but no input is available")
        keys = [line.strip() for line in stdin.splitlines() if line.strip()]
    ids = []
    for key in keys:
        gid = resolve_group(graph, key)
        if gid is None:
            raise _UsageError(f"unknown group: {key}")
        ids.append(gid)
    return ids


def _cmd_ingest(args, stdin) -> int:
    bundle = _load_kb(args)
    violations = validate(bundle)
    for count_type, count in sorted(type_counts(bundle).items()):
        print(f"{count_type}\t{count}")
    fatal = fatal_violations(violations)
    print(
        f"{len(bundle.objects)} objects, {len(bundle.problems)} parse problems, "
        f"{len(violations)} violations ({len(fatal)} fatal)",
        file=sys.stderr,
    )
    return EXIT_USER_ERROR if (bundle.problems or fatal) else EXIT_OK


def _cmd_validate(args, stdin) -> int:
    bundle = _load_kb(args)
    violations = validate(bundle)
    for v in violations:
        flag = "fatal" if v.fatal else "warning"
        print(f"{flag}: {v.code}: {v.object_id or '<bundle>'}: {v.detail}",
              file=sys.stderr)
    print(f"{len(violations)} violations", file=sys.stderr)
    return EXIT_USER_ERROR if violations else EXIT_OK


def _cmd_enrich(args, stdin) -> int:
    bundle = _load_kb(args)
    fatal = fatal_violations(validate(bundle))
    if fatal:
        raise _UsageError(f"bundle has fatal violations: {fatal[0].detail}")
    gazetteer = _load_gazetteer(args)
    load = load_enrichment(_read_file(args.records), gazetteer)
    for warning in load.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    enhanced, report = apply_enrichment(bundle, load.records)
    print(
        f"matched {report.groups_matched} groups; created "
        f"{report.locations_created} locations, {report.identities_created} "
        f"identities, {report.relationships_created} relationships; set "
        f"motivations on {report.motivations_set} groups",
        file=sys.stderr,
    )
    for key in report.groups_unmatched:
        print(f"warning: unmatched group key: {key}", file=sys.stderr)
    for key in report.ambiguous_keys:
        print(f"warning: ambiguous group key: {key}", file=sys.stderr)
    text = serialize_bundle(enhanced)
    if args.out:
        _write_file(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_suggest(args, stdin) -> int:
    bundle = _load_kb(args)
    gazetteer = _load_gazetteer(args)
    graph = build_graph(bundle)
    gid = resolve_group(graph, args.group)
    if gid is None:
        raise _UsageError(f"unknown group: {args.group}")
    group = graph.objects[gid]
    assert isinstance(group, IntrusionSet)
    draft = suggest_enrichment(group, gazetteer)
    document = {"draft": True, **asdict(draft.record),
                "witnesses": [asdict(w) for w in draft.witnesses]}
    print(json.dumps(document, indent=2, ensure_ascii=False))
    return EXIT_OK


def _cmd_query(args, stdin) -> int:
    if bool(args.query) == bool(args.query_file):
        raise _UsageError("pass a query string or --query-file (not both)")
    text = args.query if args.query else _read_file(args.query_file)
    bundle = _load_kb(args)
    gazetteer = _load_gazetteer(args)
    graph = build_graph(bundle)
    result = evaluate(
        compile_query(text, gazetteer),
        graph,
        expand_regions=args.expand_regions,
        gazetteer=gazetteer,
    )
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.format == "json":
        print(
            json.dumps(
                {
                    "ids": list(result.ids),
                    "names": list(result.names),
                    "attack_ids": list(result.attack_ids),
                    "warnings": [str(w) for w in result.warnings],
                },
                indent=2,
                ensure_ascii=False,
            )
        )
    elif args.format == "ids":
        for attack_id in result.attack_ids:
            print(attack_id)
    else:
        for attack_id, name in zip(result.attack_ids, result.names):
            print(f"{attack_id or '-':<8} {name}")
    return EXIT_OK


def _usage_rows(args, stdin):
    bundle = _load_kb(args)
    gazetteer = _load_gazetteer(args)
    graph = build_graph(bundle)
    ids = _group_set(args, graph, gazetteer, stdin)
    usages = analytics.techniques_of_groups(graph, ids, rollup=args.rollup)
    summary = analytics.overlap_summary(usages, n_groups=len(set(ids)))
    return usages, summary


def _cmd_techniques(args, stdin) -> int:
    usages, summary = _usage_rows(args, stdin)
    for usage in usages:
        groups = ",".join(usage.groups)
        print(f"{usage.attack_id}\t{usage.count}\t{usage.technique_name}\t{groups}")
    if args.figure:
        from .figures import render_technique_figure

        render_technique_figure(
            usages, summary.n_groups, args.figure,
            title=f"Technique overlap across {summary.n_groups} groups",
        )
        print(f"figure written to {args.figure}", file=sys.stderr)
    return EXIT_OK


def _cmd_layer(args, stdin) -> int:
    usages, summary = _usage_rows(args, stdin)
    palette = None
    if args.palette:
        try:
            raw = json.loads(_read_file(args.palette))
            palette = {int(k): str(v) for k, v in raw.items()}
        except (json.JSONDecodeError, ValueError, AttributeError) as exc:
            raise _UsageError(f"bad palette file: {exc}")
    layer = navigator.layer_from_summary(
        usages,
        summary,
        palette,
        name=args.layer_name,
        description=args.layer_description,
        layer_version=args.layer_version,
        attack_version=args.attack_version,
        navigator_version=args.navigator_version,
    )
    text = navigator.write_layer(layer)
    if args.out:
        _write_file(args.out, text)
        print(f"layer written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "validate": _cmd_validate,
    "enrich": _cmd_enrich,
    "suggest": _cmd_suggest,
    "query": _cmd_query,
    "techniques": _cmd_techniques,
    "layer": _cmd_layer,
}


def run(argv: list[str], stdin: str | None = None) -> tuple[int, str, str]:
    """Run the CLI against captured streams; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            args = _build_parser().parse_args(argv)
            code = _COMMANDS[args.command](args, stdin)
        except _UsageError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_USER_ERROR
        except KbError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_USER_ERROR
        except SystemExit as exc:  # argparse --help
            code = EXIT_OK if not exc.code else EXIT_USER_ERROR
        except Exception as exc:  # pragma: no cover - defensive
            print(f"internal error: {exc!r}", file=sys.stderr)
            code = EXIT_INTERNAL
    return code, out.getvalue(), err.getvalue()


def main() -> None:
    stdin = None
    if not sys.stdin.isatty():
        try:
            stdin = sys.stdin.read()
        except OSError:
            stdin = None
    code, out, err = run(sys.argv[1:], stdin)
    sys.stdout.write(out)
    sys.stderr.write(err)
    sys.exit(code)


if __name__ == "__main__":
    main()
