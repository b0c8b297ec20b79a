"""Command-line pipeline: ingest, predict, match, eval, agree, analyze,
bootstrap, catalog-validate.

Logs go to stderr; data goes to files or stdout. Exit codes: 0 success,
1 validation/data errors, 2 provider errors, 64 usage errors. Defaults
can come from a plain key=value config file (flags override the file;
API keys come only from provider environment variables).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis, bootstrap, matcher, metrics, tasks
from .catalog import (
    ValidationError,
    climate_catalog,
    climate_taxonomy,
    load_catalog_file,
    validate_catalog,
)
from .core import (
    GENERIC_FRAMES,
    NONE,
    NarframeError,
    ParseError,
    load_taxonomy,
    read_annotations,
    read_corpus,
    save_taxonomy,
    write_corpus,
)
from .gateway import (
    CredentialsMissing,
    ProviderError,
    ReplayMiss,
    load_provider_configs,
    make_gateway,
)
from .svg import heatmap_svg, stacked_bar_svg

log = logging.getLogger("narframe")

EX_OK = 0
EX_DATA = 1
EX_PROVIDER = 2
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path: str | Path) -> dict[str, str]:
    """Plain key=value config lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"expected key=value, got {stripped!r}", line_no)
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _setting(args, config: dict[str, str], key: str, default=None):
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    return config.get(key, default)


def _load_domain(args, config):
    taxonomy_path = _setting(args, config, "taxonomy")
    catalog_path = _setting(args, config, "catalog")
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else climate_taxonomy()
    catalog = (load_catalog_file(catalog_path, taxonomy) if catalog_path
               else climate_catalog(taxonomy) if taxonomy_path is None
               else None)
    return taxonomy, catalog


def _make_gateway(args, config):
    provider = _setting(args, config, "provider", "openai")
    replay = _setting(args, config, "replay")
    cache_dir = _setting(args, config, "cache-dir", "cache")
    concurrency = int(_setting(args, config, "concurrency", 4))
    provider_file = _setting(args, config, "providers-file")
    configs = load_provider_configs(provider_file) if provider_file else None
    return make_gateway(
        provider, cache_dir=cache_dir, replay_dir=replay,
        provider_configs=configs, concurrency=concurrency,
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _emit(payload: dict, fmt: str) -> None:
    if fmt == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        for key, value in payload.items():
            writer.writerow([key, value])
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _field_map(spec: str | None) -> dict[str, str] | None:
    if not spec:
        return None
    mapping = {}
    for pair in spec.split(","):
        if "=" not in pair:
            raise ParseError(f"field-map entry {pair!r} is not ours=theirs")
        ours, _, theirs = pair.partition("=")
        mapping[ours.strip()] = theirs.strip()
    return mapping


def cmd_ingest(args, config) -> int:
    taxonomy, _ = _load_domain(args, config)
    articles = read_corpus(args.corpus, taxonomy, _field_map(args.field_map))
    write_corpus(articles, args.out)
    with_gold = sum(1 for a in articles if a.gold is not None)
    log.info("ingested %d articles (%d with gold structures) -> %s",
             len(articles), with_gold, args.out)
    return EX_OK


def cmd_catalog_validate(args, config) -> int:
    taxonomy_path = _setting(args, config, "taxonomy")
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else climate_taxonomy()
    catalog_path = _setting(args, config, "catalog")
    if catalog_path:
        try:
            catalog = load_catalog_file(catalog_path, taxonomy)
        except ValidationError as exc:
            for violation in exc.violations:
                print(str(violation))
            return EX_DATA
    else:
        catalog = climate_catalog(taxonomy)
    violations = validate_catalog(catalog)
    for violation in violations:
        print(str(violation))
    if violations:
        return EX_DATA
    log.info("catalog OK: %d frames, taxonomy %r", len(catalog.frames), taxonomy.name)
    return EX_OK


def _predicted_structures(args, taxonomy, corpus):
    """Assemble degraded structures from prediction archives for match --pred-dir."""
    from .core import NarrativeStructure, parse_label

    root = Path(args.pred_dir)
    run_index = args.run
    by_task = {}
    for task_id in ("HERO", "VILLAIN", "VICTIM", "FOCUS", "CONFLICT", "STORY"):
        path = root / task_id / f"run{run_index}.jsonl"
        if path.is_file():
            by_task[task_id] = tasks.read_prediction_set(path).labels_by_article()
    if not by_task:
        raise ParseError(f"no prediction archives under {root}")
    structures = {}
    for article in corpus:
        kwargs = {}
        for slot, task_id in (("hero", "HERO"), ("villain", "VILLAIN"), ("victim", "VICTIM")):
            label = by_task.get(task_id, {}).get(article.id)
            kwargs[slot] = parse_label(slot, label or NONE, taxonomy)
        for slot, task_id in (("focus", "FOCUS"), ("conflict", "CONFLICT"), ("story", "STORY")):
            label = by_task.get(task_id, {}).get(article.id)
            if label:
                kwargs[slot] = parse_label(slot, label)
        structures[article.id] = NarrativeStructure(**kwargs)
    return structures


def cmd_match(args, config) -> int:
    taxonomy, catalog = _load_domain(args, config)
    if catalog is None:
        raise ParseError("matching needs a catalog (pass --catalog with --taxonomy)")
    corpus = read_corpus(args.corpus, taxonomy)
    if args.use_gold:
        mode = matcher.GOLD
        structures = {a.id: a.gold for a in corpus if a.gold is not None}
    else:
        if not args.pred_dir:
            raise ParseError("pass --use-gold or --pred-dir <runs/provider>")
        mode = matcher.PREDICTED
        structures = _predicted_structures(args, taxonomy, corpus)

    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    counts = {matcher.UNIQUE: 0, matcher.TIED: 0, matcher.NO_MATCH: 0}
    try:
        for article in corpus:
            structure = structures.get(article.id)
            if structure is None:
                continue
            result = matcher.match_structure(structure, catalog, mode=mode)
            counts[result.verdict] += 1
            line = {
                "article_id": article.id,
                "verdict": result.verdict,
                "candidates": [
                    {"frame_id": c.frame_id, "specificity": c.specificity}
                    for c in result.candidates
                ],
            }
            out.write(json.dumps(line, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("verdicts: UNIQUE=%d TIED=%d NO_MATCH=%d",
             counts[matcher.UNIQUE], counts[matcher.TIED], counts[matcher.NO_MATCH])
    return EX_OK


def cmd_predict(args, config) -> int:
    taxonomy, catalog = _load_domain(args, config)
    corpus = read_corpus(args.corpus, taxonomy)
    specs = tasks.build_task_specs(
        taxonomy, catalog,
        topic=_setting(args, config, "topic", tasks.DEFAULT_TOPIC),
        issue=_setting(args, config, "issue"),
        split_roles=args.split_roles,
    )
    task_id = args.task.upper().replace("-", "_")
    if task_id not in specs:
        raise ParseError(f"unknown or unavailable task {args.task!r}; have {sorted(specs)}")
    task = specs[task_id]

    structure_labels = None
    if task_id == "NARRATIVE_STRUCTURED":
        if args.structure_from:
            run_index = args.run
            sets = {}
            for dependency in ("HERO", "VILLAIN", "VICTIM", "FOCUS"):
                path = Path(args.structure_from) / dependency / f"run{run_index}.jsonl"
                sets[dependency] = tasks.read_prediction_set(path)
            structure_labels = tasks.structure_labels_from_predictions(sets)
        else:
            structure_labels = tasks.structure_labels_from_gold(corpus)
        corpus = [a for a in corpus if a.id in structure_labels]

    few_shot = None
    if args.few_shot:
        pool = [
            (a, {task.response_fields[0]: tasks.gold_label(a, task_id)})
            for a in corpus
            if tasks.gold_label(a, task_id) is not None
        ]
        few_shot = tasks.FewShot(pool, k=args.few_shot,
                                 seed=int(_setting(args, config, "seed", 0)))

    gateway = _make_gateway(args, config)
    runs = int(_setting(args, config, "runs", 1))
    prediction_sets = tasks.run_task(
        task, corpus, gateway,
        runs=runs,
        model_id=args.model,
        temperature=float(_setting(args, config, "temperature", 0.0)),
        structure_labels=structure_labels,
        few_shot=few_shot,
    )
    out_dir = Path(_setting(args, config, "out-dir", "runs"))
    for ps in prediction_sets:
        path = tasks.write_prediction_set(ps, out_dir)
        log.info("run %d: %d predictions (%d failures) -> %s",
                 ps.run_index, len(ps.predictions), ps.failure_count(), path)
    return EX_OK


def _eval_classes(task, task_id):
    # Gold role labels legitimately include the "None" sentinel.
    if task_id in ("HERO", "VILLAIN", "VICTIM"):
        return task.label_space + (NONE,)
    return task.label_space


def cmd_eval(args, config) -> int:
    taxonomy, catalog = _load_domain(args, config)
    corpus = read_corpus(args.gold, taxonomy)
    specs = tasks.build_task_specs(taxonomy, catalog, split_roles=False)
    task_id = args.task.upper().replace("-", "_")
    if task_id not in specs:
        raise ParseError(f"unknown task {args.task!r}")
    classes = _eval_classes(specs[task_id], task_id)

    pred_paths = []
    for entry in args.pred:
        path = Path(entry)
        pred_paths.extend(sorted(path.glob("run*.jsonl")) if path.is_dir() else [path])
    if not pred_paths:
        raise ParseError("no prediction files found")

    gold_by_article = {
        a.id: tasks.gold_label(a, task_id)
        for a in corpus
        if tasks.gold_label(a, task_id) is not None
    }
    if not gold_by_article:
        raise ParseError(f"no gold labels for task {task_id} in {args.gold}")
    absent = metrics.EXCLUDE_ABSENT if args.absent_classes == "exclude" else metrics.ZERO_FILL

    scores = []
    last_gold = last_pred = None
    for path in pred_paths:
        ps = tasks.read_prediction_set(path, task_id=task_id)
        labels = ps.labels_by_article()
        ids = [i for i in gold_by_article if i in labels]
        gold = [gold_by_article[i] for i in ids]
        pred = [labels[i] for i in ids]
        scores.append(metrics.macro_f1(gold, pred, classes, absent_classes=absent))
        last_gold, last_pred = gold, pred

    summary = metrics.summarize_runs(scores)
    out_dir = Path(_setting(args, config, "out-dir", "reports")) / task_id.lower()
    out_dir.mkdir(parents=True, exist_ok=True)

    per_class = metrics.per_class_scores(last_gold, last_pred, classes)
    _write_csv(
        out_dir / "per_class_f1.csv",
        ["class", "precision", "recall", "f1", "support"],
        [[s.label, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.support]
         for s in per_class],
    )
    cm = metrics.confusion(last_gold, last_pred, classes)
    _write_csv(
        out_dir / "confusion.csv",
        ["gold\\pred"] + list(cm.columns),
        [[cls] + list(row) for cls, row in zip(cm.classes, cm.counts)],
    )
    (out_dir / "confusion.svg").write_text(
        heatmap_svg(cm.counts, cm.classes, cm.columns, title=f"{task_id} confusion"),
        encoding="utf-8",
    )
    payload = {
        "task": task_id,
        "runs": summary.runs,
        "macro_f1_mean": round(summary.mean, 6),
        "macro_f1_std": round(summary.std, 6),
        "variance_flag": summary.flag,
        "scored_items": len(last_gold),
        "classes": len(classes),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _emit(payload, args.format)
    return EX_OK


def cmd_agree(args, config) -> int:
    taxonomy, _ = _load_domain(args, config)
    records = read_annotations(args.annotations)
    table = metrics.build_agreement_table(records, args.slot)
    specs = tasks.build_task_specs(taxonomy, None)
    slot_task = {"hero": "HERO", "villain": "VILLAIN", "victim": "VICTIM",
                 "focus": "FOCUS", "conflict": "CONFLICT", "story": "STORY"}
    classes = _eval_classes(specs[slot_task[args.slot]], slot_task[args.slot])

    payload = {
        "slot": args.slot,
        "items": len(table.items),
        "annotators": len(table.annotators),
        "krippendorff_alpha": round(metrics.krippendorff_alpha(table), 6),
    }
    if args.expert:
        pairwise = metrics.expert_pairwise(table, args.expert, classes)
        payload.update({k: round(v, 6) for k, v in pairwise.items()})
    _emit(payload, args.format)
    return EX_OK


def _labels_for_analysis(args, corpus, task_id):
    if args.pred:
        ps = tasks.read_prediction_set(args.pred, task_id=task_id)
        labels = {k: v for k, v in ps.labels_by_article().items() if v is not None}
    else:
        labels = {
            a.id: tasks.gold_label(a, task_id)
            for a in corpus
            if tasks.gold_label(a, task_id) is not None
        }
    return labels


def cmd_analyze(args, config) -> int:
    taxonomy, catalog = _load_domain(args, config)
    corpus = read_corpus(args.corpus, taxonomy)
    specs = tasks.build_task_specs(taxonomy, catalog, split_roles=False)
    slot_task = {"hero": "HERO", "villain": "VILLAIN", "victim": "VICTIM",
                 "focus": "FOCUS", "conflict": "CONFLICT", "story": "STORY",
                 "narrative": "NARRATIVE"}
    task_id = slot_task[args.slot]
    classes = _eval_classes(specs[task_id], task_id)
    labels = _labels_for_analysis(args, corpus, task_id)
    out_dir = Path(_setting(args, config, "out-dir", "reports")) / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.what == "distribution":
        table = analysis.distribution(list(labels.values()), classes)
        _write_csv(
            out_dir / f"distribution_{args.slot}.csv",
            ["class", "count", "proportion"],
            [[cls, count, f"{prop:.6f}"] for cls, count, prop in table.rows()],
        )
        (out_dir / f"distribution_{args.slot}.svg").write_text(
            stacked_bar_svg(table.classes, {"count": table.counts},
                            title=f"{args.slot} distribution"),
            encoding="utf-8",
        )
        _emit({"slot": args.slot, "total": table.total,
               "classes": len(table.classes)}, args.format)
    elif args.what == "crosstab":
        table = analysis.crosstab(corpus, labels, classes, args.by)
        header = [f"{args.slot}\\{args.by}"] + list(table.col_values) + ["margin"]
        rows = [
            [cls] + list(row) + [margin]
            for cls, row, margin in zip(table.row_classes, table.counts, table.row_margins())
        ]
        _write_csv(out_dir / f"crosstab_{args.slot}_{args.by}.csv", header, rows)
        shares = table.row_shares()
        _write_csv(
            out_dir / f"crosstab_{args.slot}_{args.by}_row_shares.csv",
            header[:-1],
            [[cls] + [f"{v:.6f}" for v in row] for cls, row in zip(table.row_classes, shares)],
        )
        col_shares = table.col_shares()
        _write_csv(
            out_dir / f"crosstab_{args.slot}_{args.by}_col_shares.csv",
            header[:-1],
            [[cls] + [f"{v:.6f}" for v in row] for cls, row in zip(table.row_classes, col_shares)],
        )
        series = {
            cls: [table.counts[i][j] for j in range(len(table.col_values))]
            for i, cls in enumerate(table.row_classes)
        }
        (out_dir / f"crosstab_{args.slot}_{args.by}.svg").write_text(
            stacked_bar_svg(table.col_values, series, title=f"{args.slot} by {args.by}"),
            encoding="utf-8",
        )
        _emit({"slot": args.slot, "by": args.by, "total": table.total(),
               "excluded": table.excluded}, args.format)
    else:  # intersection
        table = analysis.frame_intersection(
            corpus, labels, classes, GENERIC_FRAMES,
        )
        _write_csv(
            out_dir / "narrative_vs_generic.csv",
            ["narrative"] + list(table.generic) + ["entropy_bits"],
            [
                [narrative] + list(row) + [f"{h:.6f}"]
                for narrative, row, h in zip(table.narratives, table.counts, table.entropy())
            ],
        )
        (out_dir / "narrative_vs_generic.svg").write_text(
            heatmap_svg(table.counts, table.narratives, table.generic,
                        title="narrative vs generic frames"),
            encoding="utf-8",
        )
        _emit({"total": table.total(), "skipped": table.skipped}, args.format)
    return EX_OK


def cmd_bootstrap(args, config) -> int:
    taxonomy, _ = _load_domain(args, config)
    corpus = read_corpus(args.corpus, taxonomy)
    gateway = _make_gateway(args, config)
    result = bootstrap.run_bootstrap(
        corpus, gateway, args.topic,
        model_id=args.model,
        taxonomy_name=args.taxonomy_name,
    )
    save_taxonomy(result.taxonomy, args.out_taxonomy)
    log.info("derived taxonomy with %d classes (%d documents skipped) -> %s",
             len(result.taxonomy.classes), len(result.skipped), args.out_taxonomy)
    if args.out_tasks:
        paths = bootstrap.write_task_specs(result.tasks, args.out_tasks)
        log.info("wrote %d task specs -> %s", len(paths), args.out_tasks)
    return EX_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="narframe", description=__doc__)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--cache-dir", dest="cache_dir", help="completion cache directory")
    parser.add_argument("--provider", help="configured provider name")
    parser.add_argument("--replay", help="replay archive directory (no network)")
    parser.add_argument("--providers-file", dest="providers_file",
                        help="alternative provider config file")
    parser.add_argument("--runs", type=int, help="repeated runs per experiment")
    parser.add_argument("--seed", type=int, help="sampling seed (few-shot examples)")
    parser.add_argument("--taxonomy", help="taxonomy file (default: shipped climate)")
    parser.add_argument("--catalog", help="catalog file (default: shipped climate)")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field-map", dest="field_map",
                   help="ours=theirs[,ours=theirs...] source field mapping")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("catalog-validate", help="validate a frame catalog")
    p.set_defaults(handler=cmd_catalog_validate)

    p = sub.add_parser("match", help="map structures to catalog frames")
    p.add_argument("--corpus", required=True)
    p.add_argument("--use-gold", action="store_true", dest="use_gold")
    p.add_argument("--pred-dir", dest="pred_dir",
                   help="runs/<provider> directory with component predictions")
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--out", help="verdict JSONL (default: stdout)")
    p.set_defaults(handler=cmd_match)

    p = sub.add_parser("predict", help="run a prediction task")
    p.add_argument("--task", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", help="override the provider's default model id")
    p.add_argument("--temperature", type=float)
    p.add_argument("--split-roles", action="store_true", dest="split_roles",
                   help="per-role prompts instead of the combined character prompt")
    p.add_argument("--structure-from", dest="structure_from",
                   help="runs/<provider> directory with noisy component predictions")
    p.add_argument("--run", type=int, default=0,
                   help="run index to chain structure labels from")
    p.add_argument("--few-shot", dest="few_shot", type=int,
                   help="inject N gold examples into the prompt")
    p.add_argument("--topic")
    p.add_argument("--issue")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--task", required=True)
    p.add_argument("--gold", required=True, help="gold corpus JSONL")
    p.add_argument("--pred", required=True, nargs="+",
                   help="prediction run files or directories")
    p.add_argument("--absent-classes", dest="absent_classes",
                   choices=["zero", "exclude"], default="zero")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("agree", help="inter-annotator agreement statistics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--slot", required=True,
                   choices=["hero", "villain", "victim", "focus", "conflict", "story"])
    p.add_argument("--expert", help="expert annotator id for pairwise statistics")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(handler=cmd_agree)

    p = sub.add_parser("analyze", help="distributions, cross-tabs, intersections")
    p.add_argument("--corpus", required=True)
    p.add_argument("--what", required=True,
                   choices=["distribution", "crosstab", "intersection"])
    p.add_argument("--slot", default="narrative",
                   choices=["hero", "villain", "victim", "focus", "conflict",
                            "story", "narrative"])
    p.add_argument("--by", default="leaning", choices=["leaning", "outlet", "year"])
    p.add_argument("--pred", help="use labels from this prediction run instead of gold")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("bootstrap", help="derive a taxonomy for a new domain")
    p.add_argument("--corpus", required=True, help="speech corpus JSONL")
    p.add_argument("--topic", required=True)
    p.add_argument("--model")
    p.add_argument("--taxonomy-name", dest="taxonomy_name")
    p.add_argument("--out-taxonomy", dest="out_taxonomy", required=True)
    p.add_argument("--out-tasks", dest="out_tasks")
    p.set_defaults(handler=cmd_bootstrap)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = load_config(args.config) if args.config else {}
    try:
        return args.handler(args, config)
    except (CredentialsMissing, ProviderError, ReplayMiss) as exc:
        log.error("%s", exc)
        return EX_PROVIDER
    except NarframeError as exc:
        log.error("%s", exc)
        return EX_DATA


if __name__ == "__main__":
    sys.exit(main())
