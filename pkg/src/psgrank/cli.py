"""Command-line surface wiring the modules into reproducible pipelines.

Commands: index, segment, features, train, run, eval, ablate, ttest.
Exit codes: 0 success, 1 validation error, 2 runtime error. All paths are
resolved relative to --workdir; outputs go only to the designated output
locations, inputs are never mutated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import CorpusError, CorpusStore, ingest_corpus, load_topics
from .evaluation import (
    JudgmentError,
    average_precision,
    interpolated_precision,
    load_char_qrels,
    load_doc_qrels,
    load_sentence_qrels,
    mean_metric,
    paired_ttest,
    precision_at,
)
from .experiment import ConfigError, ExperimentConfig, run_experiment
from .features import (
    DOC_SCHEMA,
    FeatureSchema,
    PassageFeatureExtractor,
    SemanticResources,
    doc_features,
    minmax_normalize,
    read_svmlight,
    write_svmlight,
)
from .index import IndexError_, LmParams, PositionalIndex, build_index, retrieve_lm
from .ltr import (
    GradedExample,
    LinearModel,
    TrainingError,
    bucket_grade,
    ndcg_at_k,
    train_coordinate_ascent,
    train_pairwise,
)
from .passage import SegmentationParams, char_overlap, segment
from .rank import read_trec_run


class UsageError(ValueError):
    """CLI-level validation failure (exit code 1)."""


def _cmd_index(args) -> int:
    store = ingest_corpus(args.corpus, args.format)
    out = Path(args.out)
    manifest_path = store.save(out)
    index = build_index(store)
    index.save(out / "index.json")
    manifest = store.manifest()
    print(f"documents: {manifest['doc_count']}")
    print(f"tokens: {manifest['token_count']}")
    print(f"terms: {len(index.collection_term_counts)}")
    print(f"manifest: {manifest_path}")
    return 0


def _load_store_and_index(store_dir: str) -> tuple[CorpusStore, PositionalIndex]:
    store = CorpusStore.load(store_dir)
    index = PositionalIndex.load(Path(store_dir) / "index.json", store)
    return store, index


def _cmd_segment(args) -> int:
    store = CorpusStore.load(args.store)
    params = SegmentationParams(args.length, args.mode)
    count = 0
    with Path(args.out).open("w", encoding="utf-8") as f:
        f.write("passage_id\tdoc_id\ttoken_start\ttoken_end\tchar_start\tchar_end\n")
        for doc in store.documents:
            for p in segment(doc, params):
                f.write(
                    f"{p.passage_id}\t{p.doc_id}\t{p.token_range[0]}\t{p.token_range[1]}"
                    f"\t{p.char_range[0]}\t{p.char_range[1]}\n"
                )
                count += 1
    print(f"passages: {count}")
    print(f"written: {args.out}")
    return 0


def _cmd_features(args) -> int:
    store, index = _load_store_and_index(args.store)
    queries = load_topics(args.topics, store.tokenizer)
    params = LmParams(args.mu)
    vectors = []
    grades: dict[tuple[str, str], int] = {}
    if args.kind == "doc":
        schema = DOC_SCHEMA
        judgments = load_doc_qrels(args.qrels) if args.qrels else None
        for q in queries:
            run = retrieve_lm(q, index, LmParams(args.init_mu), args.k_docs)
            per_query = [
                doc_features(q, store.get(d), index, params, store.tokenizer.stopwords)
                for d in run.ids()
            ]
            if args.normalize:
                per_query = minmax_normalize(per_query)
            vectors.extend(per_query)
            if judgments:
                for d in run.ids():
                    grades[(q.query_id, d)] = judgments.grade(q.query_id, d)
    else:
        from .features import PSG_SCHEMA

        schema = PSG_SCHEMA
        judgments = load_char_qrels(args.qrels) if args.qrels else None
        seg = SegmentationParams(args.length, args.seg_mode)
        resources = SemanticResources(esa_index=index)
        for q in queries:
            run = retrieve_lm(q, index, LmParams(args.init_mu), args.k_docs)
            passages_by_doc = {d: segment(store.get(d), seg) for d in run.ids()}
            extractor = PassageFeatureExtractor(
                q, store, index, run.ids(), passages_by_doc, resources, params
            )
            per_query = extractor.all_vectors()
            if args.normalize:
                per_query = minmax_normalize(per_query)
            vectors.extend(per_query)
            if judgments:
                spans_by_doc = judgments.char_spans.get(q.query_id, {})
                for d, plist in passages_by_doc.items():
                    spans = spans_by_doc.get(d, [])
                    for p in plist:
                        overlap, total = char_overlap(p, spans) if spans else (0, 0)
                        grades[(q.query_id, p.passage_id)] = (
                            bucket_grade(overlap / total) if total else 0
                        )
    write_svmlight(args.out, vectors, grades)
    schema_path = Path(args.out).with_suffix(Path(args.out).suffix + ".schema.json")
    schema_path.write_text(
        json.dumps({"name": schema.name, "features": list(schema.features)}, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"vectors: {len(vectors)}")
    print(f"written: {args.out}")
    print(f"schema: {schema_path}")
    return 0


def _cmd_train(args) -> int:
    schema_path = Path(args.features).with_suffix(Path(args.features).suffix + ".schema.json")
    if not schema_path.exists():
        raise UsageError(f"schema sidecar not found: {schema_path}")
    meta = json.loads(schema_path.read_text(encoding="utf-8"))
    schema = FeatureSchema(meta["name"], tuple(meta["features"]))
    rows = read_svmlight(args.features, schema)
    data = [GradedExample(qid, item, vec, grade) for qid, item, vec, grade in rows]
    if args.trainer == "pairwise_hinge":
        model = train_pairwise(
            data, c=args.c, epochs=args.epochs, seed=args.seed,
            learning_rate=args.learning_rate,
        )
    else:
        model = train_coordinate_ascent(
            data, restarts=args.restarts, seed=args.seed, max_passes=args.max_passes
        )
    model.save(args.out)
    from .ltr import score as ltr_score

    by_query: dict[str, list[GradedExample]] = {}
    for ex in data:
        by_query.setdefault(ex.query_id, []).append(ex)
    ndcgs = []
    for qid in sorted(by_query):
        group = by_query[qid]
        run = ltr_score(model, [ex.vector for ex in group])
        ndcgs.append(ndcg_at_k(run, {ex.item_id: ex.grade for ex in group}, 10))
    print(f"examples: {len(data)}")
    print(f"queries: {len(by_query)}")
    print(f"train mean NDCG@10: {sum(ndcgs) / len(ndcgs):.4f}")
    print(f"model: {args.out}")
    return 0


_RUN_OVERRIDES = ("seed", "trainer", "psg_ranker", "window_len", "workers")


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    for name in _RUN_OVERRIDES:  # flags override scalar config fields only
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    report = run_experiment(config, args.out)
    for method in sorted(report.methods):
        parts = "  ".join(f"{k}={v:.4f}" for k, v in sorted(report.methods[method].items()))
        print(f"{method}: {parts}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return 0


def _cmd_eval(args) -> int:
    runs = read_trec_run(args.run)
    mode = args.mode
    if mode == "doc_graded":
        judgments = load_doc_qrels(args.qrels)
    elif mode == "char_focused":
        judgments = load_char_qrels(args.qrels)
    else:
        judgments = load_sentence_qrels(args.qrels)

    per_query: list[dict] = []
    if mode == "char_focused":
        if not args.store:
            raise UsageError("char_focused evaluation needs --store to resolve passage spans")
        store = CorpusStore.load(args.store)
        seg = SegmentationParams(args.length, args.seg_mode)
        spans = {}
        for doc in store.documents:
            for p in segment(doc, seg):
                spans[p.passage_id] = (p.doc_id, p.char_range[0], p.char_range[1])
        for run in runs:
            got = interpolated_precision(run, judgments, spans, recall_points=(0.01, 0.1))
            row = {"query_id": run.query_id}
            if got is None:
                row.update({"ip_0.01": None, "ip_0.1": None, "maip": None})
            else:
                ip, maip = got
                row.update({"ip_0.01": ip[0.01], "ip_0.1": ip[0.1], "maip": maip})
            per_query.append(row)
        aggregate = {
            "mean_ip_0.01": mean_metric([r["ip_0.01"] for r in per_query]),
            "mean_ip_0.1": mean_metric([r["ip_0.1"] for r in per_query]),
            "maip": mean_metric([r["maip"] for r in per_query]),
        }
    else:
        for run in runs:
            per_query.append(
                {
                    "query_id": run.query_id,
                    "ap": average_precision(run, judgments, args.cutoff),
                    "p10": precision_at(run, judgments, 10),
                }
            )
        aggregate = {
            "map": mean_metric([r["ap"] for r in per_query]),
            "mean_p10": mean_metric([r["p10"] for r in per_query]),
        }
    if args.json:
        print(json.dumps({"per_query": per_query, "aggregate": aggregate}, sort_keys=True))
    else:
        for row in per_query:
            parts = "  ".join(
                f"{k}={'n/a' if v is None else format(v, '.4f')}"
                for k, v in row.items()
                if k != "query_id"
            )
            print(f"{row['query_id']}: {parts}")
        for k, v in sorted(aggregate.items()):
            print(f"{k}: {v:.4f}")
    return 0


_FEATURE_FREE_METHODS = {"LM", "DocPsg", "QSF", "PLM"}


def _cmd_ablate(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if all(m in _FEATURE_FREE_METHODS for m in config.methods):
        raise UsageError(
            "ablation needs at least one feature-based method; "
            f"configured: {', '.join(config.methods)}"
        )
    features = args.feature
    baseline = run_experiment(config, Path(args.out) / "baseline")
    ablated_config = ExperimentConfig.from_file(args.config)
    ablated_config.exclusions = list(ablated_config.exclusions) + features
    ablated = run_experiment(ablated_config, Path(args.out) / "ablated")

    comparison = {}
    for method in sorted(baseline.methods):
        base_rows = {
            r["query_id"]: r["primary"] for r in baseline.per_query if r["method"] == method
        }
        abl_rows = {
            r["query_id"]: r["primary"] for r in ablated.per_query if r["method"] == method
        }
        qids = sorted(
            q for q in base_rows if base_rows[q] is not None and abl_rows.get(q) is not None
        )
        entry = {
            "baseline": mean_metric(list(base_rows.values())),
            "ablated": mean_metric(list(abl_rows.values())),
        }
        entry["delta"] = entry["ablated"] - entry["baseline"]
        if len(qids) >= 2:
            try:
                t = paired_ttest(
                    [base_rows[q] for q in qids], [abl_rows[q] for q in qids]
                )
                entry.update(t=t.t, p=t.p, significant=t.significant)
            except ValueError as exc:
                entry["ttest"] = str(exc)
        comparison[method] = entry
    out_path = Path(args.out) / "ablation.json"
    out_path.write_text(
        json.dumps({"excluded": features, "methods": comparison}, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    for method, entry in comparison.items():
        print(
            f"{method}: baseline={entry['baseline']:.4f} "
            f"ablated={entry['ablated']:.4f} delta={entry['delta']:+.4f}"
        )
    print(f"written: {out_path}")
    return 0


def _metric_per_query(run_path: str, qrels_path: str, measure: str, cutoff: int) -> dict:
    judgments = load_doc_qrels(qrels_path)
    values = {}
    for run in read_trec_run(run_path):
        if measure == "map":
            values[run.query_id] = average_precision(run, judgments, cutoff)
        elif measure == "p10":
            values[run.query_id] = precision_at(run, judgments, 10)
        else:
            raise UsageError(f"unknown measure {measure!r}; use map or p10")
    return values


def _cmd_ttest(args) -> int:
    a = _metric_per_query(args.run_a, args.qrels, args.measure, args.cutoff)
    b = _metric_per_query(args.run_b, args.qrels, args.measure, args.cutoff)
    qids = sorted(q for q in a if a[q] is not None and q in b and b[q] is not None)
    if len(qids) < 2:
        raise UsageError("need at least 2 comparable queries")
    result = paired_ttest(
        [a[q] for q in qids], [b[q] for q in qids],
        alpha=args.alpha, corrections=args.corrections,
    )
    print(f"queries: {len(qids)}")
    print(f"mean_a: {mean_metric([a[q] for q in qids]):.4f}")
    print(f"mean_b: {mean_metric([b[q] for q in qids]):.4f}")
    print(f"t: {result.t:.4f}")
    print(f"p: {result.p:.6g}")
    print(f"significant: {result.significant}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psgrank",
        description="Passage-informed document retrieval toolkit",
    )
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="ingest a corpus and build the positional index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", default="jsonl", choices=["jsonl", "trecweb"])
    p.add_argument("--out", required=True, help="store directory to create")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("segment", help="write the passage table of a stored corpus")
    p.add_argument("--store", required=True)
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--mode", default="fixed", choices=["fixed", "sentence"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("features", help="dump feature vectors in SVMlight format")
    p.add_argument("--store", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--kind", required=True, choices=["doc", "psg"])
    p.add_argument("--qrels", help="grades source (doc qrels or char-span qrels)")
    p.add_argument("--out", required=True)
    p.add_argument("--mu", type=float, default=1500.0)
    p.add_argument("--init-mu", type=float, default=1000.0, dest="init_mu")
    p.add_argument("--k-docs", type=int, default=1000, dest="k_docs")
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--seg-mode", default="fixed", choices=["fixed", "sentence"], dest="seg_mode")
    p.add_argument("--normalize", action="store_true", help="min-max normalize per query")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="train a linear model from an SVMlight dump")
    p.add_argument("--features", required=True)
    p.add_argument("--trainer", default="pairwise_hinge",
                   choices=["pairwise_hinge", "coordinate_ascent"])
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.5, dest="learning_rate")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-passes", type=int, default=25, dest="max_passes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("run", help="run a configured experiment end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trainer", choices=["pairwise_hinge", "coordinate_ascent"])
    p.add_argument("--psg-ranker", choices=["ltr", "qsf"], dest="psg_ranker")
    p.add_argument("--window-len", type=int, dest="window_len")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="evaluate a TREC run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mode", default="doc_graded",
                   choices=["doc_graded", "char_focused", "sentence_binary"])
    p.add_argument("--store", help="store directory (char_focused only)")
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--seg-mode", default="fixed", choices=["fixed", "sentence"], dest="seg_mode")
    p.add_argument("--cutoff", type=int, default=1000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="re-run an experiment with features excluded")
    p.add_argument("--config", required=True)
    p.add_argument("--feature", required=True, action="append",
                   help="feature name, optionally qualified as doc.X / psg.X")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("ttest", help="paired t-test between two runs")
    p.add_argument("--run-a", required=True, dest="run_a")
    p.add_argument("--run-b", required=True, dest="run_b")
    p.add_argument("--qrels", required=True)
    p.add_argument("--measure", default="map", choices=["map", "p10"])
    p.add_argument("--cutoff", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--corrections", type=int, default=1)
    p.set_defaults(func=_cmd_ttest)
    return parser


_PATH_ARGS = (
    "corpus", "out", "store", "topics", "qrels", "features", "config", "run",
    "run_a", "run_b",
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workdir = Path(args.workdir)
    for name in _PATH_ARGS:
        value = getattr(args, name, None)
        if value is not None and not Path(value).is_absolute():
            setattr(args, name, str(workdir / value))
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError, JudgmentError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IndexError_, FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
