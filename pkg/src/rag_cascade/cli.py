"""Operator command line: ingest, index, retrieve, judge, and analyze.

Every analysis command reads and writes plain files (JSON / NDJSON / CSV),
so a full experiment is a shell pipeline:

    rag-cascade ingest   --corpus corpus.jsonl --out chunks.jsonl
    rag-cascade index    --chunks chunks.jsonl --out-dir idx/
    rag-cascade cascade  --index-dir idx/ --queries queries.jsonl --out results.jsonl
    rag-cascade judge    --index-dir idx/ --results results.jsonl --mock --out scores.jsonl
    rag-cascade evaluate --scores scores.jsonl --out-dir report/
    rag-cascade pareto   --scores scores.jsonl --out report/pareto.csv

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, routing
from .cascade import CascadeConfig, run_cascade
from .clients import EndpointError
from .corpus import (
    CorpusError,
    Query,
    chunk_corpus,
    ingest_corpus,
    load_queries,
)
from .dense import EmbedderSpec
from .evaluation import (
    EvalRecord,
    JudgeClient,
    MockJudge,
    ParetoPoint,
    aggregate,
    decompose_advantage,
    head_to_head,
    judge_response,
    load_judge_prompt,
    pareto_frontier,
    r2_coverage,
    r2_sensitivity,
    read_score_log,
    wilcoxon_signed_rank,
    write_score_log,
)
from .persist import (
    PersistError,
    ResultRecord,
    load_chunks,
    load_index_dir,
    read_results,
    result_from_retrieval,
    save_chunks,
    save_index_dir,
    trace_record,
    write_results,
)
from .service import AppState, create_server
from .workflows import (
    WORKFLOW_IDS,
    TransformerSpec,
    WorkflowConfig,
    build_search_indexes,
    run_workflow,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); we reserve 2 for data
        raise UsageError(message)


# run-config keys that map straight onto CLI flags
_CONFIG_KEYS = (
    "corpus", "chunks", "index_dir", "queries", "out_dir",
    "k", "tau", "rrf_k", "sequence", "min_docs",
    "dimension", "max_tokens", "seed",
)
_CONFIG_ENDPOINT_KEYS = {
    ("embedder", "url"): "embedder_endpoint",
    ("embedder", "model"): "embedder_model",
    ("expansion", "url"): "expansion_endpoint",
    ("expansion", "model"): "llm_model",
    ("expansion", "prompt_file"): "expansion_prompt_file",
    ("hyde", "url"): "hyde_endpoint",
    ("hyde", "model"): "llm_model",
    ("hyde", "prompt_file"): "hyde_prompt_file",
    ("judge", "url"): "endpoint",
    ("judge", "model"): "model",
}


def load_run_config(path: str) -> dict:
    """Load a run-config file and check that every referenced path exists."""
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("corpus", "chunks", "index_dir", "queries"):
        if cfg.get(key) is not None and not Path(cfg[key]).exists():
            raise ValueError(f"config {key}={cfg[key]!r} does not exist")
    for section in cfg.get("endpoints", {}).values():
        prompt = section.get("prompt_file")
        if prompt is not None and not Path(prompt).exists():
            raise ValueError(f"config prompt_file={prompt!r} does not exist")
    return cfg


def apply_run_config(args: argparse.Namespace, cfg: dict) -> None:
    """Fill flags the user did not pass from the run config."""
    for key in _CONFIG_KEYS:
        if key in cfg and getattr(args, key, False) is None:
            setattr(args, key, cfg[key])
    endpoints = cfg.get("endpoints", {})
    for (section, field), dest in _CONFIG_ENDPOINT_KEYS.items():
        value = endpoints.get(section, {}).get(field)
        if value is not None and getattr(args, dest, False) is None:
            setattr(args, dest, value)


def _require(args: argparse.Namespace, name: str) -> str:
    value = getattr(args, name, None)
    if value is None:
        raise UsageError(f"--{name.replace('_', '-')} is required (flag or config)")
    return value


def _read_template(path: str | None, fallback: str) -> str:
    if path is None:
        return fallback
    return Path(path).read_text(encoding="utf-8")


def _workflow_config(args: argparse.Namespace) -> WorkflowConfig:
    kwargs = {}
    if getattr(args, "k", None) is not None:
        kwargs["k"] = args.k
    if getattr(args, "tau", None) is not None:
        kwargs["tau"] = args.tau
    if getattr(args, "rrf_k", None) is not None:
        kwargs["rrf_k"] = args.rrf_k
    if getattr(args, "mock", False):
        # pin the deterministic offline transformers even when a config
        # supplies live endpoints
        return WorkflowConfig(**kwargs)
    if getattr(args, "expansion_endpoint", None):
        kwargs["expansion"] = TransformerSpec(
            kind="llm_expansion",
            endpoint=args.expansion_endpoint,
            model_name=getattr(args, "llm_model", None) or "expansion",
            prompt_template=_read_template(
                getattr(args, "expansion_prompt_file", None),
                "Foreslå relaterede søgeord til: {query}",
            ),
        )
    if getattr(args, "hyde_endpoint", None):
        kwargs["hyde"] = TransformerSpec(
            kind="llm_hyde",
            endpoint=args.hyde_endpoint,
            model_name=getattr(args, "llm_model", None) or "hyde",
            prompt_template=_read_template(
                getattr(args, "hyde_prompt_file", None),
                "Skriv et kort encyklopædisk afsnit, der besvarer: {query}",
            ),
        )
    return WorkflowConfig(**kwargs)


def _load_queries_arg(args: argparse.Namespace) -> list[Query]:
    if getattr(args, "text", None):
        return [Query(query_id="q0", text=args.text)]
    if getattr(args, "queries", None):
        return load_queries(args.queries)
    raise UsageError("provide --text or --queries")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = _require(args, "corpus")
    max_tokens = args.max_tokens if args.max_tokens is not None else 512
    store = ingest_corpus(corpus)
    chunks = chunk_corpus(store, max_tokens=max_tokens, index_titles=not args.no_titles)
    titles = {d.doc_id: d.title for d in store}
    save_chunks(chunks, titles, args.out)
    print(f"ingested {len(store)} documents -> {len(chunks)} chunks -> {args.out}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    chunks, titles = load_chunks(_require(args, "chunks"))
    dimension = args.dimension if args.dimension is not None else 256
    if getattr(args, "embedder_endpoint", None):
        embedder = EmbedderSpec(
            kind="external_endpoint",
            dimension=dimension,
            endpoint=args.embedder_endpoint,
            model_name=args.embedder_model or "embedder",
        )
    else:
        embedder = EmbedderSpec(dimension=dimension)
    indexes = build_search_indexes(chunks, embedder, titles)
    save_index_dir(args.out_dir, indexes, chunks)
    print(
        f"indexed {len(chunks)} chunks "
        f"({len(indexes.lexical.postings)} terms, dimension {dimension}) -> {args.out_dir}"
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    indexes = load_index_dir(_require(args, "index_dir"))
    config = _workflow_config(args)
    queries = _load_queries_arg(args)
    records = []
    for q in queries:
        res = run_workflow(args.workflow, q, config, indexes)
        records.append(result_from_retrieval(q.text, q.condition, res))
    if args.out:
        write_results(records, args.out)
        print(f"{len(records)} results -> {args.out}")
    else:
        for r in records:
            print(
                json.dumps(
                    {
                        "query_id": r.query_id,
                        "workflow": r.workflow,
                        "has_sources": r.has_sources,
                        "sources": [[cid, score] for cid, score in r.sources],
                    },
                    ensure_ascii=False,
                )
            )
    return EXIT_OK


def cmd_cascade(args: argparse.Namespace) -> int:
    indexes = load_index_dir(_require(args, "index_dir"))
    wf_config = _workflow_config(args)
    sequence = tuple(args.sequence.split(",")) if args.sequence else CascadeConfig().sequence
    min_docs = args.min_docs if args.min_docs is not None else 1
    config = CascadeConfig(sequence=sequence, min_docs=min_docs, workflow_config=wf_config)
    queries = _load_queries_arg(args)
    records: list[ResultRecord] = []
    n_deferred = 0
    for q in queries:
        trace, final = run_cascade(q, config, indexes)
        sources = tuple(final.docs.items) if final is not None else ()
        if final is None:
            n_deferred += 1
        records.append(
            ResultRecord(
                query_id=q.query_id,
                condition=q.condition,
                query_text=q.text,
                workflow="cascade",
                has_sources=final is not None,
                latency_s=trace.cumulative_latency,
                sources=sources,
                trace=trace_record(trace),
            )
        )
        if args.baselines:
            for wid in WORKFLOW_IDS:
                res = run_workflow(wid, q, wf_config, indexes)
                records.append(result_from_retrieval(q.text, q.condition, res))
    write_results(records, args.out)
    print(
        f"cascade over {len(queries)} queries "
        f"({n_deferred} deferred) -> {args.out}"
    )
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    results = read_results(args.results)
    indexes = load_index_dir(_require(args, "index_dir"))
    if args.mock:
        mock = MockJudge()
        scorer = lambda question, sources, answer: mock.score(question, sources, answer)
    else:
        if not (args.endpoint and args.model):
            raise UsageError("live judging needs --endpoint and --model (or pass --mock)")
        client = JudgeClient(
            endpoint=args.endpoint, model=args.model, prompt_template=load_judge_prompt()
        )
        scorer = lambda question, sources, answer: judge_response(
            client, question, sources, answer
        )
    records: list[EvalRecord] = []
    for r in results:
        if not r.has_sources:
            scores = None
        else:
            source_texts = [indexes.chunk_texts[cid] for cid, _ in r.sources]
            # generation is external to this system: the top source text
            # stands in for the answer so scoring stays self-contained
            answer = source_texts[0]
            scores = scorer(r.query_text, source_texts, answer)
        records.append(
            EvalRecord(
                query_id=r.query_id,
                condition=r.condition,
                workflow=r.workflow,
                has_sources=r.has_sources,
                scores=scores,
                latency=r.latency_s,
            )
        )
    write_score_log(records, args.out)
    print(f"judged {len(records)} records -> {args.out}")
    return EXIT_OK


def _aggregate_json(report) -> dict:
    return {
        "n": report.n,
        "co": report.co,
        "cwa": report.cwa,
        "coverage": report.coverage,
        "mean_latency_s": report.mean_latency,
    }


def cmd_evaluate(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    if not records:
        raise ValueError("empty score log")
    out_dir = Path(_require(args, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    workflows = sorted({r.workflow for r in records})
    conditions = sorted({r.condition for r in records})
    by_workflow = {}
    by_workflow_condition = {}
    rows = []
    for wid in workflows:
        w_records = [r for r in records if r.workflow == wid]
        rep = aggregate(w_records)
        by_workflow[wid] = _aggregate_json(rep)
        rows.append((wid, "all", rep))
        for cond in conditions:
            c_records = [r for r in w_records if r.condition == cond]
            if not c_records:
                continue
            crep = aggregate(c_records)
            by_workflow_condition.setdefault(wid, {})[cond] = _aggregate_json(crep)
            rows.append((wid, cond, crep))
    report = {
        "format": "evaluate-report@1",
        "by_workflow": by_workflow,
        "by_workflow_condition": by_workflow_condition,
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, ensure_ascii=False, indent=2), encoding="utf-8"
    )
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["workflow", "condition", "n", "co", "cwa", "coverage", "mean_latency_s"])
        for wid, cond, rep in rows:
            writer.writerow(
                [
                    wid,
                    cond,
                    rep.n,
                    f"{rep.co:.6f}",
                    "" if rep.cwa is None else f"{rep.cwa:.6f}",
                    f"{rep.coverage:.6f}",
                    f"{rep.mean_latency:.6f}",
                ]
            )
    for wid in workflows:
        rep = by_workflow[wid]
        cwa = "-" if rep["cwa"] is None else f"{rep['cwa']:.3f}"
        print(
            f"{wid:12s} n={rep['n']:<5d} co={rep['co']:.3f} cwa={cwa} "
            f"coverage={rep['coverage']:.1%} latency={rep['mean_latency_s'] * 1000:.1f}ms"
        )
    print(f"report -> {out_dir / 'report.json'}, {out_dir / 'report.csv'}")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    labels = routing.build_oracle_labels(records, contrast_threshold=args.threshold)
    with open(args.out, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(
                json.dumps(
                    {
                        "query_id": lab.query_id,
                        "label": lab.label,
                        "best_co": lab.best_co,
                        "worst_co": lab.worst_co,
                        "contrast": lab.contrast,
                        "included": lab.included,
                    }
                )
                + "\n"
            )
    included = sum(1 for l in labels if l.included)
    print(f"{len(labels)} oracle labels ({included} high-contrast) -> {args.out}")
    return EXIT_OK


def _training_data(args: argparse.Namespace):
    records = read_score_log(_require(args, "scores"))
    queries = load_queries(_require(args, "queries"))
    labels = routing.build_oracle_labels(records, contrast_threshold=args.contrast_threshold)
    by_id = {l.query_id: l for l in labels}
    queries = [q for q in queries if q.query_id in by_id]
    return records, queries, by_id


def cmd_route_train(args: argparse.Namespace) -> int:
    if args.kind == "rules":
        router = routing.RuleRouter(routing.default_rules())
        routing.save_router(args.out, router)
        print(f"rule router -> {args.out}")
        return EXIT_OK

    seed = args.seed if args.seed is not None else 0
    records, queries, labels_by_id = _training_data(args)
    if args.kind == "linear":
        train = [q for q in queries if labels_by_id[q.query_id].included]
        if not train:
            raise ValueError("no high-contrast queries to train on")
        vocab, matrix = routing.featurize_char_ngrams([q.text for q in train])
        clf = routing.train_linear_classifier(
            matrix,
            [labels_by_id[q.query_id].label for q in train],
            l2=args.l2,
            seed=seed,
        )
        routing.save_router(args.out, routing.LinearRouter(vocab=vocab, model=clf))
        print(f"linear router trained on {len(train)} queries -> {args.out}")
        return EXIT_OK

    # ridge
    co = {(r.query_id, r.workflow): r.co for r in records if r.workflow in WORKFLOW_IDS}
    vocab, matrix = routing.featurize_char_ngrams([q.text for q in queries])
    co_by_workflow = {
        wid: np.array([co[(q.query_id, wid)] for q in queries]) for wid in WORKFLOW_IDS
    }
    router = routing.train_ridge_router(
        matrix,
        co_by_workflow,
        delta=args.delta,
        strata=[labels_by_id[q.query_id].label for q in queries],
        seed=seed,
    )
    routing.save_router(args.out, routing.RidgeQueryRouter(vocab=vocab, model=router))
    print(f"ridge router (delta={args.delta}) trained on {len(queries)} queries -> {args.out}")
    return EXIT_OK


def cmd_route_eval(args: argparse.Namespace) -> int:
    records = read_score_log(_require(args, "scores"))
    queries = load_queries(_require(args, "queries"))
    router = routing.load_router(args.model)
    if args.kind:
        kinds = {
            routing.RuleRouter: "rules",
            routing.LinearRouter: "linear",
            routing.RidgeQueryRouter: "ridge",
        }
        actual = kinds.get(type(router))
        if actual != args.kind:
            raise ValueError(f"model {args.model} is kind {actual!r}, not {args.kind!r}")
    cost_table = None
    if args.cost_table:
        cost_table = {
            k: float(v) for k, v in json.loads(Path(args.cost_table).read_text()).items()
        }
    report = routing.evaluate_router(router, queries, records, cost_table=cost_table)
    payload = {
        "routed_co": report.routed_co,
        "augmentation_free_rate": report.augmentation_free_rate,
        "oracle_gap_recovered": report.oracle_gap_recovered,
        "mean_cost": report.mean_cost,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    gap = "-" if report.oracle_gap_recovered is None else f"{report.oracle_gap_recovered:.1%}"
    print(
        f"routed_co={report.routed_co:.3f} "
        f"aug_free={report.augmentation_free_rate:.1%} oracle_gap_recovered={gap}"
    )
    return EXIT_OK


def cmd_decompose(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    if args.condition:
        records = [r for r in records if r.condition == args.condition]
    base_records = [r for r in records if r.workflow == args.base]
    aug_records = [r for r in records if r.workflow == args.aug]
    if not base_records or not aug_records:
        raise ValueError(f"no records for base={args.base!r} or aug={args.aug!r}")
    report = decompose_advantage(aggregate(base_records), aggregate(aug_records))
    payload = {
        "base": args.base,
        "aug": args.aug,
        "delta_co": report.delta_co,
        "via_coverage": report.via_coverage,
        "via_quality": report.via_quality,
        "residual": report.residual,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(
        f"delta_co={report.delta_co:+.3f} via_coverage={report.via_coverage:+.3f} "
        f"via_quality={report.via_quality:+.3f} residual={report.residual:+.3f}"
    )
    return EXIT_OK


def cmd_pareto(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    labels = sorted({r.workflow for r in records})
    points = []
    for label in labels:
        rep = aggregate([r for r in records if r.workflow == label])
        points.append(ParetoPoint(label=label, quality=rep.co, cost=rep.mean_latency))
    frontier = {p.label for p in pareto_frontier(points)}
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "quality", "cost", "on_frontier"])
        for p in sorted(points, key=lambda p: p.cost):
            writer.writerow(
                [p.label, f"{p.quality:.6f}", f"{p.cost:.6f}", str(p.label in frontier).lower()]
            )
    for p in sorted(points, key=lambda p: p.cost):
        marker = "*" if p.label in frontier else " "
        print(f"{marker} {p.label:12s} quality={p.quality:.3f} cost={p.cost:.6f}s")
    print(f"pareto -> {args.out}")
    return EXIT_OK


def cmd_r2(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    if args.workflow:
        records = [r for r in records if r.workflow == args.workflow]
    if not records:
        raise ValueError("no records after filtering")
    payload: dict = {}
    if args.sensitivity:
        thresholds = [int(t) for t in args.thresholds.split(",")]
        rows = r2_sensitivity(records, thresholds)
        payload["sensitivity"] = [
            {"threshold": r.threshold, "coverage_rate": r.coverage_rate, "r2": r.r2}
            for r in rows
        ]
        for r in rows:
            r2 = "-" if r.r2 is None else f"{r.r2:.4f}"
            print(f"threshold>={r.threshold}: coverage={r.coverage_rate:.1%} r2={r2}")
    else:
        value = r2_coverage(records)
        payload["r2_coverage"] = value
        print(f"r2_coverage={value:.4f}")
    if args.out and args.out.endswith(".csv") and args.sensitivity:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "coverage_rate", "r2"])
            for row in payload["sensitivity"]:
                writer.writerow(
                    [row["threshold"], f"{row['coverage_rate']:.6f}",
                     "" if row["r2"] is None else f"{row['r2']:.6f}"]
                )
    elif args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return EXIT_OK


def _paired_co(records: list[EvalRecord], a: str, b: str):
    a_by = {r.query_id: r for r in records if r.workflow == a}
    b_by = {r.query_id: r for r in records if r.workflow == b}
    if set(a_by) != set(b_by):
        raise ValueError(f"mismatched query sets between {a!r} and {b!r}")
    if not a_by:
        raise ValueError(f"no records for {a!r}/{b!r}")
    return a_by, b_by


def cmd_wilcoxon(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    a_by, b_by = _paired_co(records, args.a, args.b)
    pairs = [(a_by[qid].co, b_by[qid].co) for qid in sorted(a_by)]
    result = wilcoxon_signed_rank(pairs, sided=args.sided)
    payload = {
        "a": args.a,
        "b": args.b,
        "n_effective": result.n_effective,
        "w_statistic": result.w_statistic,
        "p_value": result.p_value,
        "sided": result.sided,
        "method": result.method,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(
        f"n_eff={result.n_effective} W={result.w_statistic} "
        f"p={result.p_value:.3g} ({result.method}, {result.sided})"
    )
    return EXIT_OK


def cmd_head2head(args: argparse.Namespace) -> int:
    records = read_score_log(args.scores)
    a_by, b_by = _paired_co(records, args.a, args.b)
    report = head_to_head(list(a_by.values()), list(b_by.values()))
    payload = {
        "a": args.a,
        "b": args.b,
        "n": report.n,
        "tie_rate": report.tie_rate,
        "a_win_rate": report.a_win_rate,
        "a_win_mean_margin": report.a_win_mean_margin,
        "b_win_rate": report.b_win_rate,
        "b_win_mean_margin": report.b_win_mean_margin,
        "net_flow": report.net_flow,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    a_m = "-" if report.a_win_mean_margin is None else f"{report.a_win_mean_margin:.3f}"
    b_m = "-" if report.b_win_mean_margin is None else f"{report.b_win_mean_margin:.3f}"
    print(
        f"tie={report.tie_rate:.1%} {args.a}_wins={report.a_win_rate:.1%} (mean {a_m}) "
        f"{args.b}_wins={report.b_win_rate:.1%} (mean {b_m}) net_flow={report.net_flow:+.1f}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    state = AppState()
    sequence = tuple(args.sequence.split(",")) if args.sequence else CascadeConfig().sequence
    min_docs = args.min_docs if args.min_docs is not None else 1
    state.cascade_config = CascadeConfig(
        sequence=sequence, min_docs=min_docs, workflow_config=_workflow_config(args)
    )
    server = create_server(state, host=args.host, port=args.port)
    state.indexes = load_index_dir(_require(args, "index_dir"))
    state.ready = True
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (corpus: {len(state.indexes.chunk_texts)} chunks)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="rag-cascade", description=__doc__.split("\n")[0])
    parser.add_argument(
        "--config",
        default=None,
        help="JSON run config supplying defaults for paths, parameters, and endpoints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk a corpus file")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--no-titles", action="store_true")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("index", help="build lexical and dense indexes")
    p.add_argument("--chunks")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dimension", type=int, default=None)
    p.add_argument("--embedder-endpoint", default=None)
    p.add_argument("--embedder-model", default=None)
    p.set_defaults(fn=cmd_index)

    def add_retrieval_flags(p):
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--rrf-k", dest="rrf_k", type=int, default=None)
        p.add_argument("--mock", action="store_true",
                       help="force the offline transformers, ignoring endpoints")
        p.add_argument("--expansion-endpoint", default=None)
        p.add_argument("--expansion-prompt-file", default=None)
        p.add_argument("--hyde-endpoint", default=None)
        p.add_argument("--hyde-prompt-file", default=None)
        p.add_argument("--llm-model", default=None)

    p = sub.add_parser("query", help="run one workflow over queries")
    p.add_argument("--index-dir")
    p.add_argument("--workflow", required=True, choices=WORKFLOW_IDS)
    p.add_argument("--text")
    p.add_argument("--queries")
    p.add_argument("--out")
    add_retrieval_flags(p)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("cascade", help="run the escalation cascade over queries")
    p.add_argument("--index-dir")
    p.add_argument("--text")
    p.add_argument("--queries")
    p.add_argument("--out", required=True)
    p.add_argument("--sequence", default=None, help="comma-separated workflow ids")
    p.add_argument("--min-docs", type=int, default=None)
    p.add_argument(
        "--baselines",
        action="store_true",
        help="also record every standalone workflow per query",
    )
    add_retrieval_flags(p)
    p.set_defaults(fn=cmd_cascade)

    p = sub.add_parser("judge", help="score retrieval results into a score log")
    p.add_argument("--index-dir")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mock", action="store_true", help="deterministic offline judge")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("evaluate", help="aggregate a score log per workflow/condition")
    p.add_argument("--scores", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("oracle", help="build per-query best-workflow labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=routing.DEFAULT_CONTRAST_THRESHOLD)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("route", help="train or evaluate pre-retrieval routers")
    route_sub = p.add_subparsers(dest="route_command", required=True)

    p_train = route_sub.add_parser("train")
    p_train.add_argument("--kind", required=True, choices=("rules", "linear", "ridge"))
    p_train.add_argument("--scores")
    p_train.add_argument("--queries")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--delta", type=float, default=0.75)
    p_train.add_argument("--l2", type=float, default=1e-4)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument(
        "--contrast-threshold", type=float, default=routing.DEFAULT_CONTRAST_THRESHOLD
    )
    p_train.set_defaults(fn=cmd_route_train)

    p_eval = route_sub.add_parser("eval")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--kind", choices=("rules", "linear", "ridge"), default=None)
    p_eval.add_argument("--scores")
    p_eval.add_argument("--queries")
    p_eval.add_argument("--cost-table")
    p_eval.add_argument("--out")
    p_eval.set_defaults(fn=cmd_route_eval)

    p = sub.add_parser("decompose", help="coverage/quality split of a CO advantage")
    p.add_argument("--scores", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--aug", required=True)
    p.add_argument("--condition")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("pareto", help="quality/cost frontier over strategies")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pareto)

    p = sub.add_parser("r2", help="variance explained by the success flag")
    p.add_argument("--scores", required=True)
    p.add_argument("--workflow")
    p.add_argument("--sensitivity", action="store_true")
    p.add_argument("--thresholds", default="1,2,3,4")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_r2)

    p = sub.add_parser("wilcoxon", help="paired signed-rank test between strategies")
    p.add_argument("--scores", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument(
        "--sided", default="one_sided_greater", choices=("one_sided_greater", "two_sided")
    )
    p.add_argument("--out")
    p.set_defaults(fn=cmd_wilcoxon)

    p = sub.add_parser("head2head", help="per-query outcome distribution")
    p.add_argument("--scores", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_head2head)

    p = sub.add_parser("serve", help="HTTP query endpoint over built indexes")
    p.add_argument("--index-dir")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--sequence", default=None)
    p.add_argument("--min-docs", type=int, default=None)
    add_retrieval_flags(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            apply_run_config(args, load_run_config(args.config))
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EndpointError, evaluation.JudgeParseError) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except (CorpusError, PersistError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
