"""Command-line entry point: ingest, build-index, search, train, serve, eval, report.

Exit codes: 0 success, 1 validation error (bad input, flags or paths), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import EngineConfig
from .errors import GroupScopeError, ValidationError

logger = logging.getLogger("groupscope")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _path_flags(p: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="engine configuration (JSON)")
    common.add_argument("--seed", type=int, help="seed for graph levels, training and fault injection")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="groupscope", description="Scoped hybrid search and relevance evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate and normalize a corpus file")
    p.add_argument("--corpus", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="write the normalized corpus here")

    p = sub.add_parser("build-index", parents=[common], help="build the lexical and vector indexes")
    _path_flags(p, "corpus", "lexical_index", "vector_index", "synonyms")
    p.add_argument("--embed-endpoint", help="remote document tower (default EMBED_ENDPOINT)")

    p = sub.add_parser("search", parents=[common], help="print a ranked result page")
    _path_flags(p, "corpus", "lexical_index", "vector_index", "model", "stopwords")
    p.add_argument("--group", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--fusion", choices=("linear", "rrf"))
    p.add_argument("--retrieval", choices=("blended", "keyword", "ebr"))
    p.add_argument("--json", action="store_true", help="print the response as JSON")

    p = sub.add_parser("train", parents=[common], help="fit and save a ranking model")
    p.add_argument("--examples", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP search service")
    _path_flags(p, "corpus", "lexical_index", "vector_index", "model", "stopwords")
    p.add_argument("--bind", help="host:port (default BIND_ADDR or 127.0.0.1:8080)")

    p = sub.add_parser("eval", parents=[common], help="replay a query set and judge the results")
    _path_flags(p, "corpus", "lexical_index", "vector_index", "model", "stopwords", "queries",
                "prompt_template", "synonyms", "topics")
    p.add_argument("--judge", choices=("mock", "remote"))
    p.add_argument("--rounds", type=int)
    p.add_argument("--replays", type=int)
    p.add_argument("--k", type=int, action="append", help="evaluation depth; repeat for several")
    p.add_argument("--fusion", choices=("linear", "rrf"))
    p.add_argument("--retrieval", choices=("blended", "keyword", "ebr"))
    p.add_argument("--err-rate", type=float)
    p.add_argument("--skip-rate", type=float)
    p.add_argument("--out", required=True, metavar="PATH", help="report file")
    p.add_argument("--audit", metavar="PATH", help="per-pair audit log")

    p = sub.add_parser("report", parents=[common], help="render a saved report as a table")
    p.add_argument("report", metavar="REPORT")

    p = sub.add_parser("fixture", parents=[common], help="write a deterministic demo corpus and query set")
    p.add_argument("--kind", choices=("mixed", "synonym", "generated"), default="mixed")
    p.add_argument("--groups", type=int, default=6)
    p.add_argument("--posts-per-group", type=int, default=80)
    p.add_argument("--out-dir", required=True, metavar="DIR")
    return parser


def load_config(args) -> EngineConfig:
    cfg = EngineConfig.load(args.config) if args.config else EngineConfig()
    cfg = cfg.with_paths(**{k: v for k, v in vars(args).items() if k in cfg.paths.__dataclass_fields__})
    if args.seed is not None:
        cfg = replace(cfg, ann=replace(cfg.ann, seed=args.seed), eval=replace(cfg.eval, seed=args.seed))
    if getattr(args, "fusion", None):
        cfg = replace(cfg, fusion=cfg.fusion.with_overrides({"method": args.fusion}))
    if getattr(args, "retrieval", None):
        cfg = replace(cfg, retrieval=args.retrieval)
    return cfg


def _load_map(path: str | None) -> dict | None:
    if not path:
        return None
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{p} does not exist")
    return json.loads(p.read_text(encoding="utf-8"))


def cmd_ingest(args) -> int:
    from .corpus import dump_corpus, load_corpus

    if not Path(args.corpus).exists():
        raise ValidationError(f"corpus file {args.corpus} does not exist")
    corpus = load_corpus(args.corpus)
    if args.out:
        dump_corpus(corpus, args.out)
    print(f"{len(corpus.group_ids())} groups, {len(corpus.posts)} posts")
    return EXIT_OK


def _remote_embedder(endpoint: str | None, dim: int):
    from .embedding import RemoteEmbedder, RemoteEmbedderConfig

    cfg = RemoteEmbedderConfig.from_env(endpoint=endpoint, dim=dim)
    return RemoteEmbedder(cfg) if cfg.endpoint else None


def cmd_build_index(args) -> int:
    from .corpus import load_corpus
    from .engine import _embedder_config
    from .embedding import HashingEmbedder
    from .lexical import build_lexical_index, save_lexical_index
    from .vector_index import build_vector_index, save_vector_index

    cfg = load_config(args)
    p = cfg.paths
    for what, path in (("corpus", p.corpus), ("lexical index output", p.lexical_index),
                       ("vector index output", p.vector_index)):
        if not path:
            raise ValidationError(f"no {what} path given")
    if not Path(p.corpus).exists():
        raise ValidationError(f"corpus file {p.corpus} does not exist")
    corpus = load_corpus(p.corpus)
    embedder = _remote_embedder(args.embed_endpoint, cfg.embedder.dim) or HashingEmbedder(_embedder_config(cfg))
    save_lexical_index(build_lexical_index(corpus, cfg.bm25), p.lexical_index)
    vec = build_vector_index(corpus, embedder, cfg.ann, workers=os.cpu_count() or 1)
    save_vector_index(vec, p.vector_index)
    kinds = sorted(part.kind for part in vec.partitions.values())
    print(f"indexed {len(corpus.posts)} posts in {len(corpus.group_ids())} groups "
          f"({kinds.count('graph')} graph, {kinds.count('flat')} flat partitions)")
    return EXIT_OK


def _engine(cfg: EngineConfig):
    from .engine import Engine

    embedder = _remote_embedder(None, cfg.embedder.dim)
    return Engine.from_config(cfg, embedder=embedder)


def cmd_search(args) -> int:
    cfg = load_config(args)
    result = _engine(cfg).search(args.group, args.query, args.k)
    if args.json:
        print(json.dumps(result.to_dict(), sort_keys=True))
        return EXIT_OK
    for rank, r in enumerate(result.results, start=1):
        src = ("K" if r.from_keyword else "-") + ("E" if r.from_ebr else "-")
        print(f"{rank:>3}  {r.post_id}  {r.score:.6f}  {src}  {r.snippet}")
    if result.degraded:
        print(f"warning: degraded result ({'; '.join(result.failures)})", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    from .ranker import load_training_examples, save_model, train

    if not Path(args.examples).exists():
        raise ValidationError(f"training file {args.examples} does not exist")
    cfg = load_config(args)
    examples = load_training_examples(args.examples)
    model = train(examples, lr=args.lr, epochs=args.epochs, l2=args.l2,
                  seed=args.seed if args.seed is not None else 0, task_weights=cfg.task_weights)
    save_model(model, args.out)
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"trained on {len(examples)} examples -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import parse_bind, serve

    cfg = load_config(args)
    parse_bind(args.bind)  # validate before loading anything
    serve(cfg, args.bind)
    return EXIT_OK


def make_judge(cfg: EngineConfig, judge: str):
    from .bvt import MockJudge, RemoteJudge
    from .textproc import load_stopwords

    if judge == "remote":
        return RemoteJudge()
    stops = load_stopwords(cfg.paths.stopwords) if cfg.paths.stopwords else None
    return MockJudge(_load_map(cfg.paths.synonyms), _load_map(cfg.paths.topics), stops,
                     cfg.eval.err_rate, cfg.eval.skip_rate, cfg.eval.seed)


def cmd_eval(args) -> int:
    from .bvt import PromptTemplate, run_bvt
    from .corpus import load_queries

    cfg = load_config(args)
    overrides = {k: v for k, v in (("judge", args.judge), ("rounds", args.rounds), ("replays", args.replays),
                                   ("err_rate", args.err_rate), ("skip_rate", args.skip_rate)) if v is not None}
    if args.k:
        overrides["ks"] = tuple(args.k)
    try:
        cfg = replace(cfg, eval=replace(cfg.eval, **overrides))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if not cfg.paths.queries or not Path(cfg.paths.queries).exists():
        raise ValidationError(f"query file {cfg.paths.queries} does not exist")
    queries = load_queries(cfg.paths.queries)
    template = PromptTemplate.load(cfg.paths.prompt_template)
    judge = make_judge(cfg, cfg.eval.judge)
    report = run_bvt(_engine(cfg), queries, judge, cfg.eval, template, args.out, args.audit)
    from .bvt import render_table

    print(render_table(report), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    from .bvt import EvalReport, render_table

    print(render_table(EvalReport.load(args.report)), end="")
    return EXIT_OK


def cmd_fixture(args) -> int:
    from . import fixtures
    from .corpus import dump_corpus, dump_queries

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 5
    if args.kind == "mixed":
        fx = fixtures.mixed_fixture(seed, args.groups, args.posts_per_group)
        corpus, queries = fx.corpus, fx.queries
    elif args.kind == "synonym":
        fx = fixtures.synonym_fixture(seed)
        corpus, queries = fx.corpus, fx.queries
    else:
        corpus, queries = fixtures.generate_fixture_corpus(seed, args.groups, args.posts_per_group), []
    dump_corpus(corpus, out / "corpus.jsonl")
    dump_queries(queries, out / "queries.jsonl")
    (out / "synonyms.json").write_text(json.dumps(fixtures.synonym_table(), indent=1, sort_keys=True) + "\n")
    (out / "topics.json").write_text(json.dumps(fixtures.topic_map(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(corpus.posts)} posts and {len(queries)} queries to {out}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "build-index": cmd_build_index, "search": cmd_search, "train": cmd_train,
            "serve": cmd_serve, "eval": cmd_eval, "report": cmd_report, "fixture": cmd_fixture}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GroupScopeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
