"""Compare the compiled and pure-Python graph kernels.

Builds one graph partition per backend over the same vectors, checks the two
graphs are identical, then times queries and reports recall@10 against exact
search for a few ef_search values.

    python benchmarks/bench_kernels.py --n 5000 --queries 200
    python benchmarks/bench_kernels.py --data isotropic
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from groupscope import fixtures, kernels
from groupscope.embedding import EmbedderConfig, HashingEmbedder
from groupscope.textproc import preprocess_query
from groupscope.vector_index import AnnParams, build_from_vectors, exact_search, ann_search, recall_at_k


def fixture_vectors(n: int, n_queries: int, seed: int):
    emb = HashingEmbedder(EmbedderConfig(synonym_table=fixtures.synonym_table()))
    docs = fixtures.generate_fixture_corpus(seed, 1, n).posts.values()
    held = fixtures.generate_fixture_corpus(seed + 1, 1, n_queries).posts.values()
    X = emb.embed_docs([p.text for p in docs])
    Q = np.vstack([emb.embed_query(preprocess_query(p.text)) for p in held])
    return X, Q


def isotropic_vectors(n: int, n_queries: int, seed: int, dim: int = 64):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    Q = rng.standard_normal((n_queries, dim))
    return X / np.linalg.norm(X, axis=1, keepdims=True), Q / np.linalg.norm(Q, axis=1, keepdims=True)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--data", choices=("fixture", "isotropic"), default="fixture")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--backends", nargs="+", default=kernels.available_backends())
    args = ap.parse_args()

    X, Q = (fixture_vectors if args.data == "fixture" else isotropic_vectors)(args.n, args.queries, args.seed)
    pids = tuple(f"p{i:07d}" for i in range(len(X)))
    params = AnnParams(flat_threshold=0)
    print(f"{args.data} data: n={len(X)} dim={X.shape[1]} queries={len(Q)} "
          f"M={params.M} ef_construction={params.ef_construction}")

    graphs = {}
    for backend in args.backends:
        t0 = time.perf_counter()
        index = build_from_vectors({"g": (pids, X)}, params, backend=backend)
        build_s = time.perf_counter() - t0
        graphs[backend] = index
        exact = [exact_search(index, "g", q, 10) for q in Q]
        for ef in (32, 64, 128):
            t0 = time.perf_counter()
            hits = [ann_search(index, "g", q, 10, ef) for q in Q]
            per_q = (time.perf_counter() - t0) / len(Q) * 1e6
            rec = np.mean([recall_at_k(h, e, 10) for h, e in zip(hits, exact)])
            print(f"  {backend:<7} build {build_s:8.2f}s  ef={ef:<4} {per_q:9.1f} us/query  recall@10 {rec:.3f}")

    if len(graphs) == 2:
        a, b = (graphs[k].partitions["g"] for k in ("cython", "python"))
        same = np.array_equal(a.links, b.links) and np.array_equal(a.counts, b.counts) and a.entry == b.entry
        print(f"graphs identical across backends: {same}")


if __name__ == "__main__":
    main()
