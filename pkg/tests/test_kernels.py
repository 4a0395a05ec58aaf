import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from groupscope import kernels
from groupscope.vector_index import assign_levels

needs_ext = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled kernel not built")


def _data(n=800, d=16, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, d))
    return np.ascontiguousarray(v / np.linalg.norm(v, axis=1, keepdims=True))


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    assert kernels.get_backend("python").__name__.endswith("_hnsw_py")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@needs_ext
def test_backends_build_identical_graphs():
    vecs = _data()
    levels = assign_levels(len(vecs), 8, 0, "g")
    a = kernels.get_backend("python").build(vecs, levels, 8, 16, 50)
    b = kernels.get_backend("cython").build(vecs, levels, 8, 16, 50)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    assert a[2] == b[2]


@needs_ext
def test_backends_search_identically():
    vecs = _data(seed=1)
    levels = assign_levels(len(vecs), 8, 0, "g")
    links, counts, entry = kernels.get_backend("cython").build(vecs, levels, 8, 16, 50)
    py = kernels.get_backend("python").GraphSearcher(vecs, links, counts, entry)
    cy = kernels.get_backend("cython").GraphSearcher(vecs, links, counts, entry)
    rng = np.random.default_rng(7)
    for _ in range(25):
        q = rng.normal(size=16)
        q /= np.linalg.norm(q)
        ids_p, sims_p = py.search(q, 40)
        ids_c, sims_c = cy.search(q, 40)
        assert np.array_equal(ids_p, ids_c)
        assert np.allclose(sims_p, sims_c, atol=1e-12)


def test_env_var_forces_fallback():
    code = "from groupscope import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "GROUPSCOPE_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_prefers_compiled():
    mod = importlib.reload(kernels)
    expected = "cython" if "cython" in mod.available_backends() else "python"
    if os.environ.get("GROUPSCOPE_PURE_PYTHON"):
        expected = "python"
    assert mod.BACKEND == expected


def test_search_on_single_node_graph():
    vecs = _data(n=1)
    levels = np.zeros(1, dtype=np.int32)
    for name in kernels.available_backends():
        k = kernels.get_backend(name)
        links, counts, entry = k.build(vecs, levels, 4, 8, 10)
        ids, sims = k.GraphSearcher(vecs, links, counts, entry).search(vecs[0], 5)
        assert ids.tolist() == [0]


def test_fallback_dots_sum_left_to_right():
    from groupscope._hnsw_py import _dots

    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 64)) * 10.0 ** rng.integers(-8, 8, size=(20, 64))
    q = rng.normal(size=64)
    for row, got in zip(X, _dots(X, q)):
        acc = 0.0
        for a, b in zip(row.tolist(), q.tolist()):
            acc += a * b
        assert got == acc  # bitwise, not approx


@needs_ext
def test_backends_agree_on_fixture_vectors(synonym_embedder):
    from groupscope import fixtures

    corpus = fixtures.generate_fixture_corpus(21, 1, 900)
    vecs = synonym_embedder.embed_docs([p.text for p in corpus.posts.values()])
    levels = assign_levels(len(vecs), 8, 0, "g")
    a = kernels.get_backend("python").build(vecs, levels, 8, 16, 40)
    b = kernels.get_backend("cython").build(vecs, levels, 8, 16, 40)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]
    q = vecs[5] + vecs[17]
    q /= np.linalg.norm(q)
    ids_a, sims_a = kernels.get_backend("python").GraphSearcher(vecs, *a).search(q, 30)
    ids_b, sims_b = kernels.get_backend("cython").GraphSearcher(vecs, *b).search(q, 30)
    assert np.array_equal(ids_a, ids_b) and np.array_equal(sims_a, sims_b)
