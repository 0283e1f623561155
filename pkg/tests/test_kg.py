import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efoent.kg import (
    GraphError,
    GraphSplit,
    KnowledgeGraph,
    Vocab,
    build_splits,
    load_graph_dir,
    load_split,
    load_triples,
    random_graph,
    write_split,
)

from conftest import graph_from_names


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_triples_indexes_in_file_order(tmp_path):
    p = write(tmp_path / "g.tsv", "# comment\na\tr1\tb\nb\tr2\tc\n\na\tr1\tb\n")
    kg = load_triples(p)
    assert kg.entities.names == ["a", "b", "c"]
    assert kg.relations.names == ["r1", "r2"]
    assert kg.triples == ((0, 0, 1), (1, 1, 2))
    assert kg.stats_line() == "entities=3 relations=2 edges=2"


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("a\tr1\n", "g.tsv:1"),
        ("a\tr1\tb\nx\ty\n", "g.tsv:2"),
        ("a\t\tb\n", "g.tsv:1"),
        ("", "no triples"),
    ],
)
def test_load_triples_reports_bad_lines(tmp_path, text, fragment):
    p = write(tmp_path / "g.tsv", text)
    with pytest.raises(GraphError, match=fragment):
        load_triples(p)


def test_missing_file(tmp_path):
    with pytest.raises(GraphError, match="no such file"):
        load_triples(tmp_path / "nope.tsv")


def test_neighbors_and_membership():
    kg = graph_from_names([("a", "r1", "b"), ("a", "r1", "c"), ("d", "r2", "c")])
    a, b, c, d = (kg.entities.id(x) for x in "abcd")
    r1, r2 = kg.relations.id("r1"), kg.relations.id("r2")
    assert kg.neighbors(a, r1) == [b, c]
    assert kg.neighbors(c, r1, "backward") == [a]
    assert kg.neighbors(b, r2) == []
    assert (d, r2, c) in kg
    assert kg.contains((d, r2, c))
    assert not kg.contains((c, r2, d))
    assert kg.heads_of(r1) == {a}
    assert kg.tails_of(r1) == {b, c}
    assert kg.relations_between(a, c) == (r1,)
    assert kg.out_edges(a) == ((r1, b), (r1, c))
    assert kg.in_edges(c) == ((r1, a), (r2, d))


def test_range_errors():
    kg = graph_from_names([("a", "r1", "b")])
    with pytest.raises(GraphError):
        kg.neighbors(5, 0)
    with pytest.raises(GraphError):
        kg.neighbors(0, 3)
    with pytest.raises(GraphError):
        kg.contains((0, 0, 9))
    with pytest.raises(GraphError):
        kg.neighbor_set(0, 0, "sideways")
    with pytest.raises(GraphError):
        KnowledgeGraph([(0, 0, 7)], Vocab(["a"]), Vocab(["r"]))


def test_build_splits_nested_and_deterministic():
    kg = random_graph(40, 4, 300, seed=3)
    s1 = build_splits(kg, seed=5)
    s2 = build_splits(kg, seed=5)
    assert s1.test.triples == s2.test.triples
    tr, va, te = (set(g.triples) for g in (s1.train, s1.valid, s1.test))
    assert tr < va < te
    assert te == set(kg.triples)
    assert len(tr) == 240 and len(va) == 270
    assert build_splits(kg, seed=6).train.triples != s1.train.triples


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.0), (0.7, 0.2, 0.2), (1.0, 0.0), (-0.1, 0.6, 0.5)])
def test_build_splits_rejects_bad_ratios(ratios):
    with pytest.raises(GraphError):
        build_splits(random_graph(10, 2, 30), ratios)


def test_build_splits_needs_three_triples():
    with pytest.raises(GraphError):
        build_splits(graph_from_names([("a", "r", "b"), ("b", "r", "c")]))


def test_split_rejects_unnested_graphs():
    ent, rel = Vocab("abc"), Vocab(["r"])
    g1 = KnowledgeGraph([(0, 0, 1)], ent, rel)
    g2 = KnowledgeGraph([(1, 0, 2)], ent, rel)
    with pytest.raises(GraphError, match="nested"):
        GraphSplit(g1, g2, g2)
    with pytest.raises(GraphError, match="vocabulary"):
        GraphSplit(g1, KnowledgeGraph([(0, 0, 1)], Vocab("abc"), rel), g1)


def test_write_and_reload_split(tmp_path):
    splits = build_splits(random_graph(30, 3, 200, seed=1), seed=2)
    write_split(splits, tmp_path)
    again = load_graph_dir(tmp_path)
    names = lambda g: {(g.entities.name(h), g.relations.name(r), g.entities.name(t)) for h, r, t in g}
    for purpose in ("train", "valid", "test"):
        assert names(again.graph(purpose)) == names(splits.graph(purpose))
    assert again.test.checksum() != ""
    lines = sum(len((tmp_path / f"{p}.tsv").read_text().splitlines()) for p in ("train", "valid", "test"))
    assert lines == len(splits.test)


def test_load_split_disjoint_files(tmp_path):
    tr = write(tmp_path / "tr.tsv", "a\tr\tb\n")
    va = write(tmp_path / "va.tsv", "a\tr\tc\n")
    te = write(tmp_path / "te.tsv", "a\tr\td\n")
    s = load_split(tr, va, te)
    assert (len(s.train), len(s.valid), len(s.test)) == (1, 2, 3)
    assert s.graph("valid") is s.valid
    with pytest.raises(GraphError):
        s.graph("dev")


def test_checksum_depends_on_content():
    a = graph_from_names([("a", "r", "b")])
    b = graph_from_names([("a", "r", "c")])
    assert a.checksum() != b.checksum()
    assert a.checksum() == graph_from_names([("a", "r", "b")]).checksum()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 4), st.integers(0, 60), st.integers(0, 1000))
def test_indices_agree_with_triples(n_ent, n_rel, n_trip, seed):
    kg = random_graph(n_ent, n_rel, n_trip, seed)
    arr = kg.as_array()
    assert len(set(map(tuple, arr.tolist()))) == len(arr)
    for h, r, t in kg:
        assert t in kg.neighbor_set(h, r, "forward")
        assert h in kg.neighbor_set(t, r, "backward")
    total = sum(len(v) for v in kg.fwd_index.values())
    assert total == len(kg)
    assert np.all(arr[:, 0] < n_ent) and np.all(arr[:, 1] < n_rel)
