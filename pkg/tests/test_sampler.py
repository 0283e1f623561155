import json

import numpy as np
import pytest

from efoent.kg import KnowledgeGraph, Vocab, build_splits, random_graph
from efoent.oracle import answer_set, answer_split
from efoent.sampler import (
    BENCHMARK_EVAL_COUNTS,
    Profile,
    QuerySample,
    SamplingError,
    build_dataset,
    enumerate_1p,
    read_queries,
    sample_query,
    sample_rng,
)
from efoent.templates import QUERY_TYPES, SEEN_TYPES, UNSEEN_TYPES

from conftest import graph_from_names, nested_split


@pytest.fixture(scope="module")
def splits():
    return build_splits(random_graph(100, 6, 900, seed=4), seed=4)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    big = build_splits(random_graph(500, 10, 5000, seed=1), seed=1)
    out = tmp_path_factory.mktemp("desk")
    return big, out, build_dataset(big, "desk-scale", out, seed=0)


def test_1p_comes_from_an_edge(splits):
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = sample_query(splits, "1p", "train", rng)
        atom = s.ast.atoms[0]
        h, r = atom.head.symbol, atom.relation
        tails = splits.train.neighbor_set(h, r, "forward")
        assert tails and set(tails) <= set(s.a_id)


@pytest.mark.parametrize("purpose", ["valid", "test"])
def test_eval_samples_have_ood_answers(splits, purpose):
    rng = np.random.default_rng(1)
    for name in QUERY_TYPES:
        s = sample_query(splits, name, purpose, rng)
        assert s.a_ood
        assert s.split == answer_split(splits, s.ast, purpose)


def test_2in_samples_match_oracle(splits):
    rng = np.random.default_rng(2)
    for _ in range(1000):
        s = sample_query(splits, "2in", "train", rng)
        assert s.a_id
        assert s.split == answer_split(splits, s.ast, "train")


def test_train_samples_match_oracle_all_seen_types(splits):
    for name in SEEN_TYPES:
        for i in range(5):
            s = sample_query(splits, name, "train", sample_rng(0, "train", name, i))
            assert s.type_name == name
            assert list(s.a_id) == answer_set(splits.train, s.ast)


def test_sampling_gives_up():
    s = nested_split([("a", "r", "b")], [("a", "r", "c")], [("a", "r", "d")])
    with pytest.raises(SamplingError, match="3c"):
        sample_query(s, "3c", "test", np.random.default_rng(0), max_attempts=20)


def test_unknown_purpose(splits):
    with pytest.raises(ValueError):
        sample_query(splits, "1p", "dev", np.random.default_rng(0))


def test_enumerate_1p_two_triples():
    kg = graph_from_names([("a", "r1", "b"), ("a", "r1", "c")])
    out = enumerate_1p(kg)
    assert len(out) == 1
    assert out[0].a_id == (kg.entities.id("b"), kg.entities.id("c"))


def test_enumerate_1p_empty_graph():
    assert enumerate_1p(KnowledgeGraph([], Vocab("ab"), Vocab(["r"]))) == []


def test_enumerate_1p_counts_pairs(splits):
    out = enumerate_1p(splits)
    assert len(out) == len(splits.train.fwd_index)
    assert len({s.query for s in out}) == len(out)


def test_record_round_trip(splits):
    s = sample_query(splits, "pni", "test", np.random.default_rng(3))
    again = QuerySample.from_record(json.loads(json.dumps(s.to_record())))
    assert again == s


def test_profiles():
    d = Profile.desk()
    assert set(d.counts["train"]) == set(SEEN_TYPES)
    assert all(n == 200 for n in d.counts["train"].values())
    assert len(d.counts["test"]) == 55 and all(n == 50 for n in d.counts["test"].values())
    p = Profile.paper("FB15k-237")
    assert p.counts["train"]["1p"] == "all" and p.counts["train"]["2p"] == "2x1p"
    assert p.counts["valid"]["3c"] == BENCHMARK_EVAL_COUNTS["FB15k-237"] == 5000
    assert Profile.paper("FB15k").counts["test"]["1p"] == 8000
    assert Profile.paper("NELL995").counts["test"]["1p"] == 4000


@pytest.mark.parametrize(
    "counts",
    [
        {"train": {UNSEEN_TYPES[0]: 5}},
        {"dev": {"1p": 5}},
        {"train": {"2p": "all"}},
        {"train": {"1p": -1}},
        {"train": {"zz": 1}},
    ],
)
def test_bad_custom_profiles(counts):
    with pytest.raises((ValueError, KeyError)):
        Profile.custom(counts)


def test_full_scale_profile_on_small_graph(tmp_path):
    s = build_splits(random_graph(30, 3, 200, seed=2), seed=2)
    profile = Profile.custom({"train": {"1p": "all", "2p": "2x1p"}})
    m = build_dataset(s, profile, tmp_path, seed=0)
    n1 = len(s.train.fwd_index)
    assert m["counts"]["train"] == {"1p": n1, "2p": 2 * n1}


def test_desk_dataset(desk):
    big, out, manifest = desk
    train = read_queries(out / "train.jsonl")
    assert {s.type_name for s in train} == set(SEEN_TYPES)
    assert not {s.type_name for s in train} & set(UNSEEN_TYPES)
    assert manifest["counts"]["train"] == {t: 200 for t in SEEN_TYPES}
    for purpose in ("valid", "test"):
        assert manifest["counts"][purpose] == {t: 50 for t in QUERY_TYPES}
    assert manifest["eval_count_interpretation"] == "per query type"
    assert manifest["graph_checksum"] == big.test.checksum()


def test_desk_dataset_recomputes(desk):
    big, out, _ = desk
    for purpose in ("train", "valid", "test"):
        for s in read_queries(out / f"{purpose}.jsonl"):
            assert s.split == answer_split(big, s.ast, purpose)


def test_dataset_is_deterministic(tmp_path, splits):
    profile = Profile.custom({"train": {"2p": 20, "2in": 20}, "test": {"3c": 10, "pni": 10, "2u": 10}})
    build_dataset(splits, profile, tmp_path / "a", seed=7)
    build_dataset(splits, profile, tmp_path / "b", seed=7, workers=2)
    build_dataset(splits, profile, tmp_path / "c", seed=8)
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "test.jsonl").read_bytes() != (tmp_path / "c" / "test.jsonl").read_bytes()


def test_sample_rng_independent_of_order():
    a = sample_rng(3, "test", "2p", 5).integers(1 << 30)
    sample_rng(3, "test", "2p", 4).integers(1 << 30)
    assert sample_rng(3, "test", "2p", 5).integers(1 << 30) == a
    assert sample_rng(3, "valid", "2p", 5).integers(1 << 30) != a
