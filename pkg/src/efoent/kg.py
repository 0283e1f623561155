"""Triple store with adjacency indices and nested train/valid/test splits."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed triple files and invalid graph operations."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bidirectional name <-> id map, ids assigned in insertion order."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise GraphError(f"unknown symbol {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __contains__(self, name: object) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)


class KnowledgeGraph:
    """Immutable set of (head, relation, tail) id triples.

    Parameters
    ----------
    triples : sequence of (h, r, t)
        Integer triples. Duplicates are dropped, first occurrence wins the
        position in :attr:`triples`.
    entities, relations : Vocab
        Vocabularies the ids index into. Shared between the graphs of a split.
    """

    def __init__(self, triples: Iterable[Sequence[int]], entities: Vocab, relations: Vocab):
        self.entities = entities
        self.relations = relations
        n_ent, n_rel = len(entities), len(relations)

        seen: dict[Triple, None] = {}
        for h, r, t in triples:
            h, r, t = int(h), int(r), int(t)
            if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
                raise GraphError(f"triple ({h}, {r}, {t}) out of vocabulary range")
            seen.setdefault(Triple(h, r, t), None)
        self._order = tuple(seen)
        self._set = frozenset(self._order)

        fwd: dict[tuple[int, int], set[int]] = {}
        bwd: dict[tuple[int, int], set[int]] = {}
        out_edges: dict[int, list[tuple[int, int]]] = {}
        in_edges: dict[int, list[tuple[int, int]]] = {}
        between: dict[tuple[int, int], list[int]] = {}
        for h, r, t in self._order:
            fwd.setdefault((h, r), set()).add(t)
            bwd.setdefault((t, r), set()).add(h)
            out_edges.setdefault(h, []).append((r, t))
            in_edges.setdefault(t, []).append((r, h))
            between.setdefault((h, t), []).append(r)
        self.fwd_index = {k: frozenset(v) for k, v in fwd.items()}
        self.bwd_index = {k: frozenset(v) for k, v in bwd.items()}
        self._out = {k: tuple(sorted(v)) for k, v in out_edges.items()}
        self._in = {k: tuple(sorted(v)) for k, v in in_edges.items()}
        self._between = {k: tuple(sorted(v)) for k, v in between.items()}

        heads: dict[int, set[int]] = {}
        tails: dict[int, set[int]] = {}
        for h, r, t in self._order:
            heads.setdefault(r, set()).add(h)
            tails.setdefault(r, set()).add(t)
        self._heads = {r: frozenset(v) for r, v in heads.items()}
        self._tails = {r: frozenset(v) for r, v in tails.items()}

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def triples(self) -> tuple[Triple, ...]:
        """Triples in first-appearance order."""
        return self._order

    def __len__(self) -> int:
        return len(self._order)

    def __iter__(self):
        return iter(self._order)

    def as_array(self) -> np.ndarray:
        return np.asarray(self._order, dtype=np.int64).reshape(-1, 3)

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < len(self.entities):
            raise GraphError(f"entity id {e} out of range [0, {len(self.entities)})")

    def _check_relation(self, r: int) -> None:
        if not 0 <= r < len(self.relations):
            raise GraphError(f"relation id {r} out of range [0, {len(self.relations)})")

    def contains(self, triple: Sequence[int]) -> bool:
        h, r, t = triple
        self._check_entity(h)
        self._check_entity(t)
        self._check_relation(r)
        return (h, r, t) in self._set

    def __contains__(self, triple: object) -> bool:
        return triple in self._set

    def neighbors(self, anchor: int, relation: int, direction: str = "forward") -> list[int]:
        """Sorted one-hop neighbours of ``anchor`` along ``relation``."""
        self._check_entity(anchor)
        self._check_relation(relation)
        return sorted(self.neighbor_set(anchor, relation, direction))

    def neighbor_set(self, anchor: int, relation: int, direction: str = "forward") -> frozenset[int]:
        # unchecked fast path used by the evaluators
        if direction == "forward":
            return self.fwd_index.get((anchor, relation), frozenset())
        if direction == "backward":
            return self.bwd_index.get((anchor, relation), frozenset())
        raise GraphError(f"direction must be 'forward' or 'backward', got {direction!r}")

    def heads_of(self, relation: int) -> frozenset[int]:
        return self._heads.get(relation, frozenset())

    def tails_of(self, relation: int) -> frozenset[int]:
        return self._tails.get(relation, frozenset())

    def out_edges(self, head: int) -> tuple[tuple[int, int], ...]:
        """All (relation, tail) pairs leaving ``head``."""
        return self._out.get(head, ())

    def in_edges(self, tail: int) -> tuple[tuple[int, int], ...]:
        """All (relation, head) pairs entering ``tail``."""
        return self._in.get(tail, ())

    def relations_between(self, head: int, tail: int) -> tuple[int, ...]:
        return self._between.get((head, tail), ())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for h, r, t in self._order:
            digest.update(
                f"{self.entities.name(h)}\t{self.relations.name(r)}\t{self.entities.name(t)}\n".encode()
            )
        return digest.hexdigest()[:16]

    def stats_line(self) -> str:
        return f"entities={len(self.entities)} relations={len(self.relations)} edges={len(self)}"


@dataclass(frozen=True)
class GraphSplit:
    """Nested graphs ``train <= valid <= test`` over one shared vocabulary."""

    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph
    source: str = "build_splits"

    def __post_init__(self):
        if not (self.train.entities is self.valid.entities is self.test.entities):
            raise GraphError("split graphs must share one entity vocabulary")
        if not (self.train.relations is self.valid.relations is self.test.relations):
            raise GraphError("split graphs must share one relation vocabulary")
        train, valid, test = (set(g.triples) for g in (self.train, self.valid, self.test))
        if not (train <= valid <= test):
            raise GraphError("split graphs are not nested (train <= valid <= test)")

    @property
    def entities(self) -> Vocab:
        return self.test.entities

    @property
    def relations(self) -> Vocab:
        return self.test.relations

    def graph(self, purpose: str) -> KnowledgeGraph:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[purpose]
        except KeyError:
            raise GraphError(f"unknown split {purpose!r}") from None


def _read_name_triples(path: Path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.exists():
        raise GraphError(f"{path}: no such file")
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(f.strip() for f in fields):
                raise GraphError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            rows.append(tuple(f.strip() for f in fields))
    return rows


def _index(rows, entities: Vocab, relations: Vocab) -> list[tuple[int, int, int]]:
    return [(entities.add(h), relations.add(r), entities.add(t)) for h, r, t in rows]


def load_triples(path) -> KnowledgeGraph:
    """Read a tab-separated ``head<TAB>relation<TAB>tail`` file.

    Lines starting with ``#`` are comments. Vocabulary ids follow first
    appearance in file order; repeated triples are kept once.
    """
    rows = _read_name_triples(path)
    if not rows:
        raise GraphError(f"{path}: no triples")
    entities, relations = Vocab(), Vocab()
    return KnowledgeGraph(_index(rows, entities, relations), entities, relations)


def load_split(train_path, valid_path, test_path) -> GraphSplit:
    """Load a pre-split dataset given as three files of disjoint edges.

    The valid graph is train + valid edges and the test graph holds all edges,
    matching the usual FB15k/NELL release layout.
    """
    entities, relations = Vocab(), Vocab()
    parts = []
    for p in (train_path, valid_path, test_path):
        rows = _read_name_triples(p)
        parts.append(_index(rows, entities, relations))
    if not parts[0]:
        raise GraphError(f"{train_path}: no triples")
    train = KnowledgeGraph(parts[0], entities, relations)
    valid = KnowledgeGraph(parts[0] + parts[1], entities, relations)
    test = KnowledgeGraph(parts[0] + parts[1] + parts[2], entities, relations)
    return GraphSplit(train, valid, test, source="files")


def build_splits(kg: KnowledgeGraph, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> GraphSplit:
    """Shuffle ``kg`` by ``seed`` and cut it into nested train/valid/test graphs."""
    ratios = tuple(float(x) for x in ratios)
    if len(ratios) != 3:
        raise GraphError("ratios must have three entries")
    if any(x <= 0 for x in ratios):
        raise GraphError(f"every split ratio must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise GraphError(f"ratios must sum to 1, got {sum(ratios)!r}")
    triples = kg.as_array()
    n = len(triples)
    if n < 3:
        raise GraphError("need at least 3 triples to split")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [tuple(int(v) for v in triples[i]) for i in order]
    n_train = max(1, int(round(ratios[0] * n)))
    n_valid = min(n - 1, max(n_train + 1, int(round((ratios[0] + ratios[1]) * n))))
    train = KnowledgeGraph(shuffled[:n_train], kg.entities, kg.relations)
    valid = KnowledgeGraph(shuffled[:n_valid], kg.entities, kg.relations)
    test = KnowledgeGraph(shuffled, kg.entities, kg.relations)
    return GraphSplit(train, valid, test)


def write_split(splits: GraphSplit, out_dir) -> None:
    """Write a split as three files of disjoint edges (readable by :func:`load_split`)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ent, rel = splits.entities, splits.relations
    prev: set = set()
    for name, g in (("train", splits.train), ("valid", splits.valid), ("test", splits.test)):
        with (out / f"{name}.tsv").open("w", encoding="utf-8") as fh:
            for h, r, t in g.triples:
                if (h, r, t) in prev:
                    continue
                fh.write(f"{ent.name(h)}\t{rel.name(r)}\t{ent.name(t)}\n")
        prev = set(g.triples)


def load_graph_dir(path) -> GraphSplit:
    path = Path(path)
    return load_split(path / "train.tsv", path / "valid.tsv", path / "test.tsv")


def random_graph(n_entities: int, n_relations: int, n_triples: int, seed: int = 0) -> KnowledgeGraph:
    """Uniform random graph with names ``ent<k>`` / ``rel<k>``; used for desk-scale work."""
    rng = np.random.default_rng(seed)
    entities = Vocab(f"ent{i}" for i in range(n_entities))
    relations = Vocab(f"rel{i}" for i in range(n_relations))
    limit = n_entities * n_entities * n_relations
    n_triples = min(n_triples, limit)
    picked: dict[tuple[int, int, int], None] = {}
    while len(picked) < n_triples:
        h, t = rng.integers(n_entities, size=2)
        r = rng.integers(n_relations)
        picked.setdefault((int(h), int(r), int(t)), None)
    return KnowledgeGraph(picked, entities, relations)
