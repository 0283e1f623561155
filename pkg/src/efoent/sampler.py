"""Grounded query datasets with in- and out-of-distribution answers.

Queries are grounded answer-first: an answer entity is drawn, bound to ``f``
and the template's atoms are walked backwards along existing edges, binding
existentials, constants and relations as they are reached. The finished
query is then checked against the exact oracle and rejected if its answers
do not suit the purpose it was drawn for.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .kg import GraphSplit, KnowledgeGraph
from .oracle import AnswerSplit, answer_split
from .syntax import FREE, TOKENIZATION_RULE, Atom, Const, QueryAst, ground, parse_efo, serialize_efo
from .templates import QUERY_TYPES, SEEN_TYPES, QueryType, get_type

PURPOSES = ("train", "valid", "test")
NEGATION_RETRIES = 32
SYNTAX_VERSION = TOKENIZATION_RULE

# per-type eval counts by dataset name for the paper-scale profile
BENCHMARK_EVAL_COUNTS = {"FB15k": 8000, "FB15k-237": 5000, "NELL995": 4000}


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuerySample:
    type_name: str
    query: str
    split: AnswerSplit
    provenance: Mapping = field(default_factory=dict, compare=False)

    @property
    def a_id(self) -> tuple[int, ...]:
        return self.split.a_id

    @property
    def a_ood(self) -> tuple[int, ...]:
        return self.split.a_ood

    @property
    def ast(self) -> QueryAst:
        return parse_efo(self.query)

    def to_record(self) -> dict:
        return {
            "type_name": self.type_name,
            "query": self.query,
            "a_id": list(self.split.a_id),
            "a_ood": list(self.split.a_ood),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "QuerySample":
        return cls(rec["type_name"], rec["query"], AnswerSplit(tuple(rec["a_id"]), tuple(rec["a_ood"])))


def sample_rng(seed: int, purpose: str, type_name: str, index: int) -> np.random.Generator:
    """Generator for one (purpose, type, index) slot, independent of run order."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, PURPOSES.index(purpose), get_type(type_name).type_id, index])
    )


# ------------------------------------------------------------- grounding ---


class _Walker:
    """Binds one template against a graph, starting from a chosen answer."""

    def __init__(self, kg: KnowledgeGraph, template: QueryAst, rng: np.random.Generator):
        self.kg = kg
        self.rng = rng
        self.atoms = list(template.atoms)
        self.binding: dict[str, int] = {}  # placeholder -> id
        self.values: dict = {}  # Var/FREE -> entity

    def value(self, term):
        if isinstance(term, Const):
            return self.binding.get(term.symbol)
        return self.values.get(term)

    def assign(self, term, entity: int) -> None:
        if isinstance(term, Const):
            self.binding[term.symbol] = entity
        else:
            self.values[term] = entity

    def allowed_relations(self, atom: Atom):
        rel = self.binding.get(atom.relation)
        return None if rel is None else {rel}

    def _pick(self, items):
        return items[int(self.rng.integers(len(items)))]

    def _fits(self, term, entity: int) -> bool:
        # other positive atoms linking term to something already bound must stay satisfiable
        for a in self.atoms:
            if a.negated or a in self._done:
                continue
            if a.head == term and a.tail != term:
                other, forward = self.value(a.tail), True
            elif a.tail == term and a.head != term:
                other, forward = self.value(a.head), False
            else:
                continue
            if other is None:
                continue
            h, t = (entity, other) if forward else (other, entity)
            rels = self.kg.relations_between(h, t)
            allowed = self.allowed_relations(a)
            if not rels or (allowed is not None and not allowed & set(rels)):
                return False
        return True

    def _ground_positive(self, atom: Atom) -> bool:
        h, t = self.value(atom.head), self.value(atom.tail)
        allowed = self.allowed_relations(atom)
        if h is not None and t is not None:
            rels = [r for r in self.kg.relations_between(h, t) if allowed is None or r in allowed]
            if not rels:
                return False
            self.binding.setdefault(atom.relation, self._pick(rels))
            return True
        if t is not None:
            edges, free_term = self.kg.in_edges(t), atom.head
        else:
            edges, free_term = self.kg.out_edges(h), atom.tail
        edges = [(r, x) for r, x in edges if allowed is None or r in allowed]
        self._done.add(atom)
        edges = [(r, x) for r, x in edges if self._fits(free_term, x)]
        self._done.discard(atom)
        if not edges:
            return False
        r, x = self._pick(edges)
        self.binding.setdefault(atom.relation, r)
        self.assign(free_term, x)
        return True

    def _ground_negative(self, atom: Atom) -> bool:
        n_ent = self.kg.num_entities
        triples = self.kg.triples
        for _ in range(NEGATION_RETRIES):
            rel = self.binding.get(atom.relation)
            h, t = self.value(atom.head), self.value(atom.tail)
            # borrow an existing edge so the excluded set is not trivially empty
            eh, er, et = triples[int(self.rng.integers(len(triples)))]
            if rel is None:
                rel = er
            if h is None:
                h = eh if isinstance(atom.head, Const) else int(self.rng.integers(n_ent))
            if t is None:
                t = et if isinstance(atom.tail, Const) else int(self.rng.integers(n_ent))
            if (h, rel, t) in self.kg:
                continue
            self.binding.setdefault(atom.relation, rel)
            if self.value(atom.head) is None:
                self.assign(atom.head, h)
            if self.value(atom.tail) is None:
                self.assign(atom.tail, t)
            return True
        return False

    def walk(self, answer: int) -> dict[str, int] | None:
        self.values[FREE] = answer
        self._done: set = set()
        pending = [a for a in self.atoms if not a.negated]
        while pending:
            ready = [a for a in pending if self.value(a.tail) is not None]
            ready = ready or [a for a in pending if self.value(a.head) is not None]
            if not ready:
                # disconnected remainder: anchor it on a random edge
                a = pending[0]
                h, r, t = self.kg.triples[int(self.rng.integers(len(self.kg.triples)))]
                self.assign(a.tail, t)
                ready = [a]
            atom = ready[0]
            if not self._ground_positive(atom):
                return None
            self._done.add(atom)
            pending.remove(atom)
        for atom in self.atoms:
            if atom.negated and not self._ground_negative(atom):
                return None
        return self.binding


def _answer_pool(kg: KnowledgeGraph) -> np.ndarray:
    return np.array(sorted({t for _, _, t in kg.triples}), dtype=np.int64)


def sample_query(
    splits: GraphSplit,
    qtype: QueryType | str,
    purpose: str,
    rng: np.random.Generator,
    max_attempts: int = 1000,
    exclude: set | None = None,
) -> QuerySample:
    """Draw one grounded query of ``qtype`` suited to ``purpose``.

    Train samples need a non-empty ``a_id``; validation and test samples need
    a non-empty ``a_ood``. Queries whose text is in ``exclude`` are redrawn.
    """
    if isinstance(qtype, str):
        qtype = get_type(qtype)
    if purpose not in PURPOSES:
        raise ValueError(f"unknown purpose {purpose!r}")
    kg = splits.graph(purpose)
    if not kg.triples:
        raise SamplingError(f"{qtype.name}: the {purpose} graph has no edges")
    template = qtype.template
    pool = _answer_pool(kg)
    for _ in range(max_attempts):
        answer = int(pool[int(rng.integers(len(pool)))])
        binding = _Walker(kg, template, rng).walk(answer)
        if binding is None:
            continue
        ast = ground(template, binding)
        text = serialize_efo(ast)
        if exclude is not None and text in exclude:
            continue
        split = answer_split(splits, ast, purpose)
        if (split.a_id if purpose == "train" else split.a_ood):
            return QuerySample(qtype.name, text, split, {"graph": purpose})
    raise SamplingError(
        f"could not sample a {purpose} query of type {qtype.name} from a graph with "
        f"{kg.num_entities} entities and {len(kg.triples)} edges after {max_attempts} attempts"
    )


def enumerate_1p(splits_or_graph, purpose: str = "train") -> list[QuerySample]:
    """One 1p query per distinct (head, relation) pair of the training graph."""
    if isinstance(splits_or_graph, KnowledgeGraph):
        kg, splits = splits_or_graph, None
    else:
        splits, kg = splits_or_graph, splits_or_graph.graph(purpose)
    out = []
    for h, r in sorted(kg.fwd_index):
        ast = parse_efo(f"r:{r}(s:{h},f)")
        if splits is None:
            split = AnswerSplit(tuple(sorted(kg.fwd_index[h, r])), ())
        else:
            split = answer_split(splits, ast, purpose)
        out.append(QuerySample("1p", serialize_efo(ast), split, {"graph": purpose}))
    return out


# --------------------------------------------------------------- datasets ---


@dataclass(frozen=True)
class Profile:
    """Per-purpose, per-type query counts; ``"all"`` enumerates 1p exhaustively."""

    name: str
    counts: Mapping[str, Mapping[str, int | str]]

    @classmethod
    def desk(cls, train: int = 200, evaluate: int = 50) -> "Profile":
        return cls("desk-scale", {
            "train": {t: train for t in SEEN_TYPES},
            "valid": {t: evaluate for t in QUERY_TYPES},
            "test": {t: evaluate for t in QUERY_TYPES},
        })

    @classmethod
    def paper(cls, graph_name: str = "FB15k-237", eval_count: int | None = None) -> "Profile":
        if eval_count is None:
            eval_count = BENCHMARK_EVAL_COUNTS.get(graph_name, 5000)
        train = {t: "2x1p" for t in SEEN_TYPES}
        train["1p"] = "all"
        return cls("paper-scale", {
            "train": train,
            "valid": {t: eval_count for t in QUERY_TYPES},
            "test": {t: eval_count for t in QUERY_TYPES},
        })

    @classmethod
    def custom(cls, counts: Mapping[str, Mapping[str, int | str]]) -> "Profile":
        for purpose, per_type in counts.items():
            if purpose not in PURPOSES:
                raise ValueError(f"unknown purpose {purpose!r} in profile")
            for t, n in per_type.items():
                get_type(t)
                if purpose == "train" and t not in SEEN_TYPES:
                    raise ValueError(f"unseen type {t} cannot be used for training")
                if not (n in ("all", "2x1p") or (isinstance(n, int) and n >= 0)):
                    raise ValueError(f"bad count {n!r} for {purpose}/{t}")
                if n == "all" and t != "1p":
                    raise ValueError("only 1p can be enumerated exhaustively")
        return cls("custom", {p: dict(c) for p, c in counts.items()})

    @classmethod
    def named(cls, name: str) -> "Profile":
        if name == "desk-scale":
            return cls.desk()
        if name == "paper-scale":
            return cls.paper()
        raise ValueError(f"unknown profile {name!r}")


def _sample_type(args) -> list[dict]:
    splits, type_name, purpose, n, seed, max_attempts = args
    seen: set[str] = set()
    records = []
    for i in range(n):
        s = sample_query(splits, type_name, purpose, sample_rng(seed, purpose, type_name, i), max_attempts, seen)
        seen.add(s.query)
        records.append(s.to_record())
    return records


def _resolve_counts(per_type, splits, purpose) -> tuple[dict, list[dict]]:
    fixed = {}
    enumerated: list[dict] = []
    if per_type.get("1p") == "all":
        enumerated = [s.to_record() for s in enumerate_1p(splits, purpose)]
    base = len(enumerated)
    for t, n in per_type.items():
        if n == "all":
            continue
        if n == "2x1p":
            n = 2 * (base or len(splits.graph(purpose).fwd_index))
        fixed[t] = n
    return fixed, enumerated


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_queries(path) -> list[QuerySample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QuerySample.from_record(json.loads(line)))
    return out


def build_dataset(
    splits: GraphSplit,
    profile: Profile | str,
    out_dir,
    seed: int = 0,
    workers: int = 1,
    max_attempts: int = 1000,
    graph_name: str = "",
) -> dict:
    """Sample train/valid/test query files into ``out_dir`` and return the manifest.

    Output is a deterministic function of the graph, profile and seed; the
    worker count only changes speed.
    """
    if isinstance(profile, str):
        profile = Profile.named(profile)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "profile": profile.name,
        "seed": seed,
        "graph": graph_name or splits.source,
        "graph_checksum": splits.test.checksum(),
        "syntax_version": SYNTAX_VERSION,
        "eval_count_interpretation": "per query type",
        "counts": {},
    }
    for purpose in PURPOSES:
        per_type = profile.counts.get(purpose, {})
        fixed, records = _resolve_counts(per_type, splits, purpose)
        jobs = [(splits, t, purpose, n, seed, max_attempts) for t, n in fixed.items() if n > 0]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sample_type, jobs))
        else:
            results = [_sample_type(j) for j in jobs]
        for rs in results:
            records.extend(rs)
        counts: dict[str, int] = {}
        for rec in records:
            counts[rec["type_name"]] = counts.get(rec["type_name"], 0) + 1
        order = np.random.default_rng(np.random.SeedSequence([seed, PURPOSES.index(purpose), 999])).permutation(
            len(records)
        )
        records = [records[i] for i in order]
        _write_jsonl(out_dir / f"{purpose}.jsonl", records)
        manifest["counts"][purpose] = dict(sorted(counts.items(), key=lambda kv: get_type(kv[0]).type_id))
        digest = hashlib.sha256((out_dir / f"{purpose}.jsonl").read_bytes()).hexdigest()[:16]
        manifest.setdefault("files", {})[purpose] = {"path": f"{purpose}.jsonl", "sha256": digest}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
