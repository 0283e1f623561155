"""Exact answer sets of grounded EFO queries.

Two independent evaluators live here: :func:`answer_set` runs a backtracking
search over each conjunction, and :func:`answer_set_naive` enumerates every
assignment of the existential variables with dense boolean tensors. The
second exists to check the first.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kg import GraphSplit, KnowledgeGraph
from .syntax import FREE, Atom, Const, QueryAst, Var

DEFAULT_BUDGET = 10**7


class UngroundedQueryError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnswerSplit:
    a_id: tuple[int, ...]
    a_ood: tuple[int, ...]

    def __post_init__(self):
        if set(self.a_id) & set(self.a_ood):
            raise ValueError("a_id and a_ood overlap")


def _check_grounded(ast: QueryAst) -> None:
    for a in ast.atoms:
        if not isinstance(a.relation, int):
            raise UngroundedQueryError(f"relation placeholder {a.relation!r} is not grounded")
        for t in (a.head, a.tail):
            if isinstance(t, Const) and not isinstance(t.symbol, int):
                raise UngroundedQueryError(f"constant placeholder {t.symbol!r} is not grounded")


def _check_ids(kg: KnowledgeGraph, ast: QueryAst) -> None:
    for a in ast.atoms:
        if not 0 <= a.relation < kg.num_relations:
            raise ValueError(f"relation id {a.relation} out of range")
        for t in (a.head, a.tail):
            if isinstance(t, Const) and not 0 <= t.symbol < kg.num_entities:
                raise ValueError(f"entity id {t.symbol} out of range")


# --------------------------------------------------- backtracking search ---


class _Conjunction:
    def __init__(self, kg: KnowledgeGraph, atoms: Sequence[Atom]):
        self.kg = kg
        self.positive = [a for a in atoms if not a.negated]
        self.negative = [a for a in atoms if a.negated]
        self.atoms = list(atoms)
        variables: dict = {}
        for a in atoms:
            for t in (a.head, a.tail):
                if not isinstance(t, Const):
                    variables.setdefault(t, None)
        self.variables = list(variables)
        # static candidate sets: relation participation, narrowed by constant endpoints
        everything = frozenset(range(kg.num_entities))
        domain = {}
        for v in self.variables:
            dom = None
            for a in self.positive:
                if a.head == v and a.tail == v:
                    continue
                if a.head == v:
                    s = kg.neighbor_set(a.tail.symbol, a.relation, "backward") if isinstance(a.tail, Const) \
                        else kg.heads_of(a.relation)
                elif a.tail == v:
                    s = kg.neighbor_set(a.head.symbol, a.relation, "forward") if isinstance(a.head, Const) \
                        else kg.tails_of(a.relation)
                else:
                    continue
                dom = s if dom is None else dom & s
            domain[v] = everything if dom is None else dom
        self.domain = domain

    def _value(self, term, assign):
        return term.symbol if isinstance(term, Const) else assign.get(term)

    def candidates(self, v, assign) -> frozenset:
        cands = self.domain[v]
        for a in self.positive:
            if a.head == v and a.tail != v:
                other = self._value(a.tail, assign)
                if other is not None and not isinstance(a.tail, Const):
                    cands = cands & self.kg.neighbor_set(other, a.relation, "backward")
            elif a.tail == v and a.head != v:
                other = self._value(a.head, assign)
                if other is not None and not isinstance(a.head, Const):
                    cands = cands & self.kg.neighbor_set(other, a.relation, "forward")
            if not cands:
                break
        return cands

    def consistent(self, v, assign) -> bool:
        # atoms touching v whose endpoints are now all bound
        for a in self.atoms:
            if v not in (a.head, a.tail):
                continue
            h, t = self._value(a.head, assign), self._value(a.tail, assign)
            if h is None or t is None:
                continue
            if ((h, a.relation, t) in self.kg) == a.negated:
                return False
        return True

    def solve(self, answers: set, fixed_free=None) -> None:
        assign = {}
        if fixed_free is not None:
            if FREE not in self.variables:
                return
            assign[FREE] = fixed_free
            if fixed_free not in self.domain[FREE] or not self.consistent(FREE, assign):
                return
        if any(not d for d in self.domain.values()):
            return
        self._search(assign, answers)

    def _search(self, assign, answers) -> bool:
        free = [v for v in self.variables if v not in assign]
        if not free:
            answers.add(assign[FREE])
            return True
        best, best_c = None, None
        for v in free:
            c = self.candidates(v, assign)
            if best_c is None or len(c) < len(best_c):
                best, best_c = v, c
                if not c:
                    return False
        free_bound = FREE in assign
        if best is FREE:
            best_c = best_c - answers
        found = False
        for value in sorted(best_c):
            assign[best] = value
            if self.consistent(best, assign) and self._search(assign, answers):
                found = True
                if free_bound or best is FREE:
                    # one witness is enough once f is fixed
                    if free_bound:
                        del assign[best]
                        return True
            del assign[best]
        return found


def answer_set(kg: KnowledgeGraph, ast: QueryAst) -> list[int]:
    """Sorted answers of ``ast`` on ``kg`` by backtracking search."""
    _check_grounded(ast)
    _check_ids(kg, ast)
    answers: set[int] = set()
    for conj in ast.conjunctions:
        _Conjunction(kg, conj).solve(answers)
    return sorted(answers)


def check_entailment(kg: KnowledgeGraph, ast: QueryAst, candidate: int) -> bool:
    """Whether ``kg`` entails the query with ``f`` replaced by ``candidate``."""
    _check_grounded(ast)
    _check_ids(kg, ast)
    if not 0 <= candidate < kg.num_entities:
        raise ValueError(f"candidate {candidate} out of range")
    for conj in ast.conjunctions:
        found: set[int] = set()
        _Conjunction(kg, conj).solve(found, fixed_free=candidate)
        if found:
            return True
    return False


# ------------------------------------------------- exhaustive enumeration ---

_DENSE: "weakref.WeakKeyDictionary[KnowledgeGraph, np.ndarray]" = weakref.WeakKeyDictionary()


def _dense(kg: KnowledgeGraph) -> np.ndarray:
    adj = _DENSE.get(kg)
    if adj is None:
        adj = np.zeros((kg.num_relations, kg.num_entities, kg.num_entities), dtype=bool)
        arr = kg.as_array()
        if len(arr):
            adj[arr[:, 1], arr[:, 0], arr[:, 2]] = True
        _DENSE[kg] = adj
    return adj


def answer_set_naive(kg: KnowledgeGraph, ast: QueryAst, budget: int = DEFAULT_BUDGET) -> list[int]:
    """Sorted answers by checking every assignment of the existentials.

    For each conjunction the truth of every atom is laid out over the axes
    ``(f, e1, ..., en)``; an entity answers the query when some slice over the
    existential axes has all atoms true.
    """
    _check_grounded(ast)
    _check_ids(kg, ast)
    n_ent = kg.num_entities
    plans = []
    for conj in ast.conjunctions:
        exist = sorted({t for a in conj for t in (a.head, a.tail) if isinstance(t, Var)}, key=lambda v: v.index)
        if n_ent ** len(exist) > budget:
            raise BudgetExceededError(
                f"{n_ent}^{len(exist)} assignments exceed the enumeration budget {budget}"
            )
        plans.append((conj, exist))
    adj = _dense(kg)
    result = np.zeros(n_ent, dtype=bool)
    for conj, exist in plans:
        axes = [FREE] + exist
        ndim = len(axes)

        def index_of(term):
            if isinstance(term, Const):
                return term.symbol
            shape = [1] * ndim
            shape[axes.index(term)] = n_ent
            return np.arange(n_ent).reshape(shape)

        # chunk the answer axis so the dense block stays small
        step = max(1, int(4e6 // max(1, n_ent ** len(exist))))
        for lo in range(0, n_ent, step):
            hi = min(n_ent, lo + step)
            block = np.ones((hi - lo,) + (n_ent,) * len(exist), dtype=bool)
            offset = np.arange(lo, hi).reshape([hi - lo] + [1] * len(exist))

            def idx(term):
                if term == FREE:
                    return offset
                return index_of(term)

            for a in conj:
                truth = adj[a.relation][idx(a.head), idx(a.tail)]
                block &= ~truth if a.negated else truth
            result[lo:hi] |= block.reshape(hi - lo, -1).any(axis=1)
    return [int(i) for i in np.flatnonzero(result)]


def answer_split(splits: GraphSplit, ast: QueryAst, purpose: str = "test") -> AnswerSplit:
    """In-distribution and out-of-distribution answers of a grounded query.

    ``a_id`` comes from the training graph. For test queries ``a_ood`` holds
    answers of the full graph that the validation graph does not already
    give; for validation queries it is the validation answers missing from
    the training graph. With negation an answer can drop out of the
    validation graph and come back in the full graph through a new witness,
    so ``a_id`` is removed from ``a_ood`` explicitly to keep them disjoint.
    """
    a_train = answer_set(splits.train, ast)
    if purpose == "valid":
        a_ood = set(answer_set(splits.valid, ast)) - set(a_train)
    else:
        a_ood = set(answer_set(splits.test, ast)) - set(answer_set(splits.valid, ast)) - set(a_train)
    return AnswerSplit(tuple(a_train), tuple(sorted(a_ood)))
