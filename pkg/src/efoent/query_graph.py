"""Query graphs with relation, negation and union nodes, and adjacency masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .syntax import FREE, Atom, Const, Formula, Or, QueryAst, Token, Var

NODE_KINDS = ("constant", "existential", "free", "union", "relation", "negation")


@dataclass(frozen=True)
class Node:
    kind: str
    label: str


@dataclass(frozen=True)
class QueryGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    # (head node, relation node, tail node) per atom in surface order
    atom_nodes: tuple[tuple[int, int, int], ...]

    def neighbours(self) -> list[set[int]]:
        adj = [set() for _ in self.nodes]
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def dump(self) -> str:
        lines = [f"{i} {n.kind} {n.label}" for i, n in enumerate(self.nodes)]
        lines += [f"{a} {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"


def _union_target(node: Or):
    """Variable every disjunct produces: ``f`` when shared, else the first shared existential."""
    sets = []
    for d in node.items:
        terms = set()
        for a in _atoms(d):
            terms.update((a.head, a.tail))
        sets.append(terms)
    shared = set.intersection(*sets)
    if FREE in shared:
        return FREE
    for a in _atoms(node):
        for t in (a.head, a.tail):
            if isinstance(t, Var) and t in shared:
                return t
    return None


def _atoms(node: Formula):
    if isinstance(node, Atom):
        yield node
    else:
        for i in node.items:
            yield from _atoms(i)


def build_query_graph(ast: QueryAst) -> QueryGraph:
    """Build the query graph of ``ast``.

    Every atom ``r(h, t)`` becomes ``h -> r -> t`` through its own relation
    node; a negated atom routes through a negation node ``h -> r -> n -> t``.
    Each disjunction gets a union node ``u`` that replaces the variable its
    disjuncts share, plus the edge ``u -> v``.
    """
    # pass 1: endpoint keys per atom, with union substitution applied
    unions: list[tuple[str, object]] = []  # (union key, replaced term)
    endpoints: list[tuple[object, object, Atom]] = []

    def visit(node, subst):
        if isinstance(node, Atom):
            endpoints.append((subst.get(node.head, node.head), subst.get(node.tail, node.tail), node))
            return
        if isinstance(node, Or):
            target = _union_target(node)
            key = ("union", len(unions))
            unions.append((key, subst.get(target, target) if target is not None else None))
            inner = dict(subst)
            if target is not None:
                inner[target] = key
            for d in node.items:
                visit(d, inner)
            return
        for i in node.items:
            visit(i, subst)

    visit(ast.formula, {})

    consts, exis = {}, {}
    for h, t, _ in endpoints:
        for term in (h, t):
            if isinstance(term, Const):
                consts.setdefault(term, None)
            elif isinstance(term, Var):
                exis.setdefault(term, None)
    for _, replaced in unions:
        if isinstance(replaced, Var):
            exis.setdefault(replaced, None)

    nodes: list[Node] = []
    index: dict[object, int] = {}
    for c in consts:
        index[c] = len(nodes)
        nodes.append(Node("constant", str(c)))
    for v in sorted(exis, key=lambda v: v.index):
        index[v] = len(nodes)
        nodes.append(Node("existential", str(v)))
    index[FREE] = len(nodes)
    nodes.append(Node("free", "f"))
    for key, _ in unions:
        index[key] = len(nodes)
        nodes.append(Node("union", f"u{key[1] + 1}"))

    edges: list[tuple[int, int]] = []
    rel_nodes = []
    for k, (h, t, atom) in enumerate(endpoints):
        rel_nodes.append(len(nodes))
        nodes.append(Node("relation", atom.relation_text))
    atom_nodes = []
    for k, (h, t, atom) in enumerate(endpoints):
        r = rel_nodes[k]
        edges.append((index[h], r))
        if atom.negated:
            n = len(nodes)
            nodes.append(Node("negation", "n"))
            edges += [(r, n), (n, index[t])]
        else:
            edges.append((r, index[t]))
        atom_nodes.append((index[h], r, index[t]))
    for key, replaced in unions:
        if replaced is not None:
            edges.append((index[key], index[replaced]))
    return QueryGraph(tuple(nodes), tuple(edges), tuple(atom_nodes))


class MaskError(ValueError):
    pass


def token_nodes(tokens: Sequence[Token], graph: QueryGraph) -> list[int | None]:
    """Graph node of each token; ``None`` for parentheses and operators."""
    out: list[int | None] = []
    atom = -1
    slot = 0
    for tok in tokens:
        if tok.kind == "relation":
            atom += 1
            slot = 0
            if atom >= len(graph.atom_nodes):
                raise MaskError("more relation tokens than atoms in the query graph")
            out.append(graph.atom_nodes[atom][1])
        elif tok.kind == "entity":
            if atom < 0 or slot > 1:
                raise MaskError(f"entity token {tok.symbol!r} outside an atom")
            h, _, t = graph.atom_nodes[atom]
            out.append(h if slot == 0 else t)
            slot += 1
        else:
            out.append(None)
    return out


def adjacency_mask(tokens: Sequence[Token], graph: QueryGraph) -> np.ndarray:
    """Boolean ``[n, n]`` matrix: True where attention is allowed.

    Tokens attend to tokens whose nodes are equal or one hop apart (either
    direction); structural tokens attend and are attended everywhere.
    """
    nodes = token_nodes(tokens, graph)
    adj = graph.neighbours()
    n = len(tokens)
    mask = np.ones((n, n), dtype=bool)
    for i, a in enumerate(nodes):
        if a is None:
            continue
        for j, b in enumerate(nodes):
            if b is None:
                continue
            mask[i, j] = a == b or b in adj[a]
    return mask
