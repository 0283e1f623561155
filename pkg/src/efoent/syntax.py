"""EFO query syntax: AST, EFO and Lisp-like parsers, serializer, tokenizer.

Queries are kept as the formula tree that was written (grouping included) so
that serialization reproduces the input verbatim; :attr:`QueryAst.conjunctions`
gives the disjunctive normal form used by the evaluators.

Symbols
-------
``r<k>`` / ``s<k>``
    relation / constant placeholders of a query template.
``r:<id>`` / ``s:<id>``
    grounded relation / entity ids.
``e<k>``, ``f``
    existential variables and the single free variable.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence, Union


class QuerySyntaxError(ValueError):
    pass


class NotExpressibleError(QuerySyntaxError):
    """The query has no equivalent in the Lisp-like set-operator syntax."""

    def __str__(self) -> str:
        return f"not expressible in Lisp form: {super().__str__()}"


# ---------------------------------------------------------------- terms ---


@dataclass(frozen=True)
class Const:
    symbol: Union[str, int]  # "s1" placeholder or grounded entity id

    def __str__(self):
        return f"s:{self.symbol}" if isinstance(self.symbol, int) else self.symbol


@dataclass(frozen=True)
class Var:
    index: int

    def __str__(self):
        return f"e{self.index}"


@dataclass(frozen=True)
class Free:
    def __str__(self):
        return "f"


FREE = Free()
Term = Union[Const, Var, Free]


@dataclass(frozen=True)
class Atom:
    relation: Union[str, int]
    head: Term
    tail: Term
    negated: bool = False

    @property
    def relation_text(self) -> str:
        return f"r:{self.relation}" if isinstance(self.relation, int) else self.relation

    def __str__(self):
        core = f"{self.relation_text}({self.head},{self.tail})"
        return f"!({core})" if self.negated else core


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


Formula = Union[Atom, And, Or]


def iter_atoms(node: Formula) -> Iterator[Atom]:
    if isinstance(node, Atom):
        yield node
    else:
        for item in node.items:
            yield from iter_atoms(item)


def _dnf(node: Formula) -> list[tuple[Atom, ...]]:
    if isinstance(node, Atom):
        return [(node,)]
    if isinstance(node, Or):
        return [c for item in node.items for c in _dnf(item)]
    parts = [_dnf(item) for item in node.items]
    return [tuple(a for conj in combo for a in conj) for combo in itertools.product(*parts)]


@dataclass(frozen=True)
class QueryAst:
    """An existential first-order query with one free variable ``f``.

    ``formula`` is the tree as written; ``conjunctions`` is its DNF, each
    conjunction carrying its own existential scope.
    """

    formula: Formula
    conjunctions: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "conjunctions", tuple(_dnf(self.formula)))
        _validate(self)

    @property
    def atoms(self) -> tuple[Atom, ...]:
        """Atoms in surface order."""
        return tuple(iter_atoms(self.formula))

    @property
    def existentials(self) -> tuple[Var, ...]:
        out: dict[Var, None] = {}
        for a in self.atoms:
            for t in (a.head, a.tail):
                if isinstance(t, Var):
                    out.setdefault(t, None)
        return tuple(out)

    @property
    def constants(self) -> tuple[Const, ...]:
        out: dict[Const, None] = {}
        for a in self.atoms:
            for t in (a.head, a.tail):
                if isinstance(t, Const):
                    out.setdefault(t, None)
        return tuple(out)

    @property
    def relations(self) -> tuple:
        return tuple(dict.fromkeys(a.relation for a in self.atoms))

    @property
    def is_grounded(self) -> bool:
        return all(
            isinstance(a.relation, int) and all(isinstance(c.symbol, int) for c in self._consts(a))
            for a in self.atoms
        )

    @staticmethod
    def _consts(a: Atom):
        return [t for t in (a.head, a.tail) if isinstance(t, Const)]

    def __str__(self):
        return serialize_efo(self)


def _validate(ast: QueryAst) -> None:
    atoms = ast.atoms
    if not atoms:
        raise QuerySyntaxError("query has no atoms")
    if not any(FREE in (a.head, a.tail) for a in atoms):
        raise QuerySyntaxError("free variable f does not occur in the query")
    for node in _walk(ast.formula):
        if isinstance(node, (And, Or)) and len(node.items) < 2:
            raise QuerySyntaxError("operators need at least two operands")
    for a in atoms:
        for t in (a.head, a.tail):
            if isinstance(t, Var) and t.index < 1:
                raise QuerySyntaxError(f"variable index must be positive: {t}")


def _walk(node):
    yield node
    if not isinstance(node, Atom):
        for item in node.items:
            yield from _walk(item)


# ------------------------------------------------------------ renaming ---


def _map_terms(node: Formula, fn) -> Formula:
    if isinstance(node, Atom):
        return Atom(node.relation, fn(node.head), fn(node.tail), node.negated)
    return type(node)(tuple(_map_terms(i, fn) for i in node.items))


def canonicalize(ast: QueryAst) -> QueryAst:
    """Rename existentials to ``e1, e2, ...`` in first-use order."""
    mapping: dict[Var, Var] = {}
    for v in ast.existentials:
        mapping[v] = Var(len(mapping) + 1)
    return QueryAst(_map_terms(ast.formula, lambda t: mapping.get(t, t)))


def ground(ast: QueryAst, binding: Mapping[str, int]) -> QueryAst:
    """Substitute relation (``r<k>``) and constant (``s<k>``) placeholders by ids."""

    def term(t):
        if isinstance(t, Const) and isinstance(t.symbol, str):
            if t.symbol not in binding:
                raise QuerySyntaxError(f"no binding for constant {t.symbol}")
            return Const(int(binding[t.symbol]))
        return t

    def walk(node):
        if isinstance(node, Atom):
            rel = node.relation
            if isinstance(rel, str):
                if rel not in binding:
                    raise QuerySyntaxError(f"no binding for relation {rel}")
                rel = int(binding[rel])
            return Atom(rel, term(node.head), term(node.tail), node.negated)
        return type(node)(tuple(walk(i) for i in node.items))

    return QueryAst(walk(ast.formula))


# ----------------------------------------------------------- EFO lexer ---

_EFO_TOKEN = re.compile(
    r"\s*(?:(?P<punct>[()&|!,])|(?P<sym>r:\d+|s:\d+|[rse]\d+|f)(?![\w:])|(?P<bad>\S+?(?=[()&|!,\s]|$)))"
)


def _lex_efo(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _EFO_TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise QuerySyntaxError(f"cannot tokenize at offset {pos}: {text[pos:pos + 12]!r}")
        if m.group("bad") is not None:
            raise QuerySyntaxError(f"unknown symbol {m.group('bad')!r} at offset {m.start('bad')}")
        kind = "punct" if m.group("punct") else "sym"
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


def _parse_symbol_term(sym: str) -> Term:
    if sym == "f":
        return FREE
    if sym.startswith("s:"):
        return Const(int(sym[2:]))
    if sym[0] == "s":
        return Const(sym)
    if sym[0] == "e":
        return Var(int(sym[1:]))
    raise QuerySyntaxError(f"{sym!r} is not an entity or variable symbol")


def _parse_relation(sym: str):
    if sym.startswith("r:"):
        return int(sym[2:])
    if sym[0] == "r":
        return sym
    raise QuerySyntaxError(f"{sym!r} is not a relation symbol")


class _EfoParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex_efo(text)
        self.i = 0
        depth = 0
        for kind, val, off in self.tokens:
            if val == "(":
                depth += 1
            elif val == ")":
                depth -= 1
                if depth < 0:
                    raise QuerySyntaxError(f"unbalanced parentheses: unexpected ')' at offset {off}")
        if depth != 0:
            raise QuerySyntaxError(f"unbalanced parentheses: {depth} unclosed '('")

    def peek(self):
        return self.tokens[self.i][1] if self.i < len(self.tokens) else None

    def take(self, expected=None):
        if self.i >= len(self.tokens):
            raise QuerySyntaxError(f"unexpected end of query, expected {expected or 'more input'}")
        kind, val, off = self.tokens[self.i]
        if expected is not None and val != expected:
            raise QuerySyntaxError(f"expected {expected!r} at offset {off}, found {val!r}")
        self.i += 1
        return kind, val, off

    def parse(self) -> Formula:
        node = self.expr()
        if self.i != len(self.tokens):
            _, val, off = self.tokens[self.i]
            raise QuerySyntaxError(f"trailing input at offset {off}: {val!r}")
        return node

    def expr(self) -> Formula:
        node = self.operand()
        built = None  # operator of a node assembled at this level
        while self.peek() in ("&", "|"):
            _, op, _ = self.take()
            rhs = self.operand()
            cls = And if op == "&" else Or
            if built is cls:
                node = cls(node.items + (rhs,))
            else:
                node = cls((node, rhs))
                built = cls
        return node

    def operand(self) -> Formula:
        tok = self.peek()
        if tok == "(":
            self.take("(")
            node = self.expr()
            self.take(")")
            return node
        if tok == "!":
            _, _, off = self.take("!")
            inner = self.operand()
            if isinstance(inner, Or) or any(isinstance(n, Or) for n in _walk(inner)):
                raise QuerySyntaxError(f"'|' under negation at offset {off} is outside the EFO fragment")
            if not isinstance(inner, Atom):
                raise QuerySyntaxError(f"negation at offset {off} must apply to a single atom")
            if inner.negated:
                raise QuerySyntaxError(f"double negation at offset {off}")
            return Atom(inner.relation, inner.head, inner.tail, True)
        return self.atom()

    def atom(self) -> Atom:
        kind, sym, off = self.take()
        if kind != "sym":
            raise QuerySyntaxError(f"expected a relation symbol at offset {off}, found {sym!r}")
        rel = _parse_relation(sym)
        self.take("(")
        _, h, _ = self.take()
        self.take(",")
        _, t, _ = self.take()
        self.take(")")
        return Atom(rel, _parse_symbol_term(h), _parse_symbol_term(t))


def parse_efo(text: str) -> QueryAst:
    """Parse an EFO-syntax query such as ``(r1(s1,e1))&(r2(e1,f))``.

    ``&`` and ``|`` are left-associative; a run of the same operator at one
    parenthesis level becomes a single n-ary node, while explicit grouping is
    preserved. Existentials are renamed canonically.
    """
    if not text or not text.strip():
        raise QuerySyntaxError("empty query")
    return canonicalize(QueryAst(_EfoParser(text).parse()))


def _wrap(node: Formula) -> str:
    return f"({_ser(node)})"


def _ser(node: Formula) -> str:
    if isinstance(node, Atom):
        return str(node)
    op = "&" if isinstance(node, And) else "|"
    return op.join(_wrap(i) for i in node.items)


def serialize_efo(ast: QueryAst) -> str:
    return _ser(ast.formula)


# ---------------------------------------------------------- Lisp syntax ---

_LISP_TOKEN = re.compile(r"\s*(?:([(),])|([A-Za-z0-9:_]+))")


def _lex_lisp(text: str) -> list[str]:
    out, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _LISP_TOKEN.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"cannot tokenize Lisp query at offset {pos}: {text[pos:pos + 12]!r}")
        out.append(m.group(1) or m.group(2))
        pos = m.end()
    return out


def _read_sexp(tokens: list[str]):
    pos = 0

    def item():
        nonlocal pos
        if pos >= len(tokens):
            raise QuerySyntaxError("unexpected end of Lisp query")
        tok = tokens[pos]
        if tok == "(":
            pos += 1
            elems = [item()]
            while pos < len(tokens) and tokens[pos] == ",":
                pos += 1
                elems.append(item())
            if pos >= len(tokens) or tokens[pos] != ")":
                raise QuerySyntaxError("unbalanced parentheses in Lisp query")
            pos += 1
            return elems
        if tok in (")", ","):
            raise QuerySyntaxError(f"unexpected {tok!r} in Lisp query")
        pos += 1
        return tok

    tree = item()
    if pos != len(tokens):
        raise QuerySyntaxError("trailing input in Lisp query")
    return tree


_ARITY = {"p": (2, 2), "n": (1, 1), "i": (2, None), "u": (2, None)}


def _flatten(cls, items):
    out = []
    for it in items:
        if isinstance(it, cls):
            out.extend(it.items)
        else:
            out.append(it)
    return out[0] if len(out) == 1 else cls(tuple(out))


class _LispCompiler:
    def __init__(self):
        self.next_var = 0

    def fresh(self) -> Var:
        self.next_var += 1
        return Var(self.next_var)

    @staticmethod
    def leaf(node):
        if isinstance(node, list) and len(node) == 1 and isinstance(node[0], str) and node[0] not in _ARITY:
            return node[0]
        return None

    def compile(self, node, target: Term) -> Formula:
        if not isinstance(node, list) or not node:
            raise QuerySyntaxError(f"malformed Lisp node {node!r}")
        op = node[0]
        if not isinstance(op, str):
            raise QuerySyntaxError(f"operator expected, found {op!r}")
        if op not in _ARITY:
            if self.leaf(node) is not None:
                raise QuerySyntaxError(f"bare symbol ({op}) is not a set expression")
            raise QuerySyntaxError(f"unknown operator {op!r}")
        args = node[1:]
        lo, hi = _ARITY[op]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if lo == hi else f">={lo}"
            raise QuerySyntaxError(f"operator {op!r} takes {want} arguments, got {len(args)}")
        if op == "p":
            rel_sym = self.leaf(args[0])
            if rel_sym is None:
                raise QuerySyntaxError("first argument of 'p' must be a relation symbol")
            rel = _parse_relation(rel_sym)
            src = self.leaf(args[1])
            if src is not None:
                head = _parse_symbol_term(src)
                if not isinstance(head, Const):
                    raise QuerySyntaxError(f"projection source {src!r} must be a constant")
                return Atom(rel, head, target)
            v = self.fresh()
            inner = self.compile(args[1], v)
            return _flatten(And, [inner, Atom(rel, v, target)])
        if op == "n":
            inner = self.compile(args[0], target)
            if not isinstance(inner, Atom) or inner.negated or not isinstance(inner.head, Const):
                raise NotExpressibleError(
                    "negation of a multi-hop set has no atom-level EFO equivalent"
                )
            return Atom(inner.relation, inner.head, inner.tail, True)
        parts = [self.compile(a, target) for a in args]
        return _flatten(And if op == "i" else Or, parts)


def parse_lisp(text: str) -> QueryAst:
    """Compile a Lisp-like query such as ``(p,(r2),(p,(r1),(s1)))`` to an AST."""
    if not text or not text.strip():
        raise QuerySyntaxError("empty query")
    tree = _read_sexp(_lex_lisp(text))
    if not isinstance(tree, list):
        raise QuerySyntaxError("Lisp query must be parenthesized")
    formula = _LispCompiler().compile(tree, FREE)
    return canonicalize(QueryAst(formula))


def _lisp_text(node) -> str:
    if isinstance(node, str):
        return f"({node})"
    return "(" + ",".join([node[0]] + [_lisp_text(a) for a in node[1:]]) + ")"


def _has_set_op(node) -> bool:
    return isinstance(node, list) and (node[0] in ("i", "u") or any(_has_set_op(a) for a in node[1:]))


class _LispBuilder:
    """Turns a tree-shaped EFO formula into nested set operators."""

    def __init__(self):
        self.used: set[int] = set()

    @staticmethod
    def produces(item: Formula, target: Term) -> bool:
        if isinstance(item, Atom):
            return item.tail == target
        if isinstance(item, Or):
            return all(_LispBuilder.produces(d, target) for d in item.items)
        return any(_LispBuilder.produces(i, target) for i in item.items)

    def build(self, items: Sequence[Formula], target: Term):
        branches = []
        for pos, item in enumerate(items):
            if not self.produces(item, target):
                continue
            if isinstance(item, Atom):
                if id(item) in self.used:
                    raise NotExpressibleError("a sub-query is consumed twice")
                self.used.add(id(item))
                if isinstance(item.head, Const):
                    src = str(item.head)
                elif item.negated:
                    raise NotExpressibleError("negated atom with a variable head")
                elif isinstance(item.head, Var):
                    src = self.build(items, item.head)
                else:
                    raise NotExpressibleError("free variable used as a projection source")
                node = ["p", item.relation_text, src]
                if item.negated:
                    node = ["n", node]
                branches.append((item.negated, pos, node))
            elif isinstance(item, Or):
                parts = [self.build(_operands(d), target) for d in item.items]
                node = ["u"] + sorted(parts, key=_has_set_op)
                branches.append((False, pos, node))
            else:
                branches.append((False, pos, self.build(_operands(item), target)))
        if not branches:
            raise NotExpressibleError(f"nothing produces {target}")
        # projections first, compound branches next, negations last
        branches.sort(key=lambda b: (b[0], _has_set_op(b[2]), b[1]))
        nodes = [b[2] for b in branches]
        return nodes[0] if len(nodes) == 1 else ["i"] + nodes


def _operands(node: Formula) -> list:
    if isinstance(node, And):
        leaves: list = []
        _block_leaves(node, leaves)
        return leaves
    return [node]


def convert_to_lisp(ast: QueryAst) -> str:
    """Express a tree-shaped query in Lisp-like syntax.

    Raises :class:`NotExpressibleError` for cycles, shared sub-queries,
    existential leaves and negations over multi-hop paths.
    """
    builder = _LispBuilder()
    tree = builder.build(_operands(ast.formula), FREE)
    if any(id(a) not in builder.used for a in iter_atoms(ast.formula)):
        raise NotExpressibleError("query contains atoms that do not feed the answer set")
    return _lisp_text(tree)


# ----------------------------------------------------------- tokenizer ---

TOKEN_KINDS = ("parenthesis", "entity", "relation", "conjunction", "disjunction", "negation")
KIND_INDEX = {k: i for i, k in enumerate(TOKEN_KINDS)}
TOKENIZATION_RULE = "efo-surface/commas-dropped/v1"


@dataclass(frozen=True)
class Token:
    kind: str
    symbol: str
    is_free_variable: bool = False

    @property
    def type_id(self) -> int:
        return KIND_INDEX[self.kind]


_PUNCT_KIND = {"(": "parenthesis", ")": "parenthesis", "&": "conjunction", "|": "disjunction", "!": "negation"}


def tokenize(ast: QueryAst) -> list[Token]:
    """Split the EFO surface form into typed tokens, dropping commas."""
    out = []
    for kind, val, _ in _lex_efo(serialize_efo(ast)):
        if val == ",":
            continue
        if kind == "punct":
            out.append(Token(_PUNCT_KIND[val], val))
        elif val[0] == "r":
            out.append(Token("relation", val))
        else:
            out.append(Token("entity", val, val == "f"))
    return out


# --------------------------------------------------------- permutations ---


def _blocks(node: Formula, parent_is_and: bool = False) -> list[list]:
    """Conjunctive blocks in traversal order; each block is its leaf list."""
    found = []
    if isinstance(node, And) and not parent_is_and:
        leaves = []
        _block_leaves(node, leaves)
        found.append(leaves)
        for leaf in leaves:
            found.extend(_blocks(leaf))
    elif isinstance(node, Or):
        for item in node.items:
            found.extend(_blocks(item))
    return found


def _block_leaves(node: And, out: list) -> None:
    for item in node.items:
        if isinstance(item, And):
            _block_leaves(item, out)
        else:
            out.append(item)


def conjunction_sizes(ast: QueryAst) -> list[int]:
    """Number of permutable positions in each conjunctive block."""
    return [len(b) for b in _blocks(ast.formula)]


def permute_atoms(ast: QueryAst, perm) -> QueryAst:
    """Reorder the operands of every conjunction, keeping the grouping shape.

    ``perm`` is one permutation per conjunctive block (see
    :func:`conjunction_sizes`); a single flat sequence is accepted when the
    query has exactly one block. ``perm[k]`` names the old position that moves
    to position ``k``. Variable names are left untouched.
    """
    sizes = conjunction_sizes(ast)
    if len(perm) and not isinstance(perm[0], (list, tuple)) and len(sizes) == 1:
        perm = [perm]
    perm = [list(p) for p in perm]
    if len(perm) != len(sizes):
        raise QuerySyntaxError(f"expected {len(sizes)} permutations, got {len(perm)}")
    for p, n in zip(perm, sizes):
        if sorted(p) != list(range(n)):
            raise QuerySyntaxError(f"invalid permutation {p} for a conjunction of {n} operands")

    queue = list(perm)

    def rebuild(node, parent_is_and=False):
        if isinstance(node, Atom):
            return node
        if isinstance(node, Or):
            return Or(tuple(rebuild(i) for i in node.items))
        if parent_is_and:
            raise AssertionError("nested block handled by refill")
        leaves: list = []
        _block_leaves(node, leaves)
        p = queue.pop(0)
        new_leaves = [leaves[j] for j in p]
        # children blocks are consumed in traversal order of the *original* leaves
        rebuilt = {id(l): rebuild(l) for l in leaves}
        it = iter(rebuilt[id(l)] for l in new_leaves)

        def refill(n):
            return And(tuple(refill(i) if isinstance(i, And) else next(it) for i in n.items))

        return refill(node)

    return QueryAst(rebuild(ast.formula))


def reverse_permutation(ast: QueryAst) -> QueryAst:
    return permute_atoms(ast, [list(reversed(range(n))) for n in conjunction_sizes(ast)])


def max_existential(ast: QueryAst) -> int:
    return max((v.index for v in ast.existentials), default=0)
