"""The 55 query types: 23 seen during training and 32 held out."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .syntax import QueryAst, parse_efo, tokenize

# name, mul, cyc, exi, neg, depth, formula
_SEEN = [
    ("1p", 0, 0, 0, 0, 1, "r1(s1,f)"),
    ("2p", 0, 0, 0, 0, 2, "(r1(s1,e1))&(r2(e1,f))"),
    ("3p", 0, 0, 0, 0, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))"),
    ("2i", 0, 0, 0, 0, 1, "(r1(s1,f))&(r2(s2,f))"),
    ("3i", 0, 0, 0, 0, 1, "(r1(s1,f))&(r2(s2,f))&(r3(s3,f))"),
    ("ip", 0, 0, 0, 0, 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))"),
    ("pi", 0, 0, 0, 0, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,f))"),
    ("2in", 0, 0, 0, 1, 1, "(r1(s1,f))&(!(r2(s2,f)))"),
    ("3in", 0, 0, 0, 1, 1, "(r1(s1,f))&(r2(s2,f))&(!(r3(s3,f)))"),
    ("inp", 0, 0, 0, 1, 2, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))"),
    ("pin", 0, 0, 0, 1, 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))"),
    ("pni", 0, 0, 0, 1, 2, "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))"),
    ("2u", 0, 0, 0, 0, 1, "(r1(s1,f))|(r2(s2,f))"),
    ("up", 0, 0, 0, 0, 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))"),
    ("2m", 1, 0, 0, 0, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e1,f))"),
    ("2nm", 1, 0, 0, 1, 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(e1,f)))"),
    ("3mp", 1, 0, 0, 0, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e1,e2))"),
    ("3pm", 1, 0, 0, 0, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(r4(e2,f))"),
    ("im", 1, 0, 0, 0, 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(e1,f))"),
    ("2il", 0, 0, 1, 0, 1, "(r1(s1,f))&(r2(e1,f))"),
    ("3il", 0, 0, 1, 0, 1, "(r1(s1,f))&(r2(s2,f))&(r3(e1,f))"),
    ("3c", 0, 1, 0, 0, 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))"),
    ("3cm", 1, 1, 0, 0, 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(r6(e1,f))"),
]

_UNSEEN = [
    ("2pi", 0, 0, 0, 0, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))"),
    ("2pu", 0, 0, 0, 0, 2, "((r1(s1,e1))&(r3(e1,f)))|((r2(s2,e2))&(r4(e2,f)))"),
    ("ui", 0, 0, 0, 0, 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,f))"),
    ("iu", 0, 0, 0, 0, 2, "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|(r4(s3,f))"),
    ("upi", 0, 0, 0, 0, 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))"),
    ("ipu", 0, 0, 0, 0, 2, "((r1(s1,e1))&(r2(s2,e1))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"),
    ("i2p", 0, 0, 0, 0, 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))"),
    ("u2p", 0, 0, 0, 0, 3, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"),
    ("2pin", 0, 0, 0, 1, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(!(r5(s3,f)))"),
    ("2pni", 0, 0, 0, 1, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))"),
    ("pn3i", 0, 0, 0, 1, 2, "(r1(s1,e1))&(!(r2(e1,f)))&(r3(s2,f))&(r4(s3,f))"),
    ("in2p", 0, 0, 0, 1, 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))"),
    ("inu", 0, 0, 0, 1, 2, "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|(r4(s3,f))"),
    ("inpu", 0, 0, 0, 1, 2, "((r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f)))|((r4(s3,e2))&(r5(e2,f)))"),
    ("upni", 0, 0, 0, 1, 2, "((r1(s1,e1))|(r2(s2,e1)))&(r3(e1,f))&(r4(s3,e2))&(!(r5(e2,f)))"),
    ("unpi", 0, 0, 0, 1, 2, "((r1(s1,e1))|(r2(s2,e1)))&(!(r3(e1,f)))&(r4(s3,e2))&(r5(e2,f))"),
    ("imp", 1, 0, 0, 0, 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"),
    ("ipm", 1, 0, 0, 0, 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,e2))&(r4(e2,f))&(r5(e2,f))"),
    ("3im", 1, 0, 0, 0, 2, "(r1(s1,e1))&(r2(s2,e1))&(r3(s3,e1))&(r4(e1,f))&(r5(e1,f))"),
    ("pil", 0, 0, 1, 0, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(e2,f))"),
    ("ilp", 0, 0, 1, 0, 2, "(r1(s1,e1))&(r2(e2,e1))&(r3(e1,f))"),
    ("p3il", 0, 0, 1, 0, 2, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e3,f))"),
    ("i3c", 0, 1, 0, 0, 3, "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))"),
    ("i3cm", 1, 1, 0, 0, 3,
     "(r1(s1,e1))&(r2(s2,e1))&(r3(e1,f))&(r4(s3,e2))&(r5(e2,f))&(r6(e1,e2))&(r7(e1,f))"),
    ("3inl", 0, 0, 1, 1, 1, "(r1(s1,f))&(!(r2(s2,f)))&(r3(e1,f))"),
    ("pinl", 0, 0, 1, 1, 2, "(r1(s1,e1))&(r2(e1,f))&(!(r3(s2,f)))&(r4(e2,f))"),
    ("inm", 1, 0, 0, 1, 2, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e1,f))"),
    ("inmp", 1, 0, 0, 1, 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,e2))&(r4(e2,f))&(r5(e1,e2))"),
    ("inpm", 1, 0, 0, 1, 3, "(r1(s1,e1))&(!(r2(s2,e1)))&(r3(e1,f))&(r4(e2,f))&(r5(e2,f))"),
    ("3nmp", 1, 0, 0, 1, 3, "(r1(s1,e1))&(r2(e1,e2))&(r3(e2,f))&(!(r4(e1,e2)))"),
    ("3cn", 0, 1, 0, 1, 3, "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(!(r4(e2,f)))&(r5(e1,e2))"),
    ("3cnm", 1, 1, 0, 1, 3,
     "(r1(s1,e1))&(r2(e1,f))&(r3(s2,e2))&(r4(e2,f))&(r5(e1,e2))&(!(r6(e1,f)))"),
]

# Lisp-like forms of the 25 tree-shaped types, as published.
LISP_FORMS = {
    "1p": "(p,(r1),(s1))",
    "2p": "(p,(r2),(p,(r1),(s1)))",
    "3p": "(p,(r3),(p,(r2),(p,(r1),(s1))))",
    "2i": "(i,(p,(r1),(s1)),(p,(r2),(s2)))",
    "3i": "(i,(p,(r1),(s1)),(p,(r2),(s2)),(p,(r3),(s3)))",
    "ip": "(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2))))",
    "pi": "(i,(p,(r2),(p,(r1),(s1))),(p,(r3),(s2)))",
    "2in": "(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))",
    "3in": "(i,(p,(r1),(s1)),(p,(r2),(s2)),(n,(p,(r3),(s3))))",
    "inp": "(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2)))))",
    "pin": "(i,(p,(r2),(p,(r1),(s1))),(n,(p,(r3),(s2))))",
    "2u": "(u,(p,(r1),(s1)),(p,(r2),(s2)))",
    "up": "(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2))))",
    "2pi": "(i,(p,(r2),(p,(r1),(s1))),(p,(r4),(p,(r3),(s2))))",
    "2pu": "(u,(p,(r3),(p,(r1),(s1))),(p,(r4),(p,(r2),(s2))))",
    "ui": "(i,(p,(r4),(s3)),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "iu": "(u,(p,(r4),(s3)),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "upi": "(i,(p,(r5),(p,(r4),(s3))),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "ipu": "(u,(p,(r5),(p,(r4),(s3))),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "i2p": "(p,(r4),(p,(r3),(i,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "u2p": "(p,(r4),(p,(r3),(u,(p,(r1),(s1)),(p,(r2),(s2)))))",
    "2pin": "(i,(i,(p,(r4),(p,(r3),(s2))),(p,(r2),(p,(r1),(s1)))),(n,(p,(r5),(s3))))",
    "in2p": "(p,(r4),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))",
    "inu": "(u,(p,(r4),(s3)),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))",
    "inpu": "(u,(p,(r5),(p,(r4),(s3))),(p,(r3),(i,(p,(r1),(s1)),(n,(p,(r2),(s2))))))",
}


@dataclass(frozen=True)
class QueryType:
    name: str
    mul: bool
    cyc: bool
    exi: bool
    neg: bool
    depth: int
    formula: str
    seen: bool
    type_id: int

    @property
    def template(self) -> QueryAst:
        return parse_efo(self.formula)

    @property
    def features(self) -> dict[str, bool]:
        return {"mul": self.mul, "cyc": self.cyc, "exi": self.exi, "neg": self.neg}

    @property
    def lisp(self) -> str | None:
        return LISP_FORMS.get(self.name)


def _build():
    out = {}
    for seen, rows in ((True, _SEEN), (False, _UNSEEN)):
        for name, mul, cyc, exi, neg, depth, formula in rows:
            out[name] = QueryType(name, bool(mul), bool(cyc), bool(exi), bool(neg), depth, formula, seen, len(out))
    return out


QUERY_TYPES: dict[str, QueryType] = _build()
SEEN_TYPES = tuple(n for n, q in QUERY_TYPES.items() if q.seen)
UNSEEN_TYPES = tuple(n for n, q in QUERY_TYPES.items() if not q.seen)


def get_type(name: str) -> QueryType:
    try:
        return QUERY_TYPES[name]
    except KeyError:
        raise KeyError(f"unknown query type {name!r}") from None


@lru_cache(maxsize=None)
def max_template_length() -> int:
    """Longest token sequence over every template (grounding keeps the length)."""
    return max(len(tokenize(q.template)) for q in QUERY_TYPES.values())
