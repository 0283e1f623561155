"""Filtered ranking, MRR over the ID/OOD grid, and report tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .templates import QUERY_TYPES

CELLS = ("ID(Q)/ID(K)", "ID(Q)/OOD(K)", "OOD(Q)/ID(K)", "OOD(Q)/OOD(K)", "All/ID(K)", "All/OOD(K)")
MISSING = "—"
RANKING_PROTOCOL = "filtered, ties averaged"


def rank_answer(scores, answer: int, exclude: Iterable[int] = ()) -> float:
    """Filtered rank of ``answer``: one plus the better-scored competitors, plus half the ties.

    Entities in ``exclude`` are not competitors.
    """
    scores = np.asarray(scores)
    exclude = set(int(e) for e in exclude)
    if answer in exclude:
        raise ValueError(f"answer {answer} is also in the exclusion set")
    keep = np.ones(scores.shape[0], dtype=bool)
    if exclude:
        keep[list(exclude)] = False
    keep[answer] = False
    s = scores[answer]
    rest = scores[keep]
    return 1.0 + float(np.count_nonzero(rest > s)) + 0.5 * float(np.count_nonzero(rest == s))


def filtered_ranks(scores, answers: Sequence[int], known: Iterable[int]) -> np.ndarray:
    """Ranks of each of ``answers`` with every entity in ``known`` removed from competition.

    Equivalent to ``rank_answer(scores, v, known - {v})`` for each ``v``.
    """
    scores = np.asarray(scores)
    answers = np.asarray(list(answers), dtype=np.int64)
    if answers.size == 0:
        return np.zeros(0)
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[list(known)] = False
    keep[answers] = False
    rest = np.sort(scores[keep])
    s = scores[answers]
    greater = rest.size - np.searchsorted(rest, s, side="right")
    equal = np.searchsorted(rest, s, side="right") - np.searchsorted(rest, s, side="left")
    return 1.0 + greater + 0.5 * equal


def query_mrr(scores, a_id: Sequence[int], a_ood: Sequence[int]) -> tuple[float | None, float | None]:
    """ID(K) and OOD(K) reciprocal-rank means of one query (None when the set is empty)."""
    known_id = set(a_id)
    id_mrr = float(np.mean(1.0 / filtered_ranks(scores, a_id, known_id))) if len(a_id) else None
    ood_mrr = None
    if len(a_ood):
        ood_mrr = float(np.mean(1.0 / filtered_ranks(scores, a_ood, known_id | set(a_ood))))
    return id_mrr, ood_mrr


@dataclass
class EvalReport:
    name: str
    per_type: dict[str, dict] = field(default_factory=dict)  # type -> {"id", "ood", "n_id", "n_ood"}
    meta: dict = field(default_factory=dict)

    @property
    def cells(self) -> dict[str, float | None]:
        groups = {
            "ID(Q)": [t for t in self.per_type if QUERY_TYPES[t].seen],
            "OOD(Q)": [t for t in self.per_type if not QUERY_TYPES[t].seen],
            "All": list(self.per_type),
        }
        out = {}
        for q, types in groups.items():
            for k, key in (("ID(K)", "id"), ("OOD(K)", "ood")):
                vals = [self.per_type[t][key] for t in types if self.per_type[t][key] is not None]
                out[f"{q}/{k}"] = float(np.mean(vals)) if vals else None
        return {c: out[c] for c in CELLS}

    def to_dict(self) -> dict:
        return {"name": self.name, "cells": self.cells, "per_type": self.per_type, "meta": self.meta}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(d["name"], {k: dict(v) for k, v in d["per_type"].items()}, dict(d.get("meta", {})))

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def evaluate_scores(name: str, type_names: Sequence[str], scores: np.ndarray,
                    a_ids: Sequence[Sequence[int]], a_oods: Sequence[Sequence[int]]) -> EvalReport:
    """Aggregate per-query reciprocal ranks into per-type MRR values."""
    acc: dict[str, dict[str, list]] = {}
    for t, s, ai, ao in zip(type_names, scores, a_ids, a_oods):
        i, o = query_mrr(s, ai, ao)
        slot = acc.setdefault(t, {"id": [], "ood": []})
        if i is not None:
            slot["id"].append(i)
        if o is not None:
            slot["ood"].append(o)
    per_type = {}
    for t in sorted(acc, key=lambda t: QUERY_TYPES[t].type_id):
        v = acc[t]
        per_type[t] = {
            "id": float(np.mean(v["id"])) if v["id"] else None,
            "ood": float(np.mean(v["ood"])) if v["ood"] else None,
            "n_id": len(v["id"]),
            "n_ood": len(v["ood"]),
        }
    return EvalReport(name, per_type, {"ranking": RANKING_PROTOCOL, "aggregation": "unweighted mean over types"})


def mrr_evaluate(model, samples, name: str = "model", chunk: int = 256) -> EvalReport:
    """Score every sample with ``model`` and build the ID/OOD report."""
    samples = list(samples)
    scores = model.scores([s.query for s in samples], chunk=chunk) if samples else np.zeros((0, 0))
    return evaluate_scores(
        name, [s.type_name for s in samples], scores, [s.a_id for s in samples], [s.a_ood for s in samples]
    )


def _fmt(v: float | None) -> str:
    return MISSING if v is None else f"{100.0 * v:.1f}"


def report_table(reports: Sequence[EvalReport], per_type: bool = False) -> str:
    """Text table of MRR% per report, one row per model."""
    if not reports:
        raise ValueError("no reports to tabulate")
    header = ["Model", *CELLS]
    rows = [[r.name, *(_fmt(v) for v in r.cells.values())] for r in reports]
    text = _layout(header, rows)
    if per_type:
        types = [t for t in QUERY_TYPES if any(t in r.per_type for r in reports)]
        header = ["Type", *(f"{r.name} {k}" for r in reports for k in ("ID(K)", "OOD(K)"))]
        rows = []
        for t in types:
            row = [t]
            for r in reports:
                v = r.per_type.get(t, {})
                row += [_fmt(v.get("id")), _fmt(v.get("ood"))]
            rows.append(row)
        text += "\n" + _layout(header, rows)
    return text


def _layout(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def random_rank_mrr(n_entities: int) -> float:
    """Expected reciprocal rank of a single answer under a uniformly random ranking."""
    return float(np.sum(1.0 / np.arange(1, n_entities + 1)) / n_entities)
