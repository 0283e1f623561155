import numpy as np
import pytest

from efoent.kg import GraphSplit, KnowledgeGraph, Vocab
from efoent.syntax import ground


def graph_from_names(rows, entities=None, relations=None):
    ent = entities if entities is not None else Vocab()
    rel = relations if relations is not None else Vocab()
    ids = [(ent.add(h), rel.add(r), ent.add(t)) for h, r, t in rows]
    return KnowledgeGraph(ids, ent, rel)


def nested_split(train_rows, valid_rows, test_rows, names=()):
    ent, rel = Vocab(names), Vocab()
    for rows in (train_rows, valid_rows, test_rows):
        for h, r, t in rows:
            ent.add(h), rel.add(r), ent.add(t)
    tr = graph_from_names(train_rows, ent, rel)
    va = graph_from_names(list(train_rows) + list(valid_rows), ent, rel)
    te = graph_from_names(list(train_rows) + list(valid_rows) + list(test_rows), ent, rel)
    return GraphSplit(tr, va, te)


def density_graph(n_entities, n_relations, density, rng):
    """Each possible triple present independently with probability ``density``."""
    ent = Vocab(f"ent{i}" for i in range(n_entities))
    rel = Vocab(f"rel{i}" for i in range(n_relations))
    mask = rng.random((n_entities, n_relations, n_entities)) < density
    return KnowledgeGraph(np.argwhere(mask), ent, rel)


def random_grounding(template, kg, rng):
    binding = {}
    for a in template.atoms:
        if isinstance(a.relation, str):
            binding.setdefault(a.relation, int(rng.integers(kg.num_relations)))
    for c in template.constants:
        binding.setdefault(c.symbol, int(rng.integers(kg.num_entities)))
    return ground(template, binding)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
