"""A tour of the query language and the exact answer oracle on a toy graph."""
from efoent.kg import KnowledgeGraph, Vocab
from efoent.oracle import answer_set, answer_set_naive, check_entailment
from efoent.query_graph import adjacency_mask, build_query_graph
from efoent.syntax import convert_to_lisp, ground, parse_efo, serialize_efo, tokenize

rows = [
    ("alice", "advises", "bob"),
    ("alice", "advises", "carol"),
    ("dave", "advises", "carol"),
    ("bob", "cites", "erin"),
    ("carol", "cites", "erin"),
    ("carol", "cites", "frank"),
    ("dave", "cites", "frank"),
]
entities, relations = Vocab(), Vocab()
kg = KnowledgeGraph([(entities.add(h), relations.add(r), entities.add(t)) for h, r, t in rows],
                    entities, relations)
E, R = kg.entities.id, kg.relations.id

# Who is cited by a student of alice, but not directly cited by dave?
query = "((r1(s1,e1))&(r2(e1,f)))&(!(r3(s2,f)))"
ast = parse_efo(query)
print("template :", serialize_efo(ast))
print("lisp     :", convert_to_lisp(ast))

grounded = ground(ast, {"s1": E("alice"), "s2": E("dave"),
                        "r1": R("advises"), "r2": R("cites"), "r3": R("cites")})
print("grounded :", serialize_efo(grounded))

answers = answer_set(kg, grounded)
print("answers  :", [kg.entities.name(a) for a in answers])
assert answers == answer_set_naive(kg, grounded)
print("frank entailed?", check_entailment(kg, grounded, E("frank")))

# The token sequence the model reads, with its query-graph attention mask
tokens = tokenize(grounded)
print("tokens   :", " ".join(t.symbol for t in tokens))
graph = build_query_graph(grounded)
print(graph.dump())
mask = adjacency_mask(tokens, graph)
print("mask density: %.2f" % mask.mean())
