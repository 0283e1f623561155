"""Split a synthetic graph, sample a small benchmark and look at what came out.

Run with an output directory argument to keep the files; otherwise a
temporary directory is used.
"""
import sys
import tempfile
from collections import Counter
from pathlib import Path

from efoent.kg import build_splits, random_graph
from efoent.sampler import Profile, build_dataset, read_queries
from efoent.templates import SEEN_TYPES, UNSEEN_TYPES

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())

kg = random_graph(200, 6, 1500, seed=1)
splits = build_splits(kg, seed=1)
print(f"train/valid/test edges: {len(splits.train.triples)}/{len(splits.valid.triples)}/{len(splits.test.triples)}")

# a handful of seen types to train on, a couple of unseen ones held out for test
profile = Profile.custom({
    "train": {"1p": "all", "2p": 200, "2i": 200, "2in": 100},
    "test": {"1p": 30, "2p": 30, "2i": 30, UNSEEN_TYPES[0]: 30, UNSEEN_TYPES[1]: 30},
})
manifest = build_dataset(splits, profile, out, seed=0)
for purpose, counts in manifest["counts"].items():
    print(purpose, dict(counts))

test = read_queries(out / "test.jsonl")
example = next(q for q in test if q.type_name == UNSEEN_TYPES[0])
print("\nan unseen-type test query:", example.query)
print("  answers reachable with training edges:", len(example.a_id))
print("  answers that need the held-out edges :", len(example.a_ood))

sizes = Counter()
for q in test:
    sizes[q.type_name] += len(q.a_ood)
print("\nmean OOD answers per test query:")
for t, total in sizes.items():
    n = sum(q.type_name == t for q in test)
    tag = "seen" if t in SEEN_TYPES else "unseen"
    print(f"  {t:>6} ({tag}): {total / n:.1f}")
print("files in", out, sorted(p.name for p in out.iterdir()))
