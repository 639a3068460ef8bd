"""Walk one conversation thread through parsing, ranking, and positions.

The hand-built event below has six replies: two directly under the claim
and two chains hanging off them. Each ranking strategy linearizes that
tree differently, which matters once a token budget starts cutting from
the back of the sequence.
"""
import json

from rumorkit import (
    Strategy,
    absolute_positions,
    build_tree,
    filter_by_checkpoint,
    parse_event,
    rank_responses,
)
from rumorkit.trees import relation_matrix

record = {
    "id": "walkthrough",
    "label": "rumor",
    "claim": {"id": "c", "text": "breaking: the dam has burst", "timestamp": 0},
    "posts": [
        {"id": "x1", "parent": "c", "text": "source?", "timestamp": 1},
        {"id": "x2", "parent": "x1", "text": "local radio says so", "timestamp": 2},
        {"id": "x3", "parent": "c", "text": "this is fake", "timestamp": 3},
        {"id": "x4", "parent": "x3", "text": "agreed, old photo", "timestamp": 4},
        {"id": "x5", "parent": "x2", "text": "radio retracted it", "timestamp": 5},
        {"id": "x6", "parent": "x4", "text": "from 2019 in fact", "timestamp": 6},
    ],
}

event = parse_event(json.dumps(record))
tree = build_tree(event)

print("replies per node:")
for node, kids in tree.children.items():
    if kids:
        print(f"  {node} -> {kids}")

print("\norderings:")
for strategy in Strategy:
    ranked = rank_responses(tree, strategy)
    print(f"  {strategy.value}: {' '.join(ranked.order)}")

print("\ndepths:", absolute_positions(tree))

# pairwise relations drive the attention bias; codes are enum values
nodes = ["c", "x1", "x2", "x3"]
print("\nrelation codes over", nodes)
for row_id, row in zip(nodes, relation_matrix(tree, nodes)):
    print(f"  {row_id}: {[r.name for r in row]}")

# what an early-detection checkpoint sees
cut = filter_by_checkpoint(event, "post-count", 2)
print("\nfirst 2 posts only:", [p.id for p in cut.posts])
cut = filter_by_checkpoint(event, "elapsed-seconds", 3)
print("within 3s of the claim:", [p.id for p in cut.posts])
