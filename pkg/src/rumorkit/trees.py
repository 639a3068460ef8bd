"""Propagation trees: event parsing, response rankings, and tree positions.

An *event* is a claim post plus the reply posts that answer it; the reply-to
edges form a tree rooted at the claim. This module owns the JSONL event
format, tree validation, the four response rankings (chronological, inverted,
depth-first, breadth-first), absolute depths, pairwise tree relations, the
early-detection checkpoint filter, and corpus statistics.

Event JSONL format (one object per line, UTF-8, LF):

    {"id": "...", "label": "rumor" | "non-rumor" | null,
     "claim": {"id": "...", "text": "...", "timestamp": <int epoch seconds>},
     "posts": [{"id": "...", "parent": "...", "text": "...", "timestamp": <int>}]}

A post's ``parent`` may be the claim id or another post id; a missing/null
``parent`` also means the post replies directly to the claim.

All functions here are pure: they never mutate their inputs.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Iterator

from .errors import (
    BadTimestamp,
    CycleDetected,
    DuplicateId,
    EventDataError,
    MissingClaim,
    UnknownNode,
    UnknownParent,
)

LABELS = ("non-rumor", "rumor")


@dataclass(frozen=True)
class Post:
    """One microblog post. ``parent_id`` is None for direct replies to the claim."""

    id: str
    text: str
    timestamp: int
    parent_id: str | None = None


@dataclass(frozen=True)
class Event:
    """A claim, its optional veracity label, and its reply posts."""

    id: str
    label: str | None
    claim: Post
    posts: tuple[Post, ...]

    def post_ids(self) -> list[str]:
        return [p.id for p in self.posts]


class Strategy(str, Enum):
    """Response ranking strategies."""

    CHRONOLOGICAL = "cho"
    INVERTED = "inv"
    DEPTH_FIRST = "dep"
    BREADTH_FIRST = "bre"


class Relation(Enum):
    """Pairwise tree relation of node j seen from node i.

    +/- encodes whether j comes earlier/later than i in time
    (timestamp order, ties broken by id).
    """

    NONE = 0
    ITSELF = 1
    PARENT_PLUS = 2
    CHILDREN_MINUS = 3
    SIBLINGS_PLUS = 4
    SIBLINGS_MINUS = 5


N_RELATIONS = len(Relation)


@dataclass
class PropagationTree:
    """Reply tree of one event: adjacency, depths, and node lookup."""

    root: str
    children: dict[str, list[str]]  # node id -> child ids, (timestamp, id) order
    depth: dict[str, int]  # node id -> distance from the claim
    nodes: dict[str, Post]  # node id -> post (claim included)
    parent: dict[str, str | None]  # node id -> parent id (claim -> None)


@dataclass
class RankedThread:
    """An ordering of a tree's responsive posts under one strategy."""

    strategy: Strategy
    order: list[str]
    truncated_at: tuple[str, int] | None = None  # (post id, token offset)


@dataclass
class DatasetStats:
    """Corpus-level statistics over a list of events."""

    events: int = 0
    nodes: int = 0
    rumors: int = 0
    non_rumors: int = 0
    avg_time_span_hours: float = 0.0
    avg_depth: float = 0.0


def _time_key(post: Post) -> tuple[int, str]:
    return (post.timestamp, post.id)


def _check_timestamp(value, owner_id: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise BadTimestamp(f"post {owner_id!r}: timestamp must be an integer, got {value!r}", owner_id)
    return value


def parse_event(json_record: str) -> Event:
    """Parse and validate one JSONL event record.

    Raises MissingClaim, BadTimestamp, DuplicateId, UnknownParent, or
    CycleDetected; each error names the offending id.
    """
    record = json.loads(json_record)
    event_id = str(record.get("id", "<missing id>"))

    claim_rec = record.get("claim")
    if not isinstance(claim_rec, dict) or "id" not in claim_rec:
        raise MissingClaim(f"event {event_id!r} has no claim", event_id)
    claim = Post(
        id=str(claim_rec["id"]),
        text=str(claim_rec.get("text", "")),
        timestamp=_check_timestamp(claim_rec.get("timestamp"), str(claim_rec["id"])),
    )

    label = record.get("label")
    if label is not None and label not in LABELS:
        raise EventDataError(f"event {event_id!r}: unknown label {label!r}", event_id)

    posts: list[Post] = []
    seen = {claim.id}
    for post_rec in record.get("posts", []):
        pid = str(post_rec["id"])
        if pid in seen:
            raise DuplicateId(f"event {event_id!r}: duplicate post id {pid!r}", pid)
        seen.add(pid)
        parent = post_rec.get("parent")
        parent_id = None if parent is None or str(parent) == claim.id else str(parent)
        posts.append(
            Post(
                id=pid,
                text=str(post_rec.get("text", "")),
                timestamp=_check_timestamp(post_rec.get("timestamp"), pid),
                parent_id=parent_id,
            )
        )

    event = Event(id=event_id, label=label, claim=claim, posts=tuple(posts))
    _validate_reply_graph(event)
    return event


def _validate_reply_graph(event: Event) -> None:
    """Check that reply edges form a single tree rooted at the claim."""
    ids = {p.id for p in event.posts}
    parent_of = {p.id: (p.parent_id if p.parent_id is not None else event.claim.id) for p in event.posts}

    for post in event.posts:
        parent = parent_of[post.id]
        if parent != event.claim.id and parent not in ids:
            raise UnknownParent(f"post {post.id!r} replies to unknown id {parent!r}", post.id)

    # Walk each post up to the claim; a revisit along one walk is a cycle.
    resolved: set[str] = set()
    for post in event.posts:
        trail: list[str] = []
        on_trail: set[str] = set()
        node = post.id
        while node != event.claim.id and node not in resolved:
            if node in on_trail:
                raise CycleDetected(f"post {node!r} is part of a reply cycle", node)
            on_trail.add(node)
            trail.append(node)
            node = parent_of[node]
        resolved.update(trail)


def serialize_event(event: Event) -> str:
    """Inverse of parse_event; emits one JSON line (no trailing newline)."""
    record = {
        "id": event.id,
        "label": event.label,
        "claim": {"id": event.claim.id, "text": event.claim.text, "timestamp": event.claim.timestamp},
        "posts": [
            {
                "id": p.id,
                "parent": p.parent_id if p.parent_id is not None else event.claim.id,
                "text": p.text,
                "timestamp": p.timestamp,
            }
            for p in event.posts
        ],
    }
    return json.dumps(record, ensure_ascii=False)


def read_events(path) -> list[Event]:
    """Load all events from a JSONL file."""
    return list(iter_events(path))


def iter_events(path) -> Iterator[Event]:
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield parse_event(line)


def write_events(path, events: Iterable[Event]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for event in events:
            handle.write(serialize_event(event) + "\n")


def build_tree(event: Event) -> PropagationTree:
    """Build the propagation tree; children ordered by (timestamp, id)."""
    nodes = {event.claim.id: event.claim}
    nodes.update({p.id: p for p in event.posts})

    parent: dict[str, str | None] = {event.claim.id: None}
    children: dict[str, list[str]] = {event.claim.id: []}
    for post in event.posts:
        parent[post.id] = post.parent_id if post.parent_id is not None else event.claim.id
        children[post.id] = []
    for post in event.posts:
        children[parent[post.id]].append(post.id)
        if post.timestamp < nodes[parent[post.id]].timestamp:
            warnings.warn(
                f"post {post.id!r} predates its parent {parent[post.id]!r}; "
                "keeping the structural parent relation",
                stacklevel=2,
            )
    for child_ids in children.values():
        child_ids.sort(key=lambda pid: _time_key(nodes[pid]))

    depth = {event.claim.id: 0}
    queue = deque([event.claim.id])
    while queue:
        node = queue.popleft()
        for child in children[node]:
            depth[child] = depth[node] + 1
            queue.append(child)

    return PropagationTree(root=event.claim.id, children=children, depth=depth, nodes=nodes, parent=parent)


def rank_responses(tree: PropagationTree, strategy: Strategy | str) -> RankedThread:
    """Order the responsive posts (claim excluded) under one strategy."""
    strategy = Strategy(strategy)
    post_ids = [pid for pid in tree.nodes if pid != tree.root]

    if strategy is Strategy.CHRONOLOGICAL:
        order = sorted(post_ids, key=lambda pid: _time_key(tree.nodes[pid]))
    elif strategy is Strategy.INVERTED:
        order = list(reversed(sorted(post_ids, key=lambda pid: _time_key(tree.nodes[pid]))))
    elif strategy is Strategy.DEPTH_FIRST:
        order = []
        stack = list(reversed(tree.children[tree.root]))
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(tree.children[node]))
    else:  # breadth-first
        order = []
        queue = deque(tree.children[tree.root])
        while queue:
            node = queue.popleft()
            order.append(node)
            queue.extend(tree.children[node])

    return RankedThread(strategy=strategy, order=order)


def absolute_positions(tree: PropagationTree) -> dict[str, int]:
    """Depth of every responsive post (the claim is implicitly 0)."""
    return {pid: d for pid, d in tree.depth.items() if pid != tree.root}


def relative_relation(tree: PropagationTree, i: str, j: str) -> Relation:
    """Tree relation of node j relative to node i (claim allowed for either)."""
    for node in (i, j):
        if node not in tree.nodes:
            raise UnknownNode(f"node {node!r} is not part of the tree", node)
    if i == j:
        return Relation.ITSELF
    if tree.parent[i] == j:
        return Relation.PARENT_PLUS
    if tree.parent[j] == i:
        return Relation.CHILDREN_MINUS
    if tree.parent[i] is not None and tree.parent[i] == tree.parent[j]:
        if _time_key(tree.nodes[j]) < _time_key(tree.nodes[i]):
            return Relation.SIBLINGS_PLUS
        return Relation.SIBLINGS_MINUS
    return Relation.NONE


def relation_matrix(tree: PropagationTree, node_ids: list[str]) -> list[list[Relation]]:
    """Pairwise relations over the given nodes, as a nested list."""
    return [[relative_relation(tree, i, j) for j in node_ids] for i in node_ids]


def filter_by_checkpoint(event: Event, kind: str, value: int) -> Event:
    """Restrict an event to the content visible at an early-detection checkpoint.

    kind="post-count" keeps the `value` earliest posts by (timestamp, id);
    kind="elapsed-seconds" keeps posts within `value` seconds of the claim.
    Retained posts whose parent was dropped are re-parented to their nearest
    retained ancestor (the claim at worst).
    """
    if value < 0:
        raise ValueError(f"checkpoint value must be >= 0, got {value}")
    if kind == "post-count":
        chronological = sorted(event.posts, key=_time_key)
        kept = {p.id for p in chronological[:value]}
    elif kind == "elapsed-seconds":
        kept = {p.id for p in event.posts if p.timestamp - event.claim.timestamp <= value}
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")

    parent_of = {p.id: (p.parent_id if p.parent_id is not None else event.claim.id) for p in event.posts}

    def nearest_kept_ancestor(pid: str) -> str | None:
        node = parent_of[pid]
        while node != event.claim.id and node not in kept:
            node = parent_of[node]
        return None if node == event.claim.id else node

    posts = tuple(
        replace(p, parent_id=nearest_kept_ancestor(p.id)) for p in event.posts if p.id in kept
    )
    return replace(event, posts=posts)


def dataset_stats(events: list[Event]) -> DatasetStats:
    """Aggregate counts, average time span (hours), and average max depth."""
    stats = DatasetStats(events=len(events))
    if not events:
        return stats
    span_total = 0.0
    depth_total = 0.0
    for event in events:
        stats.nodes += 1 + len(event.posts)
        if event.label == "rumor":
            stats.rumors += 1
        elif event.label == "non-rumor":
            stats.non_rumors += 1
        if event.posts:
            span_total += max(p.timestamp for p in event.posts) - event.claim.timestamp
            depth_total += max(build_tree(event).depth.values())
    stats.avg_time_span_hours = span_total / len(events) / 3600.0
    stats.avg_depth = depth_total / len(events)
    return stats
