"""Synthetic conversation corpora with controllable class signal.

Three modes, each balanced between the classes:

* ``lexical``: the two earliest responses carry class-typed wording (deny
  markers under rumors, support markers under non-rumors); later responses
  are neutral chatter. Because the signal sits in the earliest posts, a
  two-post timeline prefix already contains it.
* ``structural``: every event shares one fixed four-post script: identical
  texts, timestamps, and reply depths in both classes. Only the reply
  topology differs (the last two responders answer different parents), so
  the classes are separable through pairwise reply relations and through
  nothing else. A model blind to those relations sees byte-identical
  inputs for both classes.
* ``null``: neutral text everywhere and a balanced label assignment drawn
  independently of content; any classifier's held-out accuracy should
  hover near chance, and a constant predictor scores exactly one half.

Generation is deterministic: the same spec yields byte-identical events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .trees import LABELS, Event, parse_event

NEUTRAL_WORDS = (
    "people", "are", "talking", "about", "this", "online", "today", "thread",
    "reply", "update", "more", "info", "soon", "we", "will", "see", "what",
    "happens", "next", "interesting",
)
DENY_WORDS = ("fake", "false", "hoax", "doubtful", "fabricated", "wrong")
SUPPORT_WORDS = ("true", "confirmed", "real", "verified", "witnessed", "accurate")
TOPIC_WORDS = ("storm", "market", "election", "study", "outage", "accident",
               "discovery", "merger", "protest", "launch")

MODES = ("lexical", "structural", "null")


@dataclass(frozen=True)
class SynthSpec:
    mode: str
    n_events: int
    seed: int = 0
    min_posts: int = 4
    max_posts: int = 8
    signal_posts: int = 2  # lexical mode: how many of the earliest responses carry class-typed words
    vocab_size: int | None = None  # cap on distinct neutral filler words
    id_prefix: str = "ev"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_events < 2:
            raise ValueError("need at least two events")
        if not 1 <= self.min_posts <= self.max_posts:
            raise ValueError("bad posts-per-event range")
        if self.signal_posts < 1:
            raise ValueError("need at least one signal-carrying response")
        if self.vocab_size is not None and not 4 <= self.vocab_size <= len(NEUTRAL_WORDS):
            raise ValueError(f"vocab_size must lie in [4, {len(NEUTRAL_WORDS)}]")

    @property
    def neutral_pool(self) -> tuple[str, ...]:
        if self.vocab_size is None:
            return NEUTRAL_WORDS
        return NEUTRAL_WORDS[: self.vocab_size]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _words(rng: np.random.Generator, pool, n: int) -> list[str]:
    return [pool[int(i)] for i in rng.integers(0, len(pool), size=n)]


def _random_parents(rng: np.random.Generator, n_posts: int, max_children: int = 3) -> list[str | None]:
    """Random attachment; None means the claim. Branching capped per node."""
    child_counts: dict[str | None, int] = {None: 0}
    parents: list[str | None] = []
    for j in range(n_posts):
        open_nodes = [node for node, c in child_counts.items() if c < max_children]
        pick = open_nodes[int(rng.integers(len(open_nodes)))]
        parents.append(pick)
        child_counts[pick] += 1
        child_counts[f"p{j + 1}"] = 0
    return parents


def _lexical_event(rng: np.random.Generator, event_id: str, label: str,
                   post_range: tuple[int, int], signal_posts: int,
                   neutral: tuple[str, ...]) -> Event:
    n_posts = int(rng.integers(post_range[0], post_range[1] + 1))
    signal_pool = DENY_WORDS if label == "rumor" else SUPPORT_WORDS
    claim = f"breaking {_words(rng, TOPIC_WORDS, 1)[0]} " + " ".join(_words(rng, neutral, 3))
    parents = _random_parents(rng, n_posts)

    posts = []
    for j in range(n_posts):
        if j < signal_posts:  # the earliest responses carry the class signal
            words = _words(rng, signal_pool, 2) + _words(rng, neutral, 2)
        else:
            words = _words(rng, neutral, 4)
        posts.append({
            "id": f"p{j + 1}",
            "parent": parents[j] if parents[j] is not None else "c",
            "text": " ".join(words),
            "timestamp": j + 1,
        })
    return _build(event_id, label, claim, posts)


_SCRIPT_TEXTS = (
    "saw this earlier today",
    "anyone have more info",
    "here is what i heard",
    "waiting for an update",
)
_STRUCTURAL_CLAIM = "report about the storm spreading online"
# same posts, same times, same depths; only who-answers-whom differs
_STRUCTURAL_PARENTS = {
    "rumor": ("c", "c", "p1", "p2"),
    "non-rumor": ("c", "c", "p1", "p1"),
}


def _structural_event(event_id: str, label: str) -> Event:
    parents = _STRUCTURAL_PARENTS[label]
    posts = [
        {"id": f"p{j + 1}", "parent": parents[j], "text": _SCRIPT_TEXTS[j], "timestamp": j + 1}
        for j in range(4)
    ]
    return _build(event_id, label, _STRUCTURAL_CLAIM, posts)


def _null_event(rng: np.random.Generator, event_id: str, label: str,
                post_range: tuple[int, int], neutral: tuple[str, ...]) -> Event:
    n_posts = int(rng.integers(post_range[0], post_range[1] + 1))
    claim = " ".join(_words(rng, neutral, 5))
    parents = _random_parents(rng, n_posts)
    posts = [{
        "id": f"p{j + 1}",
        "parent": parents[j] if parents[j] is not None else "c",
        "text": " ".join(_words(rng, neutral, 4)),
        "timestamp": j + 1,
    } for j in range(n_posts)]
    return _build(event_id, label, claim, posts)


def _build(event_id: str, label: str, claim_text: str, posts: list[dict]) -> Event:
    record = json.dumps({
        "id": event_id,
        "label": label,
        "claim": {"id": "c", "text": claim_text, "timestamp": 0},
        "posts": posts,
    })
    return parse_event(record)


def generate_synthetic(spec: SynthSpec) -> list[Event]:
    """Deterministic corpus for one spec; labels alternate except in null mode."""
    rng = np.random.default_rng(spec.seed)
    post_range = (spec.min_posts, spec.max_posts)
    # balanced shuffled labels, untied from content
    half = spec.n_events // 2
    null_labels = np.array([0] * half + [1] * (spec.n_events - half))
    rng.shuffle(null_labels)
    events = []
    for i in range(spec.n_events):
        event_id = f"{spec.id_prefix}{i:05d}"
        if spec.mode == "null":
            label = LABELS[int(null_labels[i])]
            events.append(_null_event(rng, event_id, label, post_range, spec.neutral_pool))
        else:
            label = LABELS[i % 2]
            if spec.mode == "lexical":
                events.append(_lexical_event(rng, event_id, label, post_range,
                                             spec.signal_posts, spec.neutral_pool))
            else:
                events.append(_structural_event(event_id, label))
    return events


def corpus_texts(events) -> Iterator[str]:
    """Every text in the corpus, for vocabulary building."""
    for event in events:
        yield event.claim.text
        for post in event.posts:
            yield post.text
