import json

import numpy as np
import pytest

from rumorkit.trees import parse_event


def model_to_float64(model):
    """Cast every model parameter in place for finite-difference work."""
    for param in model.parameters():
        param.tensor.data = param.data.astype(np.float64)
    model._template_cache = None
    return model


def make_event_record(event_id, claim_ts, posts, label="rumor", claim_text="a claim"):
    """posts: list of (id, parent, text, timestamp)."""
    return json.dumps(
        {
            "id": event_id,
            "label": label,
            "claim": {"id": "c", "text": claim_text, "timestamp": claim_ts},
            "posts": [
                {"id": pid, "parent": parent, "text": text, "timestamp": ts}
                for pid, parent, text, ts in posts
            ],
        }
    )


@pytest.fixture
def figure_tree_event():
    """The six-post worked example: c->x1, c->x3, x1->x2, x2->x5, x3->x4, x4->x6.

    Timestamps equal the post index.
    """
    record = make_event_record(
        "fig",
        0,
        [
            ("x1", "c", "first reply", 1),
            ("x2", "x1", "second reply", 2),
            ("x3", "c", "third reply", 3),
            ("x4", "x3", "fourth reply", 4),
            ("x5", "x2", "fifth reply", 5),
            ("x6", "x4", "sixth reply", 6),
        ],
    )
    return parse_event(record)
