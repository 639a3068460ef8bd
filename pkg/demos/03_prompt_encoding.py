"""Inspect what the encoder actually sees for one event.

The model wraps the thread in a cloze prompt: template tokens (with one
mask slot) followed by the claim, a separator, and the ranked responses,
every content token tagged with its reply depth and its pairwise tree
relation to every other token. The mask token's final hidden row is the
event representation.
"""
import json

import numpy as np

from rumorkit import EncoderConfig, PromptEncoder, Strategy, Vocab, parse_event
from rumorkit.tensor import Tensor

record = {
    "id": "demo",
    "label": "rumor",
    "claim": {"id": "c", "text": "the dam has burst", "timestamp": 0},
    "posts": [
        {"id": "x1", "parent": "c", "text": "source for this", "timestamp": 1},
        {"id": "x2", "parent": "x1", "text": "looks fake to me", "timestamp": 2},
        {"id": "x3", "parent": "c", "text": "confirmed by radio", "timestamp": 3},
    ],
}
event = parse_event(json.dumps(record))

config = EncoderConfig(dim=32, heads=4, layers=4, syntax_layers=2)
vocab = Vocab.from_texts([event.claim.text] + [p.text for p in event.posts]
                         + [config.template])
model = PromptEncoder(config, vocab)

print("template:", config.template)
seq = model.assemble(event, Strategy.BREADTH_FIRST)

tokens = [vocab.token(i) for i in seq.content_ids]
print("\ncontent tokens and their owners:")
for tok, owner, depth in zip(tokens, seq.node_ids, seq.depths):
    print(f"  {tok:>10}  node={owner:<3} depth={depth}")

print("\nmask row index in the full sequence:", seq.mask_index)
print("perturbable rows (responses only):", int(seq.perturb_mask.sum()),
      "of", len(seq.content_ids))

n = seq.total_length
codes, counts = np.unique(seq.relations, return_counts=True)
print(f"relation matrix {n}x{n}, code histogram:",
      dict(zip(codes.tolist(), counts.tolist())))

# run it: frozen syntax stack, then the tunable semantic stack
x_template = model.template_encoding()
x_content = Tensor(model.content_encoding(seq.content_ids))
hidden = model.forward(x_template, x_content, seq)
row = model.mask_hidden(hidden, seq)
print("\nmask hidden state:", row.data.shape, "norm", float(np.linalg.norm(row.data)))

# both position channels start at zero so a fresh model ignores structure;
# training is what grows them into the representation
plain = model.forward(x_template, x_content, seq,
                      use_depth_embeddings=False, use_relation_bias=False)
delta = float(np.linalg.norm(model.mask_hidden(plain, seq).data - row.data))
print("\nposition-channel shift at init (tables are zero):", round(delta, 4))

rng = np.random.default_rng(1)
for p in model.semantic.relation_tables + [model.semantic.depth_embeddings]:
    p.tensor.data = rng.normal(0, 0.2, size=p.data.shape).astype(p.data.dtype)
structured = model.forward(x_template, x_content, seq)
delta = float(np.linalg.norm(model.mask_hidden(structured, seq).data - row.data))
print("after filling the position tables:", round(delta, 4))
