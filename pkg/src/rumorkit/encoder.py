"""Prompt-based thread encoding with conversation-structure positions.

The model reads a claim and its ranked responses as one token sequence glued
to a cloze prompt, and fills the prompt's [MASK] slot with a hidden state
that downstream losses compare against class prototypes.

Two stacked encoders split the work:

* ``SyntaxEncoder``: token + sequential-position embeddings through plain
  self-attention layers. Frozen during classifier training, so its outputs
  are constants that callers may cache per event.
* ``SemanticEncoder``: the tunable upper layers. Attention here adds a
  learned key-side bias per pairwise thread relation (same post, parent,
  child, earlier/later sibling), and each content token carries an embedding
  of its clamped reply depth. Both tables start at zero, so an untrained
  model is bit-identical to one with structure signals disabled.

A parameter-free layer norm bridges the two stages; gradient-based response
perturbation is applied to the bridged content rows.

Sequence layout: [template tokens] ++ [claim tokens, SEP, post tokens, SEP,
...]. The two chunks are syntax-encoded separately, each with sequential
positions starting at zero. The claim is never truncated; responses are
packed greedily in ranked order into the remaining token budget and the
first post that does not fit whole is cut at token level. A SEP inherits
the thread node of the segment it terminates. Template tokens belong to no
node: their pairwise relation to everything is the null code and they
receive no depth embedding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ClaimTooLong, ShapeMismatch, TemplateError, VocabError
from .tensor import Parameter, Tensor
from .trees import Event, Relation, Strategy, build_tree, rank_responses, relation_matrix

PAD, UNK, MASK, SEP = "[PAD]", "[UNK]", "[MASK]", "[SEP]"
RESERVED = (PAD, UNK, MASK, SEP)

DEFAULT_TEMPLATE = "For this [MASK] story."

_TOKEN_RE = re.compile(r"\[(?:pad|unk|mask|sep)\]|[a-z0-9']+|[^\sa-z0-9']")
_SPECIAL_CANON = {t.lower(): t for t in RESERVED}


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation split; bracketed specials kept whole."""
    out = []
    for piece in _TOKEN_RE.findall(text.lower()):
        out.append(_SPECIAL_CANON.get(piece, piece))
    return out


class Vocab:
    """Token table; ids are stable line numbers, reserved tokens first."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise VocabError(f"vocabulary must start with {RESERVED}")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise VocabError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self._tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    @classmethod
    def from_texts(cls, texts: Iterable[str], min_count: int = 1, max_size: int | None = None) -> "Vocab":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                if tok not in RESERVED:
                    counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = [tok for tok, c in ranked if c >= min_count]
        if max_size is not None:
            kept = kept[: max(0, max_size - len(RESERVED))]
        return cls(list(RESERVED) + kept)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text().splitlines()
        if len(lines) < len(RESERVED):
            raise VocabError(f"{path}: vocabulary too short")
        return cls(lines)


class Template:
    """Cloze prompt with exactly one [MASK] slot."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        masks = [i for i, t in enumerate(self.tokens) if t == MASK]
        if len(masks) != 1:
            raise TemplateError(f"template needs exactly one {MASK}, found {len(masks)}: {text!r}")
        self.mask_position = masks[0]


@dataclass(frozen=True)
class EncoderConfig:
    """Model geometry. Defaults are desk-scale; production-size runs raise
    dim/layers/max_content_tokens (e.g. 512-token budgets with 12 layers)."""

    dim: int = 32
    heads: int = 4
    layers: int = 4
    syntax_layers: int = 2
    max_content_tokens: int = 128
    max_depth: int = 16
    template: str = DEFAULT_TEMPLATE
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 1 <= self.syntax_layers < self.layers:
            raise ValueError(f"syntax_layers must be in [1, layers): {self.syntax_layers} vs {self.layers}")
        if self.max_content_tokens < 2:
            raise ValueError("max_content_tokens must allow at least a claim token and SEP")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def semantic_layers(self) -> int:
        return self.layers - self.syntax_layers

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "heads": self.heads,
            "layers": self.layers,
            "syntax_layers": self.syntax_layers,
            "max_content_tokens": self.max_content_tokens,
            "max_depth": self.max_depth,
            "template": self.template,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EncoderConfig":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__ if k in payload})


@dataclass
class AssembledSequence:
    """Token-level view of one event, ready for the encoders."""

    content_ids: np.ndarray          # [n_cr] vocab ids
    node_ids: list[str]              # owning thread node per content token
    depths: np.ndarray               # clamped reply depth per content token
    relations: np.ndarray            # [n, n] relation codes over template+content
    mask_index: int                  # row of the [MASK] token in the full sequence
    perturb_mask: np.ndarray         # bool [n_cr]: response content tokens only
    order: list[str]                 # ranked post ids with at least one token included
    truncated_at: tuple[str, int] | None  # (post id, its tokens kept) when cut

    @property
    def total_length(self) -> int:
        return self.relations.shape[0]


def _init_matrix(rng: np.random.Generator, rows: int, cols: int,
                 std: float | None = None) -> np.ndarray:
    # fan-in scaling; at narrow widths a fixed small std starves the
    # attention mixing paths (they scale as std squared) and the mask row
    # then carries almost no content signal
    scale = rows ** -0.5 if std is None else std
    return rng.normal(0.0, scale, size=(rows, cols)).astype(np.float32)


class TransformerLayer:
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, prefix: str, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        hidden = 4 * dim
        p = prefix
        self.wq = Parameter(f"{p}.wq", _init_matrix(rng, dim, dim))
        self.wk = Parameter(f"{p}.wk", _init_matrix(rng, dim, dim))
        self.wv = Parameter(f"{p}.wv", _init_matrix(rng, dim, dim))
        self.wo = Parameter(f"{p}.wo", _init_matrix(rng, dim, dim))
        self.bq = Parameter(f"{p}.bq", np.zeros(dim, dtype=np.float32))
        self.bk = Parameter(f"{p}.bk", np.zeros(dim, dtype=np.float32))
        self.bv = Parameter(f"{p}.bv", np.zeros(dim, dtype=np.float32))
        self.bo = Parameter(f"{p}.bo", np.zeros(dim, dtype=np.float32))
        self.w1 = Parameter(f"{p}.w1", _init_matrix(rng, dim, hidden))
        self.b1 = Parameter(f"{p}.b1", np.zeros(hidden, dtype=np.float32))
        self.w2 = Parameter(f"{p}.w2", _init_matrix(rng, hidden, dim))
        self.b2 = Parameter(f"{p}.b2", np.zeros(dim, dtype=np.float32))
        self.ln1_g = Parameter(f"{p}.ln1.gain", np.ones(dim, dtype=np.float32))
        self.ln1_b = Parameter(f"{p}.ln1.bias", np.zeros(dim, dtype=np.float32))
        self.ln2_g = Parameter(f"{p}.ln2.gain", np.ones(dim, dtype=np.float32))
        self.ln2_b = Parameter(f"{p}.ln2.bias", np.zeros(dim, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo, self.bq, self.bk, self.bv, self.bo,
                self.w1, self.b1, self.w2, self.b2,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]

    def forward(self, x: Tensor, relations: np.ndarray | None = None,
                relation_tables: Sequence[Tensor] | None = None) -> Tensor:
        a = T.layer_norm(x, self.ln1_g.tensor, self.ln1_b.tensor)
        q = T.add(T.matmul(a, self.wq.tensor), self.bq.tensor)
        k = T.add(T.matmul(a, self.wk.tensor), self.bk.tensor)
        v = T.add(T.matmul(a, self.wv.tensor), self.bv.tensor)
        scale = 1.0 / float(np.sqrt(self.head_dim))
        contexts = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = T.slice_cols(q, lo, hi)
            kh = T.slice_cols(k, lo, hi)
            vh = T.slice_cols(v, lo, hi)
            logits = T.matmul(qh, T.transpose(kh))
            if relation_tables is not None:
                logits = T.add(logits, T.relation_bias(qh, relation_tables[h], relations))
            attn = T.softmax(T.scale(logits, scale), axis=-1)
            contexts.append(T.matmul(attn, vh))
        x = T.add(x, T.add(T.matmul(T.concat(contexts, axis=1), self.wo.tensor), self.bo.tensor))
        b = T.layer_norm(x, self.ln2_g.tensor, self.ln2_b.tensor)
        ff = T.add(T.matmul(T.gelu(T.add(T.matmul(b, self.w1.tensor), self.b1.tensor)), self.w2.tensor), self.b2.tensor)
        return T.add(x, ff)


class SyntaxEncoder:
    """Lower stack: token + position embeddings through plain attention."""

    def __init__(self, config: EncoderConfig, vocab_size: int, rng: np.random.Generator):
        self.config = config
        # unit-norm-ish rows: lookup tables scale with dim, not table height
        self.embeddings = Parameter(
            "syn.embeddings", _init_matrix(rng, vocab_size, config.dim, std=config.dim ** -0.5))
        self.positions = Parameter(
            "syn.positions", _init_matrix(rng, config.max_content_tokens, config.dim, std=config.dim ** -0.5))
        self.layers = [TransformerLayer(f"syn.layer{i}", config.dim, config.heads, rng)
                       for i in range(config.syntax_layers)]

    def parameters(self) -> list[Parameter]:
        out = [self.embeddings, self.positions]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()

    @property
    def frozen(self) -> bool:
        return all(p.frozen for p in self.parameters())

    def forward(self, token_ids: np.ndarray) -> Tensor:
        n = len(token_ids)
        if n > self.config.max_content_tokens:
            raise ShapeMismatch("syntax_forward", (n,), (self.config.max_content_tokens,))
        x = T.add(T.embedding_gather(self.embeddings.tensor, token_ids),
                  T.slice_rows(self.positions.tensor, 0, n))
        for layer in self.layers:
            x = layer.forward(x)
        return x


class SemanticEncoder:
    """Upper stack: relation-biased attention plus depth embeddings.

    Relation tables are per head, shared by every layer here, and applied on
    the key side only. Tables and the depth embedding start at zero.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.layers = [TransformerLayer(f"sem.layer{i}", config.dim, config.heads, rng)
                       for i in range(config.semantic_layers)]
        n_rel = len(Relation)
        self.relation_tables = [
            Parameter(f"sem.relation_table.head{h}", np.zeros((n_rel, config.head_dim), dtype=np.float32))
            for h in range(config.heads)
        ]
        self.depth_embeddings = Parameter(
            "sem.depth_embeddings", np.zeros((config.max_depth + 1, config.dim), dtype=np.float32))
        self.final_g = Parameter("sem.final.gain", np.ones(config.dim, dtype=np.float32))
        self.final_b = Parameter("sem.final.bias", np.zeros(config.dim, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend(self.relation_tables)
        out.append(self.depth_embeddings)
        out.extend([self.final_g, self.final_b])
        return out

    def forward(self, z: Tensor, relations: np.ndarray, use_relation_bias: bool = True) -> Tensor:
        tables = [p.tensor for p in self.relation_tables] if use_relation_bias else None
        for layer in self.layers:
            z = layer.forward(z, relations, tables)
        return T.layer_norm(z, self.final_g.tensor, self.final_b.tensor)


class PromptEncoder:
    """The full two-stage model plus sequence assembly."""

    def __init__(self, config: EncoderConfig, vocab: Vocab):
        self.config = config
        self.vocab = vocab
        self.template = Template(config.template)
        if len(self.template.tokens) > config.max_content_tokens:
            raise TemplateError("template longer than the position table")
        rng = np.random.default_rng(config.seed)
        self.syntax = SyntaxEncoder(config, len(vocab), rng)
        self.semantic = SemanticEncoder(config, rng)
        self._template_cache: np.ndarray | None = None
        self.forward_count = 0  # semantic passes, for instrumentation

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return self.syntax.parameters() + self.semantic.parameters()

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        owned = {p.name: p for p in self.parameters()}
        for name, value in arrays.items():
            if name not in owned:
                continue
            param = owned[name]
            if param.data.shape != value.shape:
                raise ShapeMismatch(f"load_state:{name}", param.data.shape, value.shape)
            param.tensor.data = value.astype(param.data.dtype)
        self._template_cache = None

    # -- sequence assembly ---------------------------------------------------

    def assemble(self, event: Event, strategy: Strategy = Strategy.CHRONOLOGICAL,
                 include_responses: bool = True) -> AssembledSequence:
        tree = build_tree(event)
        ranked = rank_responses(tree, strategy).order if include_responses else []
        posts = {p.id: p for p in event.posts}

        claim_tokens = tokenize(event.claim.text)
        budget = self.config.max_content_tokens
        if len(claim_tokens) + 1 > budget:
            raise ClaimTooLong(
                f"event {event.id!r}: claim needs {len(claim_tokens) + 1} tokens, budget is {budget}",
                event.id)

        tokens: list[str] = list(claim_tokens) + [SEP]
        node_ids: list[str] = [event.claim.id] * (len(claim_tokens) + 1)
        responders: list[bool] = [False] * (len(claim_tokens) + 1)
        order: list[str] = []
        truncated_at: tuple[str, int] | None = None

        remaining = budget - len(tokens)
        for post_id in ranked:
            post_tokens = tokenize(posts[post_id].text)
            need = len(post_tokens) + 1
            if remaining >= need:
                tokens.extend(post_tokens + [SEP])
                node_ids.extend([post_id] * need)
                responders.extend([True] * len(post_tokens) + [False])
                order.append(post_id)
                remaining -= need
                continue
            kept = min(remaining, len(post_tokens))
            if kept > 0:
                tokens.extend(post_tokens[:kept])
                node_ids.extend([post_id] * kept)
                responders.extend([True] * kept)
                order.append(post_id)
                remaining -= kept
            truncated_at = (post_id, kept)
            break

        n_template = len(self.template.tokens)
        n_content = len(tokens)
        n = n_template + n_content

        depths = np.array(
            [min(tree.depth[node], self.config.max_depth) for node in node_ids], dtype=np.int64)

        relations = np.full((n, n), Relation.NONE.value, dtype=np.int64)
        unique_nodes = list(dict.fromkeys(node_ids))
        node_rel = np.array(
            [[code.value for code in row] for row in relation_matrix(tree, unique_nodes)],
            dtype=np.int64)
        node_index = {node: i for i, node in enumerate(unique_nodes)}
        content_codes = node_rel[np.ix_([node_index[u] for u in node_ids],
                                        [node_index[u] for u in node_ids])]
        relations[n_template:, n_template:] = content_codes

        return AssembledSequence(
            content_ids=self.vocab.ids(tokens),
            node_ids=node_ids,
            depths=depths,
            relations=relations,
            mask_index=self.template.mask_position,
            perturb_mask=np.array(responders, dtype=bool),
            order=order,
            truncated_at=truncated_at,
        )

    # -- forward passes -------------------------------------------------------

    def template_encoding(self) -> np.ndarray:
        """Bridged syntax output for the prompt tokens; constant per model."""
        if self._template_cache is None:
            self._template_cache = self.content_encoding(self.vocab.ids(self.template.tokens))
        return self._template_cache

    def content_encoding(self, token_ids: np.ndarray) -> np.ndarray:
        """Syntax stack + parameter-free bridge norm, as a plain array."""
        with T.no_grad():
            x = self.syntax.forward(token_ids)
            return T.layer_norm(x).data

    def forward(self, x_template: np.ndarray, x_content: Tensor, seq: AssembledSequence,
                use_depth_embeddings: bool = True, use_relation_bias: bool = True) -> Tensor:
        """Semantic stack over bridged parts; returns all hidden rows [n, dim]."""
        self.forward_count += 1
        if use_depth_embeddings:
            z_content = T.add(x_content,
                              T.embedding_gather(self.semantic.depth_embeddings.tensor, seq.depths))
        else:
            z_content = x_content
        z = T.concat([Tensor(x_template), z_content], axis=0)
        return self.semantic.forward(z, seq.relations, use_relation_bias)

    def mask_hidden(self, hidden: Tensor, seq: AssembledSequence) -> Tensor:
        """[1, dim] row at the prompt's mask slot."""
        return T.slice_rows(hidden, seq.mask_index, seq.mask_index + 1)

    def mlm_logits(self, hidden_row: Tensor) -> Tensor:
        """Tied-embedding vocabulary logits for a hidden row."""
        return T.matmul(hidden_row, T.transpose(self.syntax.embeddings.tensor))

    def encode(self, event: Event, strategy: Strategy = Strategy.CHRONOLOGICAL,
               include_responses: bool = True, use_depth_embeddings: bool = True,
               use_relation_bias: bool = True) -> np.ndarray:
        """Whole pipeline for one event; returns the mask hidden state [dim]."""
        seq = self.assemble(event, strategy, include_responses)
        x_content = self.content_encoding(seq.content_ids)
        with T.no_grad():
            hidden = self.forward(self.template_encoding(), Tensor(x_content), seq,
                                  use_depth_embeddings, use_relation_bias)
            return self.mask_hidden(hidden, seq).data[0].copy()
