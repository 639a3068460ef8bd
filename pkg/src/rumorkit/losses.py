"""Training objectives and zero-shot class scoring.

Class decisions compare the prompt's mask hidden state against one learned
prototype vector per class by cosine similarity. Two losses shape that
space:

* prototype loss: softmax cross-entropy over cosine(h, prototype)/tau;
* supervised contrastive loss: every same-class pair in the batch is pulled
  together against all other pairs, averaged per anchor over its positives.
  Anchors whose class appears only once in the batch have no positives;
  they contribute zero and are excluded from the mean.

Both are cosine-based, hence invariant to the scale of h. The joint loss
mixes them with weight alpha on the prototype term.

The manual verbalizer is the prototype-free baseline: fill the mask from
tied-embedding vocabulary logits, pool each class's word-set probability
mass (sum or max), and renormalize across classes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyWordSet, ShapeMismatch
from .tensor import Parameter, Tensor
from .trees import LABELS

CLASSES = LABELS  # index 0 = non-rumor; ties resolve there

DEFAULT_LABEL_WORDS: dict[str, tuple[str, ...]] = {
    "non-rumor": ("true", "real", "fact"),
    "rumor": ("false", "fake", "rumor"),
}


class Prototypes:
    """One learnable vector per class, started as random unit rows."""

    def __init__(self, dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(len(CLASSES), dim))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        self.param = Parameter("proto.vectors", vecs.astype(np.float32))

    @property
    def tensor(self) -> Tensor:
        return self.param.tensor

    @property
    def data(self) -> np.ndarray:
        return self.param.data

    def warm_start(self, hidden: np.ndarray, labels: np.ndarray) -> None:
        """Reset each prototype to its class mean direction (optional)."""
        for c in range(len(CLASSES)):
            rows = hidden[labels == c]
            if len(rows) == 0:
                continue
            mean = rows.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12:
                self.param.tensor.data[c] = (mean / norm).astype(self.param.data.dtype)


def _check_batch(hidden: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if hidden.data.ndim != 2 or labels.shape != (hidden.shape[0],):
        raise ShapeMismatch("loss_batch", hidden.shape, labels.shape)
    return labels


def prototype_loss(hidden: Tensor, labels, prototypes: Prototypes, tau: float = 1.0) -> Tensor:
    """Mean cross-entropy of softmax over cosine(h, prototype) / tau."""
    labels = _check_batch(hidden, labels)
    b = hidden.shape[0]
    sims = T.scale(T.matmul(T.l2_normalize(hidden), T.transpose(T.l2_normalize(prototypes.tensor))), 1.0 / tau)
    log_probs = T.log_softmax(sims, axis=-1)
    one_hot = np.zeros((b, len(CLASSES)), dtype=np.float64)
    one_hot[np.arange(b), labels] = 1.0
    return T.scale(T.tensor_sum(T.mul(log_probs, Tensor(one_hot.astype(hidden.data.dtype)))), -1.0 / b)


def contrastive_loss(hidden: Tensor, labels, tau: float = 1.0) -> Tensor:
    """Per-anchor mean of -log(exp(S_ij) / sum_{j'!=i} exp(S_ij')) over positives j.

    S is pairwise cosine similarity over the batch divided by tau. A batch
    without any same-class pair is degenerate: warns and returns zero.
    """
    labels = _check_batch(hidden, labels)
    b = hidden.shape[0]
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(b, dtype=bool)
    positives = same & off_diag
    pos_counts = positives.sum(axis=1)
    valid = pos_counts > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("contrastive batch has no same-class pair; contributing zero loss")
        return Tensor(np.asarray(0.0, dtype=hidden.data.dtype))

    normed = T.l2_normalize(hidden)
    sims = T.scale(T.matmul(normed, T.transpose(normed)), 1.0 / tau)

    # loss = sum_i w_i * [log sum_{j'!=i} exp(S_ij')] - sum_ij W_ij * S_ij
    # with w_i = 1/n_valid on valid anchors, W_ij = positives_ij / (pos_i * n_valid)
    exp_sims = T.exp(sims)
    masked = T.mul(exp_sims, Tensor(off_diag.astype(hidden.data.dtype)))
    row_denom = T.matmul(masked, Tensor(np.ones((b, 1), dtype=hidden.data.dtype)))
    log_denom = T.log(row_denom)

    w_anchor = np.where(valid, 1.0 / n_valid, 0.0).astype(hidden.data.dtype)
    w_pairs = np.zeros((b, b), dtype=np.float64)
    w_pairs[valid] = positives[valid] / (pos_counts[valid, None] * n_valid)

    denom_term = T.tensor_sum(T.mul(log_denom, Tensor(w_anchor[:, None])))
    align_term = T.tensor_sum(T.mul(sims, Tensor(w_pairs.astype(hidden.data.dtype))))
    return T.sub(denom_term, align_term)


@dataclass
class LossBreakdown:
    total: float
    prototype: float
    contrastive: float


def joint_loss(hidden: Tensor, labels, prototypes: Prototypes, tau: float = 1.0,
               alpha: float = 0.5) -> tuple[Tensor, LossBreakdown]:
    """alpha * prototype loss + (1 - alpha) * contrastive loss."""
    proto = prototype_loss(hidden, labels, prototypes, tau)
    contrast = contrastive_loss(hidden, labels, tau)
    total = T.add(T.scale(proto, alpha), T.scale(contrast, 1.0 - alpha))
    return total, LossBreakdown(total=total.item(), prototype=proto.item(), contrastive=contrast.item())


def class_scores(hidden: np.ndarray, prototype_vectors: np.ndarray) -> np.ndarray:
    """Cosine similarity of one hidden vector to each class prototype."""
    h = np.asarray(hidden, dtype=np.float64)
    p = np.asarray(prototype_vectors, dtype=np.float64)
    hn = np.linalg.norm(h)
    pn = np.linalg.norm(p, axis=1)
    if hn < 1e-12 or (pn < 1e-12).any():
        raise ValueError("zero-norm vector in class scoring")
    return (p @ h) / (pn * hn)


def predict(hidden: np.ndarray, prototype_vectors: np.ndarray) -> int:
    """Class index with the highest cosine; exact ties go to non-rumor."""
    return int(np.argmax(class_scores(hidden, prototype_vectors)))


def resolve_word_sets(word_sets: Mapping[str, Sequence[str]], vocab) -> dict[str, list[int]]:
    """Map label words to vocabulary ids, dropping out-of-vocabulary words."""
    unk = vocab.id("[UNK]")
    resolved: dict[str, list[int]] = {}
    for label in CLASSES:
        words = word_sets.get(label, ())
        ids = [vocab.id(w) for w in words]
        ids = [i for i in ids if i != unk]
        if not ids:
            raise EmptyWordSet(f"no in-vocabulary words for class {label!r}")
        resolved[label] = ids
    return resolved


def verbalizer_scores(mlm_logits: np.ndarray, word_ids: Mapping[str, Sequence[int]],
                      aggregate: str = "sum") -> np.ndarray:
    """Class probabilities from vocabulary logits via label-word pooling."""
    if aggregate not in ("sum", "max"):
        raise ValueError(f"unknown aggregator {aggregate!r}")
    logits = np.asarray(mlm_logits, dtype=np.float64).reshape(-1)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    masses = np.array([
        probs[list(word_ids[label])].sum() if aggregate == "sum" else probs[list(word_ids[label])].max()
        for label in CLASSES
    ])
    return masses / masses.sum()


def verbalizer_loss(mlm_logits: Tensor, label: int, word_ids: Mapping[str, Sequence[int]]) -> Tensor:
    """Cross-entropy on renormalized summed word-set mass (trains the manual
    verbalizer path; the sum aggregator keeps it differentiable)."""
    vocab_size = mlm_logits.shape[-1]
    probs = T.softmax(mlm_logits, axis=-1)  # [1, V]
    select = np.zeros((vocab_size, len(CLASSES)), dtype=np.float64)
    for c, name in enumerate(CLASSES):
        select[list(word_ids[name]), c] = 1.0
    masses = T.matmul(probs, Tensor(select.astype(probs.data.dtype)))  # [1, 2]
    log_mass = T.log_softmax(T.log(masses), axis=-1)  # renormalize across classes
    pick = np.zeros((1, len(CLASSES)), dtype=np.float64)
    pick[0, label] = 1.0
    return T.scale(T.tensor_sum(T.mul(log_mass, Tensor(pick.astype(probs.data.dtype)))), -1.0)
