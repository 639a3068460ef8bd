"""Classifier training: optimizer, response perturbation, and the epoch loop.

The syntax stack is frozen before training, so its output for each event is
computed once and cached; every step re-wraps the cached rows in fresh leaf
tensors. Each step with perturbation enabled runs two semantic passes:

1. forward on clean content, backward only to read the content gradient
   (parameter gradients from this pass are discarded);
2. response tokens are pushed epsilon along their normalized gradient rows,
   forward again, and the optimizer steps on the mean of both losses.

Early stopping watches the held-out macro-F1: training stops once the best
epoch is `patience` epochs behind, and the best epoch's weights are
restored. The held-out split defaults to a seeded fraction of the training
events; callers may instead pass explicit dev events (for protocols that
peek at target-domain labels, see the `--dev-from-target` CLI flag).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .encoder import MASK, AssembledSequence, PromptEncoder, tokenize
from .errors import EmptyDataset, NonFiniteLoss, SingleClassDataset
from .losses import (
    CLASSES,
    DEFAULT_LABEL_WORDS,
    LossBreakdown,
    Prototypes,
    class_scores,
    contrastive_loss,
    joint_loss,
    resolve_word_sets,
    verbalizer_loss,
)
from .evaluation import macro_f1
from .tensor import Parameter, Tensor
from .trees import Event, Strategy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 3e-4
    weight_decay: float = 0.01
    tau: float = 1.0
    alpha: float = 0.5
    epsilon: float = 0.5
    patience: int = 3
    dev_fraction: float = 0.1
    seed: int = 0
    strategy: str = "cho"
    use_responses: bool = True
    use_depth_embeddings: bool = True
    use_relation_bias: bool = True
    use_perturbation: bool = True
    use_prototype_verbalizer: bool = True
    warm_start_prototypes: bool = False
    warmup_steps: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "TrainConfig":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__ if k in payload})


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay.

    Frozen parameters and parameters without gradients are skipped; weight
    decay is applied directly to the weights, not through the moments.
    """

    def __init__(self, params: Sequence[Parameter], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            g = p.grad
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.tensor.data = p.data - self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def perturb_rows(x: Tensor, row_mask: np.ndarray, epsilon: float) -> np.ndarray:
    """Push masked rows epsilon along their unit gradient; others untouched.

    Rows whose gradient is exactly zero stay put (no direction to follow).
    """
    if x.grad is None:
        return x.data.copy()
    out = x.data.copy()
    norms = np.linalg.norm(x.grad, axis=-1)
    move = np.asarray(row_mask, dtype=bool) & (norms > 0)
    if move.any():
        out[move] += (epsilon * x.grad[move] / norms[move, None]).astype(out.dtype)
    return out


@dataclass
class EncodedEvent:
    """Frozen-stack output and assembly metadata, cached once per event."""

    event_id: str
    label_idx: int
    x_content: np.ndarray
    seq: AssembledSequence


def build_cache(model: PromptEncoder, events: Sequence[Event], cfg: TrainConfig) -> list[EncodedEvent]:
    items = []
    for event in events:
        seq = model.assemble(event, Strategy(cfg.strategy), cfg.use_responses)
        items.append(EncodedEvent(
            event_id=event.id,
            label_idx=CLASSES.index(event.label),
            x_content=model.content_encoding(seq.content_ids),
            seq=seq,
        ))
    return items


@dataclass
class StepStats:
    loss: float
    loss_clean: float
    loss_perturbed: float | None
    breakdown: LossBreakdown


def _batch_rows(model: PromptEncoder, x_template: np.ndarray, batch: Sequence[EncodedEvent],
                contents: Sequence[Tensor], cfg: TrainConfig) -> Tensor:
    rows = []
    for item, x_cr in zip(batch, contents):
        hidden = model.forward(x_template, x_cr, item.seq,
                               cfg.use_depth_embeddings, cfg.use_relation_bias)
        rows.append(model.mask_hidden(hidden, item.seq))
    return T.concat(rows, axis=0)


def _objective(model: PromptEncoder, prototypes: Prototypes, hidden: Tensor,
               labels: np.ndarray, cfg: TrainConfig,
               word_ids: Mapping[str, Sequence[int]] | None) -> tuple[Tensor, LossBreakdown]:
    if cfg.use_prototype_verbalizer:
        return joint_loss(hidden, labels, prototypes, cfg.tau, cfg.alpha)
    # manual-verbalizer route: cloze word-mass cross-entropy per event,
    # mixed with the same contrastive term
    ce_terms = []
    for i, label in enumerate(labels):
        logits = model.mlm_logits(T.slice_rows(hidden, i, i + 1))
        ce_terms.append(verbalizer_loss(logits, int(label), word_ids))
    ce = _mean_scalars(ce_terms)
    contrast = contrastive_loss(hidden, labels, cfg.tau)
    total = T.add(T.scale(ce, cfg.alpha), T.scale(contrast, 1.0 - cfg.alpha))
    return total, LossBreakdown(total=total.item(), prototype=ce.item(), contrastive=contrast.item())


def _mean_scalars(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))


def _require_finite(value: float, batch_tag: str | None) -> None:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss {value!r}", batch_tag)


def train_step(model: PromptEncoder, prototypes: Prototypes, batch: Sequence[EncodedEvent],
               optimizer: AdamW, cfg: TrainConfig,
               word_ids: Mapping[str, Sequence[int]] | None = None,
               batch_tag: str | None = None) -> StepStats:
    """One optimizer update; two semantic passes per event when perturbing."""
    x_template = model.template_encoding()
    labels = np.array([item.label_idx for item in batch], dtype=np.int64)

    contents = [Tensor(item.x_content, requires_grad=cfg.use_perturbation) for item in batch]
    hidden = _batch_rows(model, x_template, batch, contents, cfg)
    loss_clean, parts = _objective(model, prototypes, hidden, labels, cfg, word_ids)
    _require_finite(loss_clean.item(), batch_tag)

    loss_perturbed = None
    if cfg.use_perturbation:
        loss_clean.backward()
        optimizer.zero_grad()  # pass-1 parameter gradients are not used
        perturbed = [Tensor(perturb_rows(x, item.seq.perturb_mask, cfg.epsilon))
                     for item, x in zip(batch, contents)]
        hidden2 = _batch_rows(model, x_template, batch, perturbed, cfg)
        loss_two, parts2 = _objective(model, prototypes, hidden2, labels, cfg, word_ids)
        _require_finite(loss_two.item(), batch_tag)
        loss_perturbed = loss_two.item()
        total = T.scale(T.add(loss_clean, loss_two), 0.5)
    else:
        total = loss_clean

    total.backward()
    optimizer.step()
    optimizer.zero_grad()
    return StepStats(loss=total.item(), loss_clean=loss_clean.item(),
                     loss_perturbed=loss_perturbed, breakdown=parts)


# ---------------------------------------------------------------------------
# data splitting and the epoch loop
# ---------------------------------------------------------------------------

def split_dev(events: Sequence[Event], fraction: float, seed: int) -> tuple[list[Event], list[Event]]:
    """Seeded shuffle, then carve the dev slice off the front."""
    if fraction <= 0:
        return list(events), []
    order = np.random.default_rng(seed).permutation(len(events))
    n_dev = max(1, int(round(fraction * len(events))))
    dev_idx = set(order[:n_dev].tolist())
    train = [e for i, e in enumerate(events) if i not in dev_idx]
    dev = [events[i] for i in sorted(dev_idx)]
    return train, dev


def _validate_labels(events: Sequence[Event], where: str) -> None:
    if not events:
        raise EmptyDataset(f"no events in {where}")
    labels = {e.label for e in events}
    if len(labels) < 2:
        raise SingleClassDataset(f"{where} contains only {labels.pop()!r} events")


def _dev_macro_f1(model: PromptEncoder, prototypes: Prototypes,
                  cache: Sequence[EncodedEvent], cfg: TrainConfig) -> float:
    x_template = model.template_encoding()
    true_idx, pred_idx = [], []
    with T.no_grad():
        for item in cache:
            hidden = model.forward(x_template, Tensor(item.x_content), item.seq,
                                   cfg.use_depth_embeddings, cfg.use_relation_bias)
            row = model.mask_hidden(hidden, item.seq).data[0]
            pred_idx.append(int(np.argmax(class_scores(row, prototypes.data))))
            true_idx.append(item.label_idx)
    return macro_f1(true_idx, pred_idx)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    prototype_loss: float
    contrastive_loss: float
    dev_macro_f1: float


@dataclass
class TrainResult:
    best_epoch: int
    stopped_epoch: int
    best_dev_f1: float
    history: list[EpochStats] = field(default_factory=list)


def train(model: PromptEncoder, prototypes: Prototypes, events: Sequence[Event],
          cfg: TrainConfig, dev_events: Sequence[Event] | None = None) -> TrainResult:
    """Fit the semantic stack and prototypes; returns the stopping record.

    The model is left holding the best epoch's weights.
    """
    if dev_events is None:
        train_events, dev_events = split_dev(events, cfg.dev_fraction, cfg.seed)
    else:
        train_events = list(events)
        dev_events = list(dev_events)
    _validate_labels(train_events, "training split")
    if not dev_events:
        warnings.warn("no dev events; early stopping disabled, last epoch kept")

    if cfg.warmup_steps > 0 and not model.syntax.frozen:
        warmup_syntax(model, train_events, cfg.warmup_steps, cfg.seed)
    model.syntax.freeze()

    train_cache = build_cache(model, train_events, cfg)
    dev_cache = build_cache(model, dev_events, cfg)

    if cfg.warm_start_prototypes and cfg.use_prototype_verbalizer:
        _warm_start(model, prototypes, train_cache, cfg)

    trainable = model.trainable_parameters() + [prototypes.param]
    optimizer = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
    word_ids = None
    if not cfg.use_prototype_verbalizer:
        word_ids = resolve_word_sets(DEFAULT_LABEL_WORDS, model.vocab)

    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(best_epoch=0, stopped_epoch=0, best_dev_f1=-1.0)
    best_snapshot: dict[str, np.ndarray] | None = None

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_cache))
        losses, protos_l, contrasts = [], [], []
        for b_start in range(0, len(order), cfg.batch_size):
            batch = [train_cache[i] for i in order[b_start : b_start + cfg.batch_size]]
            stats = train_step(model, prototypes, batch, optimizer, cfg, word_ids,
                               batch_tag=f"epoch{epoch}/batch{b_start // cfg.batch_size}")
            losses.append(stats.loss)
            protos_l.append(stats.breakdown.prototype)
            contrasts.append(stats.breakdown.contrastive)

        dev_f1 = _dev_macro_f1(model, prototypes, dev_cache, cfg) if dev_cache else float("nan")
        result.history.append(EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            prototype_loss=float(np.mean(protos_l)),
            contrastive_loss=float(np.mean(contrasts)),
            dev_macro_f1=dev_f1,
        ))
        result.stopped_epoch = epoch

        if not dev_cache:
            result.best_epoch = epoch
            continue
        if dev_f1 > result.best_dev_f1:
            result.best_dev_f1 = dev_f1
            result.best_epoch = epoch
            best_snapshot = {p.name: p.data.copy() for p in trainable}
        elif epoch - result.best_epoch >= cfg.patience:
            break

    if best_snapshot is not None:
        for p in trainable:
            p.tensor.data = best_snapshot[p.name]
    return result


def _warm_start(model: PromptEncoder, prototypes: Prototypes,
                cache: Sequence[EncodedEvent], cfg: TrainConfig) -> None:
    """Point each prototype at its class mean before the first step."""
    x_template = model.template_encoding()
    rows, labels = [], []
    with T.no_grad():
        for item in cache:
            hidden = model.forward(x_template, Tensor(item.x_content), item.seq,
                                   cfg.use_depth_embeddings, cfg.use_relation_bias)
            rows.append(model.mask_hidden(hidden, item.seq).data[0])
            labels.append(item.label_idx)
    prototypes.warm_start(np.stack(rows), np.array(labels))


def warmup_syntax(model: PromptEncoder, events: Sequence[Event], steps: int, seed: int,
                  lr: float = 1e-3, mask_prob: float = 0.15) -> float:
    """Masked-token reconstruction on event texts before the freeze.

    Returns the final step's loss. Trains only the syntax stack (embeddings
    and positions included) through the tied output head.
    """
    texts = []
    for event in events:
        texts.append(event.claim.text)
        texts.extend(p.text for p in event.posts)
    token_lists = [model.vocab.ids(tokenize(t)[: model.config.max_content_tokens])
                   for t in texts]
    token_lists = [ids for ids in token_lists if len(ids) >= 2]
    if not token_lists:
        raise EmptyDataset("no usable texts for reconstruction warmup")

    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.syntax.parameters(), lr=lr, weight_decay=0.0)
    mask_id = model.vocab.id(MASK)
    last = float("nan")
    for _ in range(steps):
        ids = token_lists[int(rng.integers(len(token_lists)))]
        n_mask = max(1, int(round(mask_prob * len(ids))))
        positions = rng.choice(len(ids), size=n_mask, replace=False)
        corrupted = ids.copy()
        corrupted[positions] = mask_id

        hidden = model.syntax.forward(corrupted)
        logits = T.matmul(hidden, T.transpose(model.syntax.embeddings.tensor))
        log_probs = T.log_softmax(logits, axis=-1)
        pick = np.zeros(logits.shape, dtype=np.float64)
        pick[positions, ids[positions]] = 1.0 / n_mask
        loss = T.scale(T.tensor_sum(T.mul(log_probs, Tensor(pick.astype(log_probs.data.dtype)))), -1.0)
        loss.backward()
        optimizer.step()
        optimizer.zero_grad()
        last = loss.item()
    model._template_cache = None
    return last
