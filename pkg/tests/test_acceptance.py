"""Shipping gate: eleven checks covering ordering, relations, gradients,
freezing, perturbation, loss values, learnability, structure sensitivity,
leakage control, early detection, and metrics.

Each check prints one `[PASS]`/`[FAIL]` line (run with `-s` to stream them)
and fails its test on a miss. The learnability checks train real models on
synthetic corpora with pinned seeds; the whole file stays inside the stated
time budgets on one CPU core.
"""

import json
import math
import time
import warnings
from collections import Counter

import numpy as np
import pytest

from rumorkit import tensor as T
from rumorkit.encoder import DEFAULT_TEMPLATE, EncoderConfig, PromptEncoder, Vocab
from rumorkit.evaluation import evaluate, early_detection_curve, macro_f1
from rumorkit.gradsuite import run_suite
from rumorkit.losses import CLASSES, Prototypes, contrastive_loss, prototype_loss
from rumorkit.synth import SynthSpec, corpus_texts, generate_synthetic
from rumorkit.tensor import Tensor, parameters_checksum
from rumorkit.training import AdamW, TrainConfig, build_cache, perturb_rows, train, train_step
from rumorkit.trees import (Relation, Strategy, build_tree, filter_by_checkpoint,
                            parse_event, rank_responses, relation_matrix)

SEEDS = (0, 1, 2)


def _verdict(number: int, label: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:02d} {label}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


def _fit(train_events, cfg: TrainConfig, enc_cfg: EncoderConfig):
    """Mirror of the train subcommand's wiring."""
    vocab = Vocab.from_texts(list(corpus_texts(train_events)) + [enc_cfg.template])
    model = PromptEncoder(enc_cfg, vocab)
    prototypes = Prototypes(enc_cfg.dim, seed=cfg.seed)
    train(model, prototypes, train_events, cfg)
    return model, prototypes


def _lexical_recipe(seed: int, **overrides) -> TrainConfig:
    base = dict(epochs=40, lr=3e-3, tau=0.2, patience=10, warmup_steps=200,
                seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# 1. traversal orders on the worked six-post tree
# ---------------------------------------------------------------------------

def test_criterion_01_traversal_oracle(figure_tree_event):
    start = time.process_time()
    tree = build_tree(figure_tree_event)
    got = {s: rank_responses(tree, s).order for s in Strategy}
    expected = {
        Strategy.CHRONOLOGICAL: ["x1", "x2", "x3", "x4", "x5", "x6"],
        Strategy.INVERTED: ["x6", "x5", "x4", "x3", "x2", "x1"],
        Strategy.DEPTH_FIRST: ["x1", "x2", "x5", "x3", "x4", "x6"],
        Strategy.BREADTH_FIRST: ["x1", "x3", "x2", "x4", "x5", "x6"],
    }
    elapsed = time.process_time() - start
    _verdict(1, "traversal oracle", got == expected and elapsed < 1.0,
             f"4 orderings, {elapsed:.3f}s")


# ---------------------------------------------------------------------------
# 2. pairwise relations against a brute-force enumerator
# ---------------------------------------------------------------------------

def _brute_force_relation(parents: dict, keys: dict, i: str, j: str) -> Relation:
    # written from the definition: self, parent of, child of, shared-parent
    # siblings split by earlier/later; anything else unrelated
    if i == j:
        return Relation.ITSELF
    if parents[i] == j:
        return Relation.PARENT_PLUS
    if parents[j] == i:
        return Relation.CHILDREN_MINUS
    if parents[i] is not None and parents[i] == parents[j]:
        return Relation.SIBLINGS_PLUS if keys[j] < keys[i] else Relation.SIBLINGS_MINUS
    return Relation.NONE


def test_criterion_02_relation_oracle():
    start = time.process_time()
    rng = np.random.default_rng(2024)
    checked_pairs = 0
    for _ in range(100):
        n_posts = int(rng.integers(1, 30))
        ids = [f"p{i}" for i in range(n_posts)]
        posts = []
        for i, pid in enumerate(ids):
            parent = "c" if i == 0 else str(rng.choice(["c"] + ids[:i]))
            posts.append({"id": pid, "parent": parent, "text": "w",
                          "timestamp": (i + 1) // 2})  # ties exercise id order
        record = {"id": "r", "label": "rumor",
                  "claim": {"id": "c", "text": "w", "timestamp": 0},
                  "posts": posts}
        tree = build_tree(parse_event(json.dumps(record)))

        parents = {"c": None}
        keys = {"c": (0, "c")}
        for post in posts:
            parents[post["id"]] = post["parent"]
            keys[post["id"]] = (post["timestamp"], post["id"])

        nodes = ["c"] + ids
        got = relation_matrix(tree, nodes)
        for a, i in enumerate(nodes):
            for b, j in enumerate(nodes):
                assert got[a][b] == _brute_force_relation(parents, keys, i, j), (i, j)
                checked_pairs += 1
    elapsed = time.process_time() - start
    _verdict(2, "relation oracle", elapsed < 10.0,
             f"{checked_pairs} ordered pairs, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. finite differences over every op and the composite attention head
# ---------------------------------------------------------------------------

def test_criterion_03_gradient_suite():
    start = time.process_time()
    results = run_suite(range(10))
    elapsed = time.process_time() - start
    failures = [r for r in results if not r.passed]
    worst = max(r.error for r in results)
    _verdict(3, "gradient suite", not failures and elapsed < 120.0,
             f"{len(results)} checks, worst {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. the frozen stack never moves during training
# ---------------------------------------------------------------------------

def test_criterion_04_freeze_contract():
    events = generate_synthetic(SynthSpec(mode="lexical", n_events=64, seed=11,
                                          signal_posts=4))
    enc_cfg = EncoderConfig(seed=0)
    cfg = TrainConfig(seed=0)
    vocab = Vocab.from_texts(list(corpus_texts(events)) + [DEFAULT_TEMPLATE])
    model = PromptEncoder(enc_cfg, vocab)
    model.syntax.freeze()
    prototypes = Prototypes(enc_cfg.dim, seed=0)
    cache = build_cache(model, events, cfg)
    optimizer = AdamW(model.trainable_parameters() + [prototypes.param],
                      lr=cfg.lr, weight_decay=cfg.weight_decay)

    before = parameters_checksum(model.syntax.parameters())
    steps = 0
    while steps < 100:
        for lo in range(0, len(cache), cfg.batch_size):
            train_step(model, prototypes, cache[lo:lo + cfg.batch_size], optimizer, cfg)
            steps += 1
            if steps == 100:
                break
    after = parameters_checksum(model.syntax.parameters())
    _verdict(4, "freeze contract", before == after, "100 steps, checksum bit-exact")


# ---------------------------------------------------------------------------
# 5. perturbation geometry and first-order ascent
# ---------------------------------------------------------------------------

def test_criterion_05_perturbation_contracts():
    start = time.process_time()
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(12, 8)).astype(np.float32), requires_grad=True)
    T.tensor_sum(T.mul(x, Tensor(rng.normal(size=(12, 8)).astype(np.float32)))).backward()
    mask = np.zeros(12, dtype=bool)
    mask[3:9] = True  # rows outside stand in for template/claim/pad positions
    eps = 0.25
    moved = perturb_rows(x, mask, eps)
    norms = np.linalg.norm(moved[mask] - x.data[mask], axis=-1)
    norms_ok = np.all(np.abs(norms - eps) < 1e-6)
    others_ok = np.array_equal(moved[~mask], x.data[~mask])

    events = generate_synthetic(SynthSpec(mode="lexical", n_events=64, seed=21,
                                          signal_posts=4))
    enc_cfg = EncoderConfig(dim=16, heads=2, layers=3, syntax_layers=1,
                            max_content_tokens=64, seed=0)
    cfg = TrainConfig(seed=0, epsilon=1e-3, use_perturbation=True)
    vocab = Vocab.from_texts(list(corpus_texts(events)) + [DEFAULT_TEMPLATE])
    model = PromptEncoder(enc_cfg, vocab)
    model.syntax.freeze()
    prototypes = Prototypes(enc_cfg.dim, seed=0)
    cache = build_cache(model, events, cfg)
    optimizer = AdamW(model.trainable_parameters() + [prototypes.param], lr=cfg.lr)

    ascents = 0
    batch_rng = np.random.default_rng(50)
    for _ in range(50):
        idx = batch_rng.choice(len(cache), size=cfg.batch_size, replace=False)
        stats = train_step(model, prototypes, [cache[i] for i in idx], optimizer, cfg)
        ascents += stats.loss_perturbed >= stats.loss_clean
    elapsed = time.process_time() - start
    _verdict(5, "perturbation contracts",
             norms_ok and others_ok and ascents >= 45 and elapsed < 60.0,
             f"norm ok, untouched rows ok, ascent {ascents}/50, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. loss fixed points
# ---------------------------------------------------------------------------

def test_criterion_06_loss_point_values():
    protos = Prototypes(2, seed=0)
    protos.param.tensor.data = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)

    equidistant = prototype_loss(Tensor(np.array([[1.0, 1.0]])), np.array([0]),
                                 protos, tau=1.0).item()
    aligned = prototype_loss(Tensor(np.array([[1.0, 0.0]])), np.array([0]),
                             protos, tau=1.0).item()
    identical = contrastive_loss(Tensor(np.array([[0.3, 0.4], [0.3, 0.4]])),
                                 np.array([1, 1]), tau=1.0).item()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        singleton = contrastive_loss(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])),
                                     np.array([0, 1]), tau=1.0).item()

    ok = (abs(equidistant - math.log(2.0)) < 1e-6
          and abs(aligned - 0.31326168751822286) < 1e-5
          and abs(identical) < 1e-6
          and math.isfinite(singleton))
    _verdict(6, "loss point values", ok,
             f"ln2 {equidistant:.8f}, e/(e+1) {aligned:.6f}, "
             f"identical {identical:.2e}, singleton finite")


# ---------------------------------------------------------------------------
# 7. lexical learnability at desk scale
# ---------------------------------------------------------------------------

def test_criterion_07_lexical_learnability():
    start = time.process_time()
    accs = []
    for seed in SEEDS:
        train_events = generate_synthetic(SynthSpec(
            mode="lexical", n_events=200, seed=100 + seed, signal_posts=6))
        heldout = generate_synthetic(SynthSpec(
            mode="lexical", n_events=100, seed=900 + seed, signal_posts=6))
        model, prototypes = _fit(train_events, _lexical_recipe(seed),
                                 EncoderConfig(seed=seed))
        report = evaluate(model, prototypes.data, heldout)
        accs.append(report.accuracy)
    elapsed = time.process_time() - start
    mean_acc = float(np.mean(accs))
    _verdict(7, "lexical learnability", mean_acc >= 0.95 and elapsed < 300.0,
             f"accuracies {[f'{a:.2f}' for a in accs]}, mean {mean_acc:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. structure sensitivity: full model vs position-blind ablation
# ---------------------------------------------------------------------------

def test_criterion_08_structure_sensitivity():
    start = time.process_time()
    gaps = []
    for seed in SEEDS:
        train_events = generate_synthetic(SynthSpec(
            mode="structural", n_events=200, seed=100 + seed))
        heldout = generate_synthetic(SynthSpec(
            mode="structural", n_events=100, seed=900 + seed))

        full_cfg = _lexical_recipe(seed, epochs=60, patience=15, use_perturbation=False)
        model, prototypes = _fit(train_events, full_cfg, EncoderConfig(seed=seed))
        full_acc = evaluate(model, prototypes.data, heldout).accuracy

        ablated_cfg = _lexical_recipe(seed, epochs=60, patience=15,
                                      use_perturbation=False,
                                      use_relation_bias=False,
                                      use_depth_embeddings=False)
        model, prototypes = _fit(train_events, ablated_cfg, EncoderConfig(seed=seed))
        ablated_acc = evaluate(model, prototypes.data, heldout,
                               use_depth_embeddings=False,
                               use_relation_bias=False).accuracy
        gaps.append(full_acc - ablated_acc)
    elapsed = time.process_time() - start
    mean_gap = float(np.mean(gaps))
    _verdict(8, "structure sensitivity", mean_gap >= 0.10 and elapsed < 900.0,
             f"gaps {[f'{g:+.2f}' for g in gaps]}, mean {mean_gap:+.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. no leakage on label-shuffled data
# ---------------------------------------------------------------------------

def test_criterion_09_no_leakage_control():
    accs = []
    for seed in SEEDS:
        train_events = generate_synthetic(SynthSpec(
            mode="null", n_events=200, seed=100 + seed))
        heldout = generate_synthetic(SynthSpec(
            mode="null", n_events=100, seed=900 + seed))
        cfg = _lexical_recipe(seed, epochs=15, patience=5, use_perturbation=False)
        model, prototypes = _fit(train_events, cfg, EncoderConfig(seed=seed))
        accs.append(evaluate(model, prototypes.data, heldout).accuracy)
    ok = all(0.40 <= a <= 0.60 for a in accs)
    _verdict(9, "no-leakage control", ok, f"accuracies {[f'{a:.2f}' for a in accs]}")


# ---------------------------------------------------------------------------
# 10. early detection: identity, nesting, early saturation
# ---------------------------------------------------------------------------

def test_criterion_10_early_detection():
    spec_kwargs = dict(mode="lexical", signal_posts=3, min_posts=2, max_posts=3)
    identity_ok, nesting_ok = True, True
    gaps = []
    for seed in SEEDS:
        train_events = generate_synthetic(SynthSpec(
            n_events=200, seed=100 + seed, **spec_kwargs))
        heldout = generate_synthetic(SynthSpec(
            n_events=100, seed=900 + seed, **spec_kwargs))
        cfg = _lexical_recipe(seed, dev_fraction=0.2)
        model, prototypes = _fit(train_events, cfg, EncoderConfig(seed=seed))

        series = early_detection_curve(model, prototypes.data, heldout,
                                       "post-count", [1, 2, 3])
        full = evaluate(model, prototypes.data, heldout)
        identity_ok &= series.points[-1].report == full

        plateau = series.points[-1].report.accuracy
        gaps.append(plateau - series.points[1].report.accuracy)

    for event in generate_synthetic(SynthSpec(n_events=20, seed=77, **spec_kwargs)):
        tokens = []
        for value in (1, 2, 3):
            cut = filter_by_checkpoint(event, "post-count", value)
            tokens.append(Counter(" ".join(p.text for p in cut.posts).split()))
        nesting_ok &= all(tokens[k] <= tokens[k + 1] for k in range(2))

    saturation_ok = all(g <= 0.05 for g in gaps)
    _verdict(10, "early detection", identity_ok and nesting_ok and saturation_ok,
             f"final==full exact, nested sets, count-2 gaps {[f'{g:.2f}' for g in gaps]}")


# ---------------------------------------------------------------------------
# 11. macro-F1 against an independent count-based implementation
# ---------------------------------------------------------------------------

def _naive_macro_f1(golds, preds) -> float:
    scores = []
    for c in range(len(CLASSES)):
        tp = sum(1 for g, p in zip(golds, preds) if g == c and p == c)
        fp = sum(1 for g, p in zip(golds, preds) if g != c and p == c)
        fn = sum(1 for g, p in zip(golds, preds) if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall)
                      if precision + recall else 0.0)
    return sum(scores) / len(scores)


def test_criterion_11_metrics_oracle():
    rng = np.random.default_rng(11)
    golds = rng.integers(0, 2, size=1000).tolist()
    preds = rng.integers(0, 2, size=1000).tolist()
    got = macro_f1(golds, preds)
    want = _naive_macro_f1(golds, preds)
    _verdict(11, "metrics oracle", abs(got - want) < 1e-9,
             f"|{got:.12f} - {want:.12f}| = {abs(got - want):.2e}")
