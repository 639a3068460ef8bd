"""Finite-difference verification of the autodiff layer.

Every differentiable op gets a deterministic scalar-valued probe that is
checked against central differences, plus one composite probe through the
full attention stack (position tables and depth embeddings included).
The same suite backs the grad-check command and the numeric gate in the
acceptance tests, so a kernel regression shows up in both places.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .encoder import DEFAULT_TEMPLATE, EncoderConfig, PromptEncoder, Vocab
from .tensor import Tensor
from .trees import Strategy, parse_event

OP_TOLERANCE = 1e-4
COMPOSITE_TOLERANCE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "error": self.error,
                "tolerance": self.tolerance, "passed": self.passed}


def _signed(rng: np.random.Generator, shape, low=0.5, high=1.5) -> np.ndarray:
    """Values bounded away from zero, so piecewise ops stay on one branch."""
    mags = rng.uniform(low, high, size=shape)
    return mags * rng.choice([-1.0, 1.0], size=shape)


def _positive(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=shape)


def _vec(rng: np.random.Generator, n=6) -> np.ndarray:
    return rng.normal(size=n)


# Each builder takes an rng and returns (fn, x): a scalar probe and the
# tensor whose gradient it exercises. Constants are drawn once, outside
# fn, so repeated calls see the same function.

def _b_add_same(rng):
    c = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.add(x, c), c)), Tensor(rng.normal(size=(3, 4)))


def _b_add_bias(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 4)))
    # the bias-vector side is the one under test
    return lambda x: T.tensor_sum(T.mul(T.add(a, x), w)), Tensor(rng.normal(size=4))


def _b_sub(rng):
    c = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.sub(c, x), w)), Tensor(rng.normal(size=(3, 4)))


def _b_mul(rng):
    c = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(x, c)), Tensor(rng.normal(size=(3, 4)))


def _b_scale(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.scale(x, -2.5), w)), Tensor(rng.normal(size=(3, 4)))


def _b_matmul_left(rng):
    b = Tensor(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(3, 5)))
    return lambda x: T.tensor_sum(T.mul(T.matmul(x, b), w)), Tensor(rng.normal(size=(3, 4)))


def _b_matmul_right(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 5)))
    return lambda x: T.tensor_sum(T.mul(T.matmul(a, x), w)), Tensor(rng.normal(size=(4, 5)))


def _b_transpose(rng):
    w = Tensor(rng.normal(size=(4, 3)))
    return lambda x: T.tensor_sum(T.mul(T.transpose(x), w)), Tensor(rng.normal(size=(3, 4)))


def _b_exp(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.exp(x), w)), Tensor(rng.normal(size=(3, 4)) * 0.5)


def _b_log(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.log(x), w)), Tensor(_positive(rng, (3, 4)))


def _b_relu(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.relu(x), w)), Tensor(_signed(rng, (3, 4)))


def _b_gelu(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.tensor_sum(T.mul(T.gelu(x), w)), Tensor(rng.normal(size=(3, 4)))


def _b_sum(rng):
    return lambda x: T.scale(T.tensor_sum(T.mul(x, x)), 0.5), Tensor(rng.normal(size=(3, 4)))


def _b_mean(rng):
    w = Tensor(rng.normal(size=(3, 4)))
    return lambda x: T.scale(T.mean(T.mul(x, w)), 3.0), Tensor(rng.normal(size=(3, 4)))


def _b_concat_rows(rng):
    a = Tensor(rng.normal(size=(2, 4)))
    w = Tensor(rng.normal(size=(5, 4)))
    return lambda x: T.tensor_sum(T.mul(T.concat([a, x], axis=0), w)), Tensor(rng.normal(size=(3, 4)))


def _b_concat_cols(rng):
    a = Tensor(rng.normal(size=(3, 2)))
    w = Tensor(rng.normal(size=(3, 6)))
    return lambda x: T.tensor_sum(T.mul(T.concat([x, a], axis=1), w)), Tensor(rng.normal(size=(3, 4)))


def _b_slice_rows(rng):
    w = Tensor(rng.normal(size=(2, 4)))
    return lambda x: T.tensor_sum(T.mul(T.slice_rows(x, 1, 3), w)), Tensor(rng.normal(size=(5, 4)))


def _b_slice_cols(rng):
    w = Tensor(rng.normal(size=(3, 2)))
    return lambda x: T.tensor_sum(T.mul(T.slice_cols(x, 1, 3), w)), Tensor(rng.normal(size=(3, 5)))


def _b_tile_rows(rng):
    w = Tensor(rng.normal(size=(4, 6)))
    return lambda x: T.tensor_sum(T.mul(T.tile_rows(x, 4), w)), Tensor(_vec(rng))


def _b_tile_cols(rng):
    w = Tensor(rng.normal(size=(6, 4)))
    return lambda x: T.tensor_sum(T.mul(T.tile_cols(x, 4), w)), Tensor(_vec(rng))


def _b_softmax(rng):
    w = Tensor(rng.normal(size=(3, 5)))
    return lambda x: T.tensor_sum(T.mul(T.softmax(x), w)), Tensor(rng.normal(size=(3, 5)))


def _b_log_softmax(rng):
    w = Tensor(rng.normal(size=(3, 5)))
    return lambda x: T.tensor_sum(T.mul(T.log_softmax(x), w)), Tensor(rng.normal(size=(3, 5)))


def _b_layer_norm_plain(rng):
    w = Tensor(rng.normal(size=(3, 8)))
    return lambda x: T.tensor_sum(T.mul(T.layer_norm(x), w)), Tensor(rng.normal(size=(3, 8)))


def _b_layer_norm_gain(rng):
    a = Tensor(rng.normal(size=(3, 8)))
    bias = Tensor(rng.normal(size=8))
    w = Tensor(rng.normal(size=(3, 8)))
    return lambda x: T.tensor_sum(T.mul(T.layer_norm(a, x, bias), w)), Tensor(_positive(rng, 8))


def _b_layer_norm_bias(rng):
    a = Tensor(rng.normal(size=(3, 8)))
    gain = Tensor(_positive(rng, 8))
    w = Tensor(rng.normal(size=(3, 8)))
    return lambda x: T.tensor_sum(T.mul(T.layer_norm(a, gain, x), w)), Tensor(rng.normal(size=8))


def _b_embedding_gather(rng):
    idx = rng.integers(0, 5, size=7)  # repeats exercise the scatter-add
    w = Tensor(rng.normal(size=(7, 4)))
    return lambda x: T.tensor_sum(T.mul(T.embedding_gather(x, idx), w)), Tensor(rng.normal(size=(5, 4)))


def _b_l2_normalize(rng):
    w = Tensor(rng.normal(size=(3, 6)))
    x = Tensor(rng.normal(size=(3, 6)) + _signed(rng, (3, 6), 0.5, 1.0))
    return lambda x_: T.tensor_sum(T.mul(T.l2_normalize(x_), w)), x


def _b_cosine_a(rng):
    b = Tensor(_vec(rng) + _signed(rng, 6, 0.3, 0.6))
    return lambda x: T.cosine_similarity(x, b), Tensor(_vec(rng) + _signed(rng, 6, 0.3, 0.6))


def _b_cosine_b(rng):
    a = Tensor(_vec(rng) + _signed(rng, 6, 0.3, 0.6))
    return lambda x: T.cosine_similarity(a, x), Tensor(_vec(rng) + _signed(rng, 6, 0.3, 0.6))


def _b_relation_bias_q(rng):
    n, d, codes = 5, 4, 6
    rel = rng.integers(0, codes, size=(n, n))
    table = Tensor(rng.normal(size=(codes, d)))
    w = Tensor(rng.normal(size=(n, n)))
    return lambda x: T.tensor_sum(T.mul(T.relation_bias(x, table, rel), w)), Tensor(rng.normal(size=(n, d)))


def _b_relation_bias_table(rng):
    n, d, codes = 5, 4, 6
    rel = rng.integers(0, codes, size=(n, n))
    q = Tensor(rng.normal(size=(n, d)))
    w = Tensor(rng.normal(size=(n, n)))
    return lambda x: T.tensor_sum(T.mul(T.relation_bias(q, x, rel), w)), Tensor(rng.normal(size=(codes, d)))


OP_CHECKS: list[tuple[str, Callable]] = [
    ("add.same-shape", _b_add_same),
    ("add.bias-vector", _b_add_bias),
    ("sub", _b_sub),
    ("mul", _b_mul),
    ("scale", _b_scale),
    ("matmul.left", _b_matmul_left),
    ("matmul.right", _b_matmul_right),
    ("transpose", _b_transpose),
    ("exp", _b_exp),
    ("log", _b_log),
    ("relu", _b_relu),
    ("gelu", _b_gelu),
    ("tensor_sum", _b_sum),
    ("mean", _b_mean),
    ("concat.rows", _b_concat_rows),
    ("concat.cols", _b_concat_cols),
    ("slice_rows", _b_slice_rows),
    ("slice_cols", _b_slice_cols),
    ("tile_rows", _b_tile_rows),
    ("tile_cols", _b_tile_cols),
    ("softmax", _b_softmax),
    ("log_softmax", _b_log_softmax),
    ("layer_norm.input", _b_layer_norm_plain),
    ("layer_norm.gain", _b_layer_norm_gain),
    ("layer_norm.bias", _b_layer_norm_bias),
    ("embedding_gather", _b_embedding_gather),
    ("l2_normalize", _b_l2_normalize),
    ("cosine_similarity.left", _b_cosine_a),
    ("cosine_similarity.right", _b_cosine_b),
    ("relation_bias.query", _b_relation_bias_q),
    ("relation_bias.table", _b_relation_bias_table),
]

_COMPOSITE_RECORD = {
    "id": "gradsuite", "label": "rumor",
    "claim": {"id": "c", "text": "a claim", "timestamp": 0},
    "posts": [
        {"id": "x1", "parent": "c", "text": "first reply", "timestamp": 1},
        {"id": "x2", "parent": "x1", "text": "second reply", "timestamp": 2},
        {"id": "x3", "parent": "c", "text": "third reply", "timestamp": 3},
        {"id": "x4", "parent": "x3", "text": "fourth reply", "timestamp": 4},
        {"id": "x5", "parent": "x2", "text": "fifth reply", "timestamp": 5},
        {"id": "x6", "parent": "x4", "text": "sixth reply", "timestamp": 6},
    ],
}


def composite_targets(seed: int):
    """A small full-stack model plus a weighted mask-row probe.

    Two semantic layers on purpose: with a single one the mask row's own
    relation codes are all the null code, a per-row constant the softmax
    ignores, so the table gradient would be exactly zero and finite
    differences would compare noise against noise.
    """
    event = parse_event(json.dumps(_COMPOSITE_RECORD))
    vocab = Vocab.from_texts([
        "a claim first second third fourth fifth sixth reply", DEFAULT_TEMPLATE])
    config = EncoderConfig(dim=8, heads=2, layers=3, syntax_layers=1,
                           max_content_tokens=32, seed=seed)
    model = PromptEncoder(config, vocab)
    rng = np.random.default_rng(seed + 1000)  # decorrelated from the weight init
    for p in model.semantic.relation_tables + [model.semantic.depth_embeddings]:
        p.tensor.data = rng.normal(0, 0.3, size=p.data.shape)
    for p in model.parameters():
        p.tensor.data = p.data.astype(np.float64)
    model._template_cache = None

    seq = model.assemble(event, Strategy.CHRONOLOGICAL)
    x_template = model.template_encoding()
    x_content = Tensor(model.content_encoding(seq.content_ids), requires_grad=False)
    w = Tensor(rng.normal(size=(1, config.dim)))

    def probe(_x):
        hidden = model.forward(x_template, x_content, seq)
        return T.tensor_sum(T.mul(model.mask_hidden(hidden, seq), w))

    targets = [
        ("stack.query-weights", model.semantic.layers[0].wq.tensor),
        ("stack.relation-table", model.semantic.relation_tables[0].tensor),
        ("stack.depth-embeddings", model.semantic.depth_embeddings.tensor),
    ]
    return probe, targets


def run_suite(seeds=range(10), include_composite: bool = True,
              progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every check over every seed; results carry per-check errors."""
    results = []
    with T.verification_mode():
        for seed in seeds:
            for i, (name, builder) in enumerate(OP_CHECKS):
                fn, x = builder(np.random.default_rng(seed * 7919 + i))
                x.data = x.data.astype(np.float64)
                res = CheckResult(name, int(seed), float(T.grad_check(fn, x)), OP_TOLERANCE)
                results.append(res)
                if progress is not None:
                    progress(res)
        if include_composite:
            for seed in seeds:
                probe, targets = composite_targets(int(seed))
                for name, target in targets:
                    res = CheckResult(name, int(seed), float(T.grad_check(probe, target)),
                                      COMPOSITE_TOLERANCE)
                    results.append(res)
                    if progress is not None:
                        progress(res)
    return results


def suite_summary(results: list[CheckResult]) -> dict:
    failures = [r for r in results if not r.passed]
    return {
        "checks": len(results),
        "failures": [r.to_dict() for r in failures],
        "worst_error": max((r.error for r in results), default=0.0),
        "passed": not failures,
    }


def main_text(seeds=range(10)) -> tuple[str, bool]:
    """Plain-text report for the command line; returns (text, all_passed)."""
    start = time.time()
    results = run_suite(seeds)
    by_name: dict[str, float] = {}
    for r in results:
        by_name[r.name] = max(by_name.get(r.name, 0.0), r.error)
    lines = []
    for name in sorted(by_name):
        tol = COMPOSITE_TOLERANCE if name.startswith("stack.") else OP_TOLERANCE
        mark = "ok " if by_name[name] < tol else "FAIL"
        lines.append(f"{mark} {name:<26} max rel err {by_name[name]:.3e} (tol {tol:.0e})")
    summary = suite_summary(results)
    lines.append(f"{summary['checks']} checks over {len(list(seeds))} seeds "
                 f"in {time.time() - start:.1f}s; worst {summary['worst_error']:.3e}")
    return "\n".join(lines), summary["passed"]
