"""Command-line entry point.

Subcommands cover the whole pipeline: validate / stats / rank over event
JSONL files, synth for generating labeled corpora, train / eval /
early-detect around binary weight checkpoints, and grad-check for the
finite-difference suite. Every train or eval style run writes exactly one
manifest recording the config, seed, input content hashes, and outputs,
so a run can be reproduced from the manifest alone.

Exit codes: 0 success, 1 data or validation error, 2 numeric failure,
3 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (CheckpointError, load_parameters, load_sidecar,
                         save_parameters, save_sidecar)
from .encoder import EncoderConfig, PromptEncoder, Vocab
from .errors import EventDataError, NumericError, RumorKitError
from .evaluation import (early_detection_curve, evaluate, write_curve_csv,
                         write_curve_json, write_report_csv, write_report_json)
from .gradsuite import main_text as grad_check_report
from .losses import Prototypes
from .synth import MODES, SynthSpec, corpus_texts, generate_synthetic
from .training import TrainConfig, train
from .trees import (Strategy, build_tree, dataset_stats, parse_event,
                    rank_responses, read_events, serialize_event)

EXIT_OK = 0
EXIT_DATA = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; this harness reserves 2 for
    numeric failures, so route usage errors to 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def blob_sha1(path) -> str:
    """Git-style content hash: sha1 over a blob header plus the bytes."""
    content = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(content))
    h.update(content)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seed: int,
                   inputs: dict[str, str], outputs: dict[str, str],
                   metrics: dict | None = None) -> None:
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hashes": {name: blob_sha1(p) for name, p in inputs.items()},
        "outputs": outputs,
        "metrics": metrics or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_ENCODER_KEYS = {f.name for f in dataclasses.fields(EncoderConfig)}
_TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


def _load_config_file(path) -> dict:
    payload = json.loads(Path(path).read_text())
    unknown = set(payload) - _ENCODER_KEYS - _TRAIN_KEYS
    if unknown:
        raise EventDataError(f"unknown config keys: {sorted(unknown)}")
    return payload


def _split_config(flat: dict) -> tuple[EncoderConfig, TrainConfig]:
    enc = {k: v for k, v in flat.items() if k in _ENCODER_KEYS}
    tr = {k: v for k, v in flat.items() if k in _TRAIN_KEYS}
    # `seed` appears in both dataclasses and is deliberately shared
    return EncoderConfig(**enc), TrainConfig.from_dict(tr)


def _merge_overrides(args) -> dict:
    """File config, then any CLI flag whose value is not None, wins in order."""
    flat = _load_config_file(args.config) if args.config else {}
    for key in sorted(_ENCODER_KEYS | _TRAIN_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    if args.seed is not None:
        flat["seed"] = args.seed
    return flat


# ---------------------------------------------------------------------------
# checkpoint wiring
# ---------------------------------------------------------------------------

def _save_run(out, model: PromptEncoder, prototypes: Prototypes,
              enc_cfg: EncoderConfig, cfg: TrainConfig, result) -> dict:
    config_echo = {"encoder": dataclasses.asdict(enc_cfg), "train": cfg.to_dict()}
    save_parameters(out, model.parameters() + [prototypes.param], config_echo)
    save_sidecar(out, {
        "config": config_echo,
        "seed": cfg.seed,
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
        "dev_macro_f1": result.best_dev_f1,
        "vocab": model.vocab.tokens,
    })
    return config_echo


def _restore(ckpt_path):
    """Rebuild (model, prototype row matrix, config echo, sidecar)."""
    config, arrays = load_parameters(ckpt_path)
    sidecar = load_sidecar(ckpt_path)
    vocab = Vocab(sidecar["vocab"])
    model = PromptEncoder(EncoderConfig(**config["encoder"]), vocab)
    model.load_state(arrays)
    if "proto.vectors" not in arrays:
        raise CheckpointError(f"{ckpt_path}: missing prototype vectors")
    return model, arrays["proto.vectors"], config, sidecar


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_validate(args) -> int:
    with open(args.events) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                parse_event(line)
            except (EventDataError, ValueError) as exc:
                offending = getattr(exc, "offending_id", None)
                if offending is None:
                    try:
                        offending = json.loads(line).get("id", f"line {lineno}")
                    except (json.JSONDecodeError, AttributeError):
                        offending = f"line {lineno}"
                print(f"{offending}: {exc}")
                return EXIT_DATA
    print("ok")
    return EXIT_OK


def _cmd_stats(args) -> int:
    stats = dataset_stats(read_events(args.events))
    print(f"events {stats.events}")
    print(f"nodes {stats.nodes}")
    print(f"rumors {stats.rumors}")
    print(f"non-rumors {stats.non_rumors}")
    print(f"avg-time-span-hours {stats.avg_time_span_hours:.4f}")
    print(f"avg-depth {stats.avg_depth:.4f}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    matched = False
    for event in read_events(args.events):
        if args.event is not None and event.id != args.event:
            continue
        matched = True
        ranked = rank_responses(build_tree(event), Strategy(args.strategy))
        print(" ".join(ranked.order))
    if args.event is not None and not matched:
        raise EventDataError(f"no event with id {args.event!r}", args.event)
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = SynthSpec(mode=args.mode, n_events=args.events, seed=args.seed or 0,
                     min_posts=args.min_posts, max_posts=args.max_posts,
                     signal_posts=args.signal_posts, vocab_size=args.vocab_size,
                     id_prefix=args.id_prefix)
    events = generate_synthetic(spec)
    with open(args.out, "w") as fh:
        for event in events:
            fh.write(serialize_event(event) + "\n")
    print(f"wrote {len(events)} {spec.mode} events to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    flat = _merge_overrides(args)
    enc_cfg, cfg = _split_config(flat)
    events = read_events(args.source)

    vocab = Vocab.from_texts(list(corpus_texts(events)) + [enc_cfg.template])
    model = PromptEncoder(enc_cfg, vocab)
    prototypes = Prototypes(enc_cfg.dim, seed=cfg.seed)
    result = train(model, prototypes, events, cfg)

    config_echo = _save_run(args.out, model, prototypes, enc_cfg, cfg, result)
    manifest = args.manifest or f"{args.out}.manifest.json"
    inputs = {"source": args.source}
    if args.config:
        inputs["config"] = args.config
    write_manifest(manifest, "train", config_echo, cfg.seed, inputs,
                   {"checkpoint": str(args.out), "sidecar": f"{args.out}.json"},
                   {"best_epoch": result.best_epoch,
                    "stopped_epoch": result.stopped_epoch,
                    "dev_macro_f1": result.best_dev_f1})
    print(f"best epoch {result.best_epoch} (stopped {result.stopped_epoch}), "
          f"dev macro-F1 {result.best_dev_f1:.4f}")
    print(f"checkpoint {args.out}")
    print(f"manifest {manifest}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, proto_vectors, config, sidecar = _restore(args.ckpt)
    cfg = TrainConfig.from_dict(config["train"])
    events = read_events(args.target)
    report = evaluate(model, proto_vectors, events, Strategy(cfg.strategy),
                      include_responses=cfg.use_responses,
                      use_depth_embeddings=cfg.use_depth_embeddings,
                      use_relation_bias=cfg.use_relation_bias)

    outputs = {}
    if args.report_json:
        write_report_json(args.report_json, report)
        outputs["report_json"] = args.report_json
    if args.report_csv:
        write_report_csv(args.report_csv, report)
        outputs["report_csv"] = args.report_csv
    manifest = args.manifest or f"{args.ckpt}.eval-manifest.json"
    write_manifest(manifest, "eval", config, args.seed if args.seed is not None
                   else sidecar.get("seed", 0),
                   {"checkpoint": args.ckpt, "target": args.target}, outputs,
                   {"accuracy": report.accuracy, "macro_f1": report.macro_f1,
                    "n_events": report.n_events})
    print(f"events {report.n_events}")
    print(f"accuracy {report.accuracy:.4f}")
    print(f"macro-f1 {report.macro_f1:.4f}")
    print(f"manifest {manifest}")
    return EXIT_OK


def _parse_checkpoints(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise EventDataError(f"bad checkpoint list {text!r}: {exc}") from exc
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise EventDataError(f"checkpoints must be strictly increasing: {text!r}")
    return values


def _cmd_early_detect(args) -> int:
    model, proto_vectors, config, sidecar = _restore(args.ckpt)
    cfg = TrainConfig.from_dict(config["train"])
    events = read_events(args.target)
    values = _parse_checkpoints(args.checkpoints)
    series = early_detection_curve(model, proto_vectors, events, args.kind, values,
                                   Strategy(cfg.strategy),
                                   include_responses=cfg.use_responses,
                                   use_depth_embeddings=cfg.use_depth_embeddings,
                                   use_relation_bias=cfg.use_relation_bias)

    outputs = {}
    if args.curve_csv:
        write_curve_csv(args.curve_csv, series)
        outputs["curve_csv"] = args.curve_csv
    if args.curve_json:
        write_curve_json(args.curve_json, series)
        outputs["curve_json"] = args.curve_json
    manifest = args.manifest or f"{args.ckpt}.early-manifest.json"
    metrics = {str(int(p.value)): p.report.macro_f1 for p in series.points}
    write_manifest(manifest, "early-detect", config, args.seed if args.seed is not None
                   else sidecar.get("seed", 0),
                   {"checkpoint": args.ckpt, "target": args.target}, outputs,
                   {"macro_f1_by_checkpoint": metrics})
    for point in series.points:
        print(f"{args.kind} {int(point.value)}: accuracy {point.report.accuracy:.4f} "
              f"macro-f1 {point.report.macro_f1:.4f}")
    print(f"manifest {manifest}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    text, passed = grad_check_report(range(args.seeds))
    print(text)
    return EXIT_OK if passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="rumorkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        return p

    p = common(sub.add_parser("validate", help="check every event record, stop at the first bad one"))
    p.add_argument("events")
    p.set_defaults(fn=_cmd_validate)

    p = common(sub.add_parser("stats", help="corpus-level statistics"))
    p.add_argument("events")
    p.set_defaults(fn=_cmd_stats)

    p = common(sub.add_parser("rank", help="print response orderings"))
    p.add_argument("events")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="cho")
    p.add_argument("--event", default=None, help="restrict to one event id")
    p.set_defaults(fn=_cmd_rank)

    p = common(sub.add_parser("synth", help="generate a labeled synthetic corpus"))
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--events", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-posts", type=int, default=4)
    p.add_argument("--max-posts", type=int, default=8)
    p.add_argument("--signal-posts", type=int, default=2)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--id-prefix", default="ev")
    p.set_defaults(fn=_cmd_synth)

    p = common(sub.add_parser("train", help="fit a model and write a checkpoint"))
    p.add_argument("--source", required=True)
    p.add_argument("--config", default=None, help="flat JSON of config keys")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    # every config key is also a flag; None means "not set here"
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--dev-fraction", dest="dev_fraction", type=float)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--syntax-layers", dest="syntax_layers", type=int)
    p.add_argument("--max-content-tokens", dest="max_content_tokens", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    for toggle in ("use-responses", "use-depth-embeddings", "use-relation-bias",
                   "use-perturbation", "use-prototype-verbalizer",
                   "warm-start-prototypes"):
        p.add_argument(f"--{toggle}", dest=toggle.replace("-", "_"),
                       action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(fn=_cmd_train)

    p = common(sub.add_parser("eval", help="score a checkpoint on a target corpus"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--report-json", default=None)
    p.add_argument("--report-csv", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = common(sub.add_parser("early-detect", help="evaluate on growing timeline prefixes"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--checkpoints", required=True, help="comma-separated increasing values")
    p.add_argument("--kind", choices=["post-count", "elapsed-seconds"], default="post-count")
    p.add_argument("--curve-csv", default=None)
    p.add_argument("--curve-json", default=None)
    p.add_argument("--manifest", default=None)
    p.set_defaults(fn=_cmd_early_detect)

    p = common(sub.add_parser("grad-check", help="finite-difference check of every op"))
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EventDataError, CheckpointError, RumorKitError, OSError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
