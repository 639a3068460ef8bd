"""rumorkit: zero-shot rumor detection from conversation threads.

A small numpy library covering the full pipeline: propagation-tree parsing
and response ranking, a reverse-mode autodiff core, a two-stage prompt
encoder with tree-position-aware attention, prototype/contrastive training
with gradient-direction response perturbation, and an evaluation harness
with early-detection checkpoints.
"""

from .checkpoint import load_parameters, load_sidecar, save_parameters, save_sidecar
from .encoder import DEFAULT_TEMPLATE, EncoderConfig, PromptEncoder, Vocab
from .evaluation import (
    CheckpointSeries,
    MetricReport,
    early_detection_curve,
    evaluate,
    macro_f1,
    predict_events,
)
from .gradsuite import run_suite
from .losses import (
    CLASSES,
    Prototypes,
    contrastive_loss,
    joint_loss,
    prototype_loss,
    verbalizer_scores,
)
from .synth import SynthSpec, generate_synthetic
from .training import AdamW, TrainConfig, TrainResult, train, train_step
from .trees import (
    DatasetStats,
    Event,
    Post,
    PropagationTree,
    RankedThread,
    Relation,
    Strategy,
    absolute_positions,
    build_tree,
    dataset_stats,
    filter_by_checkpoint,
    parse_event,
    rank_responses,
    read_events,
    relative_relation,
    serialize_event,
    write_events,
)

__version__ = "0.1.0"
