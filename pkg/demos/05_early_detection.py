"""How soon can the model call it? Sweep post-count checkpoints.

Events here carry their stance signal in the first three replies, so the
accuracy curve should saturate almost immediately: the point of the
early-detection protocol is seeing how little of the thread is enough.
"""
from rumorkit import (
    DEFAULT_TEMPLATE,
    EncoderConfig,
    PromptEncoder,
    Prototypes,
    SynthSpec,
    TrainConfig,
    Vocab,
    early_detection_curve,
    evaluate,
    generate_synthetic,
    train,
)
from rumorkit.synth import corpus_texts

spec = dict(mode="lexical", signal_posts=3, min_posts=2, max_posts=3)
train_events = generate_synthetic(SynthSpec(n_events=200, seed=100, **spec))
heldout = generate_synthetic(SynthSpec(n_events=100, seed=900, **spec))

config = EncoderConfig(seed=0)
vocab = Vocab.from_texts(list(corpus_texts(train_events)) + [DEFAULT_TEMPLATE])
model = PromptEncoder(config, vocab)
prototypes = Prototypes(config.dim, seed=0)
cfg = TrainConfig(epochs=40, lr=3e-3, tau=0.2, patience=10, warmup_steps=200,
                  dev_fraction=0.2, seed=0)
result = train(model, prototypes, train_events, cfg)
print(f"trained to epoch {result.best_epoch}, dev macro-F1 {result.best_dev_f1:.3f}\n")

series = early_detection_curve(model, prototypes, heldout, "post-count", [0, 1, 2, 3])
print("posts visible -> accuracy / macro-F1")
for point in series.points:
    print(f"  {int(point.value):>2} -> {point.report.accuracy:.3f} / {point.report.macro_f1:.3f}")

full = evaluate(model, prototypes, heldout)
final = series.points[-1].report
print("\nfinal checkpoint reproduces the full evaluation exactly:", final == full)
