"""Compact convolutional text classifiers trained by logit distillation.

Submodules:
    numerics   float64 ops, hand-written gradients, Adam, grad_check
    text       tokenizer, vocabulary, encoding, GloVe and CSV loaders
    models     BlendCNN / KimCNN: init, forward, backward, counting, checkpoints
    distill    training loops, teacher-logit exchange, evaluation
    bench      parameter-count and inference-throughput reports
    synthetic  seeded generator for AG-News-schema desk-scale corpora
    cli        command-line entry point
"""

from . import numerics, text, models, distill, bench, synthetic

__version__ = "0.1.0"

__all__ = ["numerics", "text", "models", "distill", "bench", "synthetic", "__version__"]
