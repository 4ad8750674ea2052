"""Desk-scale visual-linguistic general video recognition.

Two-stage training over precomputed frame/sentence embeddings: contrastive
pretraining with teacher distillation, then salient-text selection and a
bi-modal attention head, evaluated under close-set, long-tail, few-shot and
open-set regimes.
"""

__version__ = "0.1.0"
