"""Decoupled-knowledge-distillation stack for spectrogram emotion
classification: autodiff core, convolutional-attention model, KD/TCKD/NCKD/DKD
losses, logFBank front-end, and teacher/student experiment harnesses."""

__version__ = "0.1.0"
