"""The distillation loss family.

Classical KD matches the teacher's temperature-softened distribution with a
KL divergence. Decoupled knowledge distillation splits that KL into a
target-class part (TCKD, a binary target/non-target divergence) and a
non-target part (NCKD, the divergence of the distributions renormalized over
non-target classes), then reweights them independently:

    DKD = alpha * TCKD + beta * NCKD

Classical KD is the special case alpha = 1, beta = 1 - p_t (the teacher's
tempered target probability), evaluated per sample. All losses here reduce
per-sample first and batch-average last, which is what makes that identity
hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

P_FLOOR = 1e-30  # probability floor before any log

VARIANTS = ("ce_only", "kd", "tckd_only", "nckd_only", "dkd")


@dataclass
class DistillConfig:
    temperature: float = 4.0
    alpha: float = 1.0
    beta: float = 8.0
    variant: str = "dkd"
    # classic 1/T^2 gradient shrinkage is undone by scaling the KL terms by
    # T^2; disable to ablate
    t_squared: bool = True
    ce_weight: float = 1.0
    distill_weight: float = 1.0

    def validate(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        return self


@dataclass
class LogitPair:
    """Teacher logits are plain arrays: constants with no gradient path."""

    teacher_logits: np.ndarray  # [N,C]
    student_logits: Tensor  # [N,C]
    labels: np.ndarray  # [N] ints in [0,C)

    def __post_init__(self):
        if isinstance(self.teacher_logits, Tensor):
            self.teacher_logits = self.teacher_logits.data
        self.teacher_logits = np.asarray(self.teacher_logits, dtype=np.float64)
        if not isinstance(self.student_logits, Tensor):
            self.student_logits = Tensor(self.student_logits)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, c = self.teacher_logits.shape
        if self.student_logits.shape != (n, c):
            raise ValueError(
                f"teacher/student logit shapes differ: {(n, c)} vs "
                f"{self.student_logits.shape}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        if (self.labels < 0).any() or (self.labels >= c).any():
            raise IndexError(f"labels must lie in [0, {c})")


def _check_temperature(t):
    if t <= 0:
        raise ValueError(f"temperature must be > 0, got {t}")


def _np_log_softmax(z, t):
    z = z / t
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _scale(t, t_squared):
    return t * t if t_squared else 1.0


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of the true labels (T = 1 softmax)."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    logp = ad.log_softmax_t(logits, 1.0)
    return -ad.tmean(ad.pick(logp, labels))


def kd_per_sample(pair, t, t_squared=True):
    """Length-N tensor of T^2-scaled KL(teacher_T || student_T) values."""
    _check_temperature(t)
    p = np.exp(_np_log_softmax(pair.teacher_logits, t))
    logp = np.log(np.maximum(p, P_FLOOR))
    logq = ad.log_softmax_t(pair.student_logits, t)
    # KL = sum_i p_i (log p_i - log q_i); the p*log p part is a constant
    const = (p * logp).sum(axis=1)
    cross = ad.tsum(ad.mul(Tensor(p), logq), axis=1)
    return ad.mul(ad.sub(Tensor(const), cross), _scale(t, t_squared))


def tckd_per_sample(pair, t, t_squared=True):
    """Binary target/non-target KL per sample."""
    _check_temperature(t)
    pt_t = np.exp(_np_log_softmax(pair.teacher_logits, t))[
        np.arange(len(pair.labels)), pair.labels]
    pt_s = ad.pick(ad.softmax_t(pair.student_logits, t), pair.labels)
    bt = np.stack([pt_t, 1.0 - pt_t], axis=1)
    logbt = np.log(np.maximum(bt, P_FLOOR))
    const = (bt * logbt).sum(axis=1)
    cross = ad.add(
        ad.mul(Tensor(bt[:, 0]), ad.log(pt_s, floor=P_FLOOR)),
        ad.mul(Tensor(bt[:, 1]), ad.log(ad.sub(1.0, pt_s), floor=P_FLOOR)),
    )
    return ad.mul(ad.sub(Tensor(const), cross), _scale(t, t_squared))


def nckd_per_sample(pair, t, t_squared=True):
    """KL of the distributions renormalized over non-target classes.

    Implemented by pushing the target logit to -1e9 so the tempered softmax
    renormalizes over the remaining classes; the teacher's (near-zero) target
    mass is zeroed exactly so it contributes nothing.
    """
    _check_temperature(t)
    n, c = pair.teacher_logits.shape
    if c < 2:
        raise ValueError("nckd needs at least 2 classes")
    rows = np.arange(n)
    mask = np.zeros((n, c))
    mask[rows, pair.labels] = -1e9
    pt = np.exp(_np_log_softmax(pair.teacher_logits + mask, t))
    pt[rows, pair.labels] = 0.0
    logpt = np.log(np.maximum(pt, P_FLOOR))
    logqs = ad.log_softmax_t(ad.add(pair.student_logits, mask), t)
    const = (pt * np.where(pt > 0, logpt, 0.0)).sum(axis=1)
    cross = ad.tsum(ad.mul(Tensor(pt), logqs), axis=1)
    return ad.mul(ad.sub(Tensor(const), cross), _scale(t, t_squared))


def kd_loss(pair, t, t_squared=True):
    return ad.tmean(kd_per_sample(pair, t, t_squared))


def tckd(pair, t, t_squared=True):
    return ad.tmean(tckd_per_sample(pair, t, t_squared))


def nckd(pair, t, t_squared=True):
    return ad.tmean(nckd_per_sample(pair, t, t_squared))


def dkd_loss(pair, cfg, beta_per_sample=None):
    """alpha * TCKD + beta * NCKD, combined per sample then batch-averaged.

    ``beta_per_sample`` (length-N array) overrides cfg.beta; passing the
    teacher's per-sample (1 - p_t) recovers classical KD exactly.
    """
    cfg.validate()
    alpha, beta = cfg.alpha, cfg.beta
    if cfg.variant == "tckd_only":
        beta = 0.0
    elif cfg.variant == "nckd_only":
        alpha = 0.0
    t = cfg.temperature
    terms = []
    if np.any(alpha != 0):
        terms.append(ad.mul(tckd_per_sample(pair, t, cfg.t_squared), alpha))
    b = beta if beta_per_sample is None else np.asarray(beta_per_sample)
    if np.any(b != 0):
        terms.append(ad.mul(nckd_per_sample(pair, t, cfg.t_squared), b))
    if not terms:
        return ad.mul(ad.tsum(pair.student_logits), 0.0)
    total = terms[0]
    for extra in terms[1:]:
        total = ad.add(total, extra)
    return ad.tmean(total)


def student_total_loss(pair, cfg, return_components=False):
    """CE on hard labels plus the configured distillation term.

    With ``return_components`` the float values of the CE, TCKD and NCKD
    pieces come back alongside the differentiable total.
    """
    cfg.validate()
    ce = cross_entropy(pair.student_logits, pair.labels)
    components = {"ce": float(ce.data), "tckd": 0.0, "nckd": 0.0}
    if cfg.variant == "ce_only":
        total = ad.mul(ce, cfg.ce_weight) if cfg.ce_weight != 1.0 else ce
    else:
        if cfg.variant == "kd":
            term = kd_loss(pair, cfg.temperature, cfg.t_squared)
            components["tckd"] = float(
                tckd(pair, cfg.temperature, cfg.t_squared).data)
            components["nckd"] = float(
                nckd(pair, cfg.temperature, cfg.t_squared).data)
        else:
            term = dkd_loss(pair, cfg)
            if cfg.variant in ("dkd", "tckd_only"):
                components["tckd"] = float(
                    tckd(pair, cfg.temperature, cfg.t_squared).data)
            if cfg.variant in ("dkd", "nckd_only"):
                components["nckd"] = float(
                    nckd(pair, cfg.temperature, cfg.t_squared).data)
        total = ad.add(ad.mul(ce, cfg.ce_weight),
                       ad.mul(term, cfg.distill_weight))
    if return_components:
        components["total"] = float(total.data)
        return total, components
    return total
