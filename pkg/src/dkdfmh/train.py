"""Teacher and student training loops with Adam.

The two-phase protocol: a teacher is trained with plain cross-entropy, then a
student of identical architecture trains against the combined CE + distillation
objective, with the teacher run in eval mode as a frozen constant.

The logged ``ce``/``tckd``/``nckd`` columns are the additive contributions to
the batch total (weights already applied), so ce + tckd + nckd reconstructs
the total for every variant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import distill as dl
from . import model as md
from .autodiff import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

RUNLOG_HEADER = ["epoch", "total", "ce", "tckd", "nckd", "wa", "ua", "seconds"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    lr0: float = 1e-4
    decay: float = 1e-6
    seed: int = 0
    distill: dl.DistillConfig = field(default_factory=dl.DistillConfig)
    # "decay" defaults to the legacy per-step learning-rate schedule
    # lr0 / (1 + decay * step); flip to treat it as L2 weight decay instead
    decay_as_weight_decay: bool = False
    init_seed: int | None = None  # defaults derived from ``seed``
    shuffle_seed: int | None = None
    heads: int = md.DEFAULT_HEADS
    use_attention: bool = True

    def validate(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")
        self.distill.validate()
        return self

    def resolved_init_seed(self):
        return self.seed if self.init_seed is None else self.init_seed

    def resolved_shuffle_seed(self):
        return self.seed + 1 if self.shuffle_seed is None else self.shuffle_seed


class AdamState:
    """Per-parameter first/second moments plus a global step counter."""

    def __init__(self, net):
        self.m = {k: np.zeros_like(t.data) for k, t in net.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in net.params.items()}
        self.step = 0


def adam_step(net, state, lr_t, weight_decay=0.0):
    """One bias-corrected Adam update over all parameters with gradients."""
    state.step += 1
    t = state.step
    for name, p in net.params.items():
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise FloatingPointError(
                f"adam_step: non-finite gradient in parameter {name!r} "
                f"at step {t}")
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        p.data = p.data - lr_t * mhat / (np.sqrt(vhat) + ADAM_EPS)


def learning_rate(cfg, global_step):
    if cfg.decay_as_weight_decay:
        return cfg.lr0
    return cfg.lr0 / (1.0 + cfg.decay * global_step)


# ---------------------------------------------------------------------------
# run logs


@dataclass
class EpochRecord:
    epoch: int
    total: float
    ce: float
    tckd: float
    nckd: float
    wa: float
    ua: float
    seconds: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)

    def add(self, **kw):
        self.records.append(EpochRecord(**kw))

    def to_csv(self, path, reference_comment=None):
        lines = []
        if reference_comment:
            for row in reference_comment.splitlines():
                lines.append(f"# {row}")
        lines.append(",".join(RUNLOG_HEADER))
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.total:.10g},{r.ce:.10g},{r.tckd:.10g},"
                f"{r.nckd:.10g},{r.wa:.10g},{r.ua:.10g},{r.seconds:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        log = cls()
        lines = [l for l in Path(path).read_text().splitlines()
                 if l and not l.startswith("#")]
        if lines[0] != ",".join(RUNLOG_HEADER):
            raise ValueError(f"unexpected run-log header in {path}: {lines[0]}")
        for line in lines[1:]:
            vals = line.split(",")
            log.add(epoch=int(vals[0]), **{
                k: float(v) for k, v in zip(RUNLOG_HEADER[1:], vals[1:])})
        return log


# ---------------------------------------------------------------------------
# batching and evaluation helpers


def stack_segments(segments):
    """FeatureSegments -> (X[N,1,frames,bins], y[N])."""
    x = np.stack([s.frames for s in segments])[:, None, :, :]
    y = np.array([s.label for s in segments], dtype=np.int64)
    return x, y


def predict_utterance(net, segments):
    """Mean of per-segment T=1 posteriors, argmax (lowest class id on ties)."""
    if not segments:
        raise ValueError("predict_utterance: need at least one segment")
    return int(np.argmax(utterance_posterior(net, segments)))


def utterance_posterior(net, segments):
    x, _ = stack_segments(segments)
    with ad.no_grad():
        logits = md.forward(net, x, mode="eval").data
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p.mean(axis=0)


def group_by_utterance(segments):
    groups = {}
    for s in segments:
        groups.setdefault(s.utterance_id, []).append(s)
    return groups


def evaluate(net, segments, eval_batch=64):
    """Utterance-level (truth, prediction) pairs over a segment list.

    Segments run through the network in fixed-size batches; posteriors are
    then averaged per utterance.
    """
    x, _ = stack_segments(segments)
    posts = np.empty((len(segments), md.N_CLASSES))
    with ad.no_grad():
        for lo in range(0, len(segments), eval_batch):
            logits = md.forward(net, x[lo:lo + eval_batch], mode="eval").data
            z = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(z)
            posts[lo:lo + len(logits)] = p / p.sum(axis=1, keepdims=True)
    pairs = []
    agg = {}
    for i, s in enumerate(segments):
        truth, total, count = agg.get(s.utterance_id, (s.label, 0.0, 0))
        agg[s.utterance_id] = (truth, total + posts[i], count + 1)
    for uid in sorted(agg):
        truth, total, count = agg[uid]
        pairs.append((truth, int(np.argmax(total / count))))
    return pairs


# ---------------------------------------------------------------------------
# training loops


def _batch_components(pair, cfg_d):
    """Additive (ce, tckd, nckd) contributions whose sum is the total."""
    ce = cfg_d.ce_weight * float(
        dl.cross_entropy(pair.student_logits, pair.labels).data)
    if cfg_d.variant == "ce_only":
        return ce, 0.0, 0.0
    t, w = cfg_d.temperature, cfg_d.distill_weight
    with ad.no_grad():
        if cfg_d.variant == "kd":
            tc = w * float(ad.tmean(dl.tckd_per_sample(pair, t,
                                                       cfg_d.t_squared)).data)
            z = pair.teacher_logits / t
            z = z - z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            pt = p[np.arange(len(pair.labels)), pair.labels]
            nc = w * float(ad.tmean(ad.mul(
                dl.nckd_per_sample(pair, t, cfg_d.t_squared),
                1.0 - pt)).data)
        else:
            alpha = 0.0 if cfg_d.variant == "nckd_only" else cfg_d.alpha
            beta = 0.0 if cfg_d.variant == "tckd_only" else cfg_d.beta
            tc = w * alpha * float(dl.tckd(pair, t, cfg_d.t_squared).data)
            nc = w * beta * float(dl.nckd(pair, t, cfg_d.t_squared).data)
    return ce, tc, nc


def _train_loop(train_segments, test_segments, cfg, teacher=None,
                ckpt_dir=None, progress=None):
    cfg.validate()
    if not train_segments:
        raise ValueError("training set is empty")
    if teacher is not None:
        if teacher.params["fc.weight"].data.shape[0] != md.N_CLASSES:
            raise ValueError(
                "teacher class count does not match the student's")
    net = md.init(cfg.resolved_init_seed(), heads=cfg.heads,
                  use_attention=cfg.use_attention)
    state = AdamState(net)
    rng = np.random.default_rng(cfg.resolved_shuffle_seed())
    x_all, y_all = stack_segments(train_segments)
    n = len(train_segments)
    log = RunLog()
    weight_decay = cfg.decay if cfg.decay_as_weight_decay else 0.0
    use_teacher = teacher is not None and cfg.distill.variant != "ce_only"
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(4)  # total, ce, tckd, nckd
        batches = 0
        # drop the last partial batch: batch-norm needs a real batch
        for lo in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if use_teacher:
                with ad.no_grad():
                    t_logits = md.forward(teacher, xb, mode="eval").data
            else:
                t_logits = np.zeros((len(idx), md.N_CLASSES))
            s_logits = md.forward(net, xb, mode="train")
            pair = dl.LogitPair(t_logits, s_logits, yb)
            loss = dl.student_total_loss(pair, cfg.distill)
            net.zero_grad()
            loss.backward()
            lr_t = learning_rate(cfg, state.step)
            adam_step(net, state, lr_t, weight_decay)
            ce, tc, nc = _batch_components(pair, cfg.distill)
            sums += (float(loss.data), ce, tc, nc)
            batches += 1
        if batches == 0:
            raise ValueError(
                f"no full batches: {n} training segments < batch size "
                f"{cfg.batch_size}")
        pairs = evaluate(net, test_segments) if test_segments else []
        if pairs:
            truth = np.array([t for t, _ in pairs])
            pred = np.array([p for _, p in pairs])
            wa = float((truth == pred).mean())
            ua = float(np.mean([
                (pred[truth == c] == c).mean()
                for c in np.unique(truth)]))
        else:
            wa = ua = float("nan")
        avg = sums / batches
        log.add(epoch=epoch, total=avg[0], ce=avg[1], tckd=avg[2],
                nckd=avg[3], wa=wa, ua=ua,
                seconds=time.perf_counter() - tic)
        if ckpt_dir is not None:
            ckpt_dir = Path(ckpt_dir)
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            md.save_checkpoint(ckpt_dir / f"epoch_{epoch:03d}.dkdm", net)
        if progress is not None:
            progress(log.records[-1])
    return net, log


def train_teacher(train_segments, test_segments, cfg, ckpt_dir=None,
                  progress=None):
    """Phase one: cross-entropy only."""
    cfg = TrainConfig(**{**cfg.__dict__,
                         "distill": dl.DistillConfig(variant="ce_only")})
    return _train_loop(train_segments, test_segments, cfg,
                       ckpt_dir=ckpt_dir, progress=progress)


def train_student(train_segments, test_segments, teacher, cfg, ckpt_dir=None,
                  progress=None):
    """Phase two: CE plus the configured distillation term against a frozen
    teacher."""
    if teacher is None and cfg.distill.variant != "ce_only":
        raise ValueError(
            f"variant {cfg.distill.variant!r} needs a teacher network")
    return _train_loop(train_segments, test_segments, cfg, teacher=teacher,
                       ckpt_dir=ckpt_dir, progress=progress)


def train_accuracy(net, segments):
    """Utterance-level accuracy on a segment list (used for teacher checks)."""
    pairs = evaluate(net, segments)
    return float(np.mean([t == p for t, p in pairs]))
