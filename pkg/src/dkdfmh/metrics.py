"""WA/UA metrics, confusion matrices, and the ablation / beta-sweep
experiment harnesses.

WA (weighted accuracy) is plain accuracy over all evaluated utterances; UA
(unweighted accuracy) averages per-class recall, so minority classes count
equally. Reported reference numbers from full-corpus GPU training are embedded
in the CSV outputs as comments for side-by-side reading — they are metadata,
never assertions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CLASS_NAMES

# Full-scale reference results (WA, UA) for each ablation configuration;
# desk-scale runs are not expected to reproduce them.
REFERENCE_ABLATION = {
    "CNN": (74.5, 72.2),
    "CNN+attention": (76.2, 74.8),
    "CNN+attention+KD": (76.9, 76.4),
    "TCKD": (75.3, 72.6),
    "NCKD": (77.7, 76.9),
    "DKDFMH": (79.1, 77.1),
}
ABLATION_ROWS = list(REFERENCE_ABLATION)
REFERENCE_BEST_BETA = 8.0
DEFAULT_BETAS = (1.0, 2.0, 4.0, 8.0, 16.0)


class UndefinedMetricError(ValueError):
    """A metric's denominator is empty."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C,C] ints, rows = true class
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise ValueError(
                f"confusion matrix must be {c}x{c}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be >= 0")

    @classmethod
    def from_pairs(cls, pairs, class_names=None):
        """Build from (truth, prediction) id pairs."""
        names = list(class_names or CLASS_NAMES)
        counts = np.zeros((len(names), len(names)), dtype=np.int64)
        for truth, pred in pairs:
            counts[truth, pred] += 1
        return cls(counts, names)

    @property
    def total(self):
        return int(self.counts.sum())

    def to_text(self):
        """Aligned plain-text table, rows = true class."""
        width = max(len(n) for n in self.class_names) + 2
        cell = 2 + max(
            max(len(n) for n in self.class_names),
            max(len(str(v)) for v in self.counts.ravel()))
        lines = [" " * width + "".join(n.rjust(cell) for n in self.class_names)]
        for i, name in enumerate(self.class_names):
            lines.append(name.ljust(width)
                         + "".join(str(v).rjust(cell) for v in self.counts[i]))
        return "\n".join(lines)

    def to_json(self):
        return json.dumps({
            "class_names": self.class_names,
            "rows_are_true_class": True,
            "counts": self.counts.tolist(),
        }, indent=2, sort_keys=True)


def wa(cm):
    """Overall accuracy: trace / total."""
    if cm.total == 0:
        raise UndefinedMetricError("wa: confusion matrix is empty")
    return float(np.trace(cm.counts)) / cm.total


def ua(cm):
    """Mean per-class recall."""
    row_sums = cm.counts.sum(axis=1)
    for i, s in enumerate(row_sums):
        if s == 0:
            raise UndefinedMetricError(
                f"ua: class {cm.class_names[i]!r} has no evaluated samples")
    recalls = np.diag(cm.counts) / row_sums
    return float(recalls.mean())


def metrics_json(cm):
    return json.dumps({
        "wa": wa(cm),
        "ua": ua(cm),
        "confusion": json.loads(cm.to_json()),
    }, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# experiment harnesses


@dataclass
class AblationReport:
    """Six rows, fixed order; a row's metrics are None if its run failed."""

    rows: list  # of (name, wa, ua, error-or-None)

    def to_csv(self, path=None):
        lines = ["# reference full-corpus results (WA, UA):"]
        for name, (rwa, rua) in REFERENCE_ABLATION.items():
            lines.append(f"#   {name}: WA {rwa} UA {rua}")
        lines.append("config,wa,ua,status")
        for name, row_wa, row_ua, err in self.rows:
            if err is None:
                lines.append(f"{name},{row_wa:.10g},{row_ua:.10g},ok")
            else:
                lines.append(f"{name},,,failed: {err}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _eval_metrics(net, test_segments):
    from . import train as tr

    cm = ConfusionMatrix.from_pairs(tr.evaluate(net, test_segments))
    return wa(cm), ua(cm)


def run_ablation(train_segments, test_segments, cfg, progress=None):
    """Train the six ablation configurations on shared seeds and splits.

    Rows: plain CNN (attention replaced by identity), the attention model,
    then the attention model distilled with KD, TCKD only, NCKD only, and the
    full DKD objective. Rows 3-6 share one teacher. A failed constituent run
    yields a failure marker in its row instead of aborting the report.
    """
    from . import distill as dl
    from . import train as tr

    rows = []

    def run(name, fn):
        if progress is not None:
            progress(name)
        try:
            net, _ = fn()
            row_wa, row_ua = _eval_metrics(net, test_segments)
            rows.append((name, row_wa, row_ua, None))
        except Exception as exc:  # keep the report going
            rows.append((name, None, None, str(exc)))

    def cfg_for(variant, use_attention=True):
        return tr.TrainConfig(**{
            **cfg.__dict__,
            "use_attention": use_attention,
            "distill": dl.DistillConfig(
                **{**cfg.distill.__dict__, "variant": variant}),
        })

    run("CNN", lambda: tr.train_teacher(
        train_segments, test_segments, cfg_for("ce_only", use_attention=False)))
    run("CNN+attention", lambda: tr.train_teacher(
        train_segments, test_segments, cfg_for("ce_only")))
    # distillation rows share one teacher, trained on a separate seed stream
    teacher_cfg = cfg_for("ce_only")
    teacher_cfg.init_seed = cfg.resolved_init_seed() + 10_000
    teacher_cfg.shuffle_seed = cfg.resolved_shuffle_seed() + 10_000
    if progress is not None:
        progress("teacher")
    try:
        teacher, _ = tr.train_teacher(train_segments, test_segments,
                                      teacher_cfg)
        teacher_error = None
    except Exception as exc:
        teacher, teacher_error = None, f"teacher: {exc}"
    for name, variant in (("CNN+attention+KD", "kd"), ("TCKD", "tckd_only"),
                          ("NCKD", "nckd_only"), ("DKDFMH", "dkd")):
        if teacher_error is not None:
            rows.append((name, None, None, teacher_error))
            continue
        run(name, lambda v=variant: tr.train_student(
            train_segments, test_segments, teacher, cfg_for(v)))
    return AblationReport(rows=rows)


def run_beta_sweep(train_segments, test_segments, cfg, betas=DEFAULT_BETAS,
                   progress=None):
    """One DKD student per beta against a shared teacher (alpha fixed at 1).

    Returns the sweep as CSV text with the full-corpus reference peak noted in
    a comment header.
    """
    from . import distill as dl
    from . import train as tr

    betas = list(betas)
    if not betas:
        raise ValueError("run_beta_sweep: beta list is empty")
    teacher_cfg = tr.TrainConfig(**{
        **cfg.__dict__,
        "distill": dl.DistillConfig(variant="ce_only"),
    })
    if progress is not None:
        progress("teacher")
    teacher, _ = tr.train_teacher(train_segments, test_segments, teacher_cfg)
    lines = [
        f"# reference: full-corpus accuracy peaks at beta = "
        f"{REFERENCE_BEST_BETA:g} (alpha = 1)",
        "beta,wa,ua",
    ]
    for beta in betas:
        if progress is not None:
            progress(f"beta={beta:g}")
        student_cfg = tr.TrainConfig(**{
            **cfg.__dict__,
            "distill": dl.DistillConfig(
                **{**cfg.distill.__dict__,
                   "variant": "dkd", "alpha": 1.0, "beta": float(beta)}),
        })
        net, _ = tr.train_student(train_segments, test_segments, teacher,
                                  student_cfg)
        row_wa, row_ua = _eval_metrics(net, test_segments)
        lines.append(f"{beta:g},{row_wa:.10g},{row_ua:.10g}")
    return "\n".join(lines) + "\n"
