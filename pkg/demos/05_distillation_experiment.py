"""End-to-end teacher -> student distillation at miniature scale.

Trains a cross-entropy teacher, then two students from the same init: one
with plain CE and one with the decoupled objective (alpha=1, beta=8, T=4),
and compares their held-out metrics. At this tiny scale the numbers are
noisy — the full experiment harnesses (`dkdfmh ablation`, `dkdfmh
beta-sweep`) run the protocol properly over shared seeds.
"""

from dkdfmh import data as dt
from dkdfmh import distill as dl
from dkdfmh import features as ft
from dkdfmh import metrics as mt
from dkdfmh import train as tr


def extract(corpus, split):
    segs = []
    for u in corpus.utterances:
        segs.extend(ft.segment(ft.logfbank(u.samples), split,
                               utterance_id=u.utterance_id, label=u.label))
    return segs


def main():
    corpus = dt.synth_corpus(6, seed=1)
    train_c, test_c = dt.split(corpus, dt.SplitSpec(seed=1))
    train_segs = extract(train_c, "train")
    test_segs = extract(test_c, "test")
    stats = ft.compute_stats(train_segs)
    train_segs = ft.normalize(train_segs, stats)
    test_segs = ft.normalize(test_segs, stats)

    base = dict(batch_size=8, epochs=4, lr0=1e-3, seed=0)

    print("training teacher (cross-entropy)...")
    teacher_cfg = tr.TrainConfig(**base, init_seed=100, shuffle_seed=101)
    teacher, _ = tr.train_teacher(train_segs, test_segs, teacher_cfg)

    def test_metrics(net):
        cm = mt.ConfusionMatrix.from_pairs(tr.evaluate(net, test_segs))
        return mt.wa(cm), mt.ua(cm)

    wa_t, ua_t = test_metrics(teacher)
    print(f"teacher: WA {wa_t:.3f}  UA {ua_t:.3f}")

    print("training CE-only student...")
    ce_cfg = tr.TrainConfig(
        **base, distill=dl.DistillConfig(variant="ce_only"))
    ce_student, _ = tr.train_student(train_segs, test_segs, None, ce_cfg)
    wa_c, ua_c = test_metrics(ce_student)
    print(f"CE student: WA {wa_c:.3f}  UA {ua_c:.3f}")

    print("training DKD student (alpha=1, beta=8, T=4)...")
    dkd_cfg = tr.TrainConfig(
        **base, distill=dl.DistillConfig(variant="dkd"))
    dkd_student, log = tr.train_student(train_segs, test_segs, teacher,
                                        dkd_cfg)
    wa_d, ua_d = test_metrics(dkd_student)
    print(f"DKD student: WA {wa_d:.3f}  UA {ua_d:.3f}")
    last = log.records[-1]
    print(f"last-epoch loss split: ce {last.ce:.4f} + tckd {last.tckd:.4f} "
          f"+ nckd {last.nckd:.4f} = {last.total:.4f}")

    cm = mt.ConfusionMatrix.from_pairs(tr.evaluate(dkd_student, test_segs))
    print("\nDKD student confusion matrix (rows = truth):")
    print(cm.to_text())


if __name__ == "__main__":
    main()
