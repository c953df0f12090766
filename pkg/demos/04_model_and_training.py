"""The conv-attention network and a short training run.

Initializes the model, traces the shapes through the stages, and trains a
few epochs on a miniature synthetic corpus to show the RunLog output.
"""

import numpy as np

from dkdfmh import data as dt
from dkdfmh import features as ft
from dkdfmh import model as md
from dkdfmh import train as tr


def extract(corpus, split):
    segs = []
    for u in corpus.utterances:
        segs.extend(ft.segment(ft.logfbank(u.samples), split,
                               utterance_id=u.utterance_id, label=u.label))
    return segs


def main():
    net = md.init(seed=0)
    n_params = sum(t.data.size for t in net.params.values())
    print(f"network: {len(net.params)} tensors, {n_params:,} parameters, "
          f"{net.heads} attention heads")

    x = np.random.default_rng(0).normal(size=(1, 1, 197, 40))
    logits, amap = md.forward(net, x, mode="eval", return_map=True)
    print(f"input {x.shape} -> logits {logits.shape}, "
          f"attention map {amap.shape} (500 positions = 50 x 10 after "
          f"two odd-dimension-padded 2x2 pools)")
    print(f"attention rows sum to 1: "
          f"{np.allclose(amap.data.sum(axis=-1), 1.0)}")

    print("\n-- training a small teacher --")
    corpus = dt.synth_corpus(4, seed=0)
    train_c, test_c = dt.split(corpus, dt.SplitSpec(seed=0))
    train_segs = extract(train_c, "train")
    test_segs = extract(test_c, "test")
    stats = ft.compute_stats(train_segs)
    train_segs = ft.normalize(train_segs, stats)
    test_segs = ft.normalize(test_segs, stats)
    print(f"{len(train_segs)} train / {len(test_segs)} test segments")

    cfg = tr.TrainConfig(batch_size=8, epochs=3, lr0=1e-3, seed=0)
    net, log = tr.train_teacher(
        train_segs, test_segs, cfg,
        progress=lambda r: print(
            f"epoch {r.epoch}: loss {r.total:.4f}  ce {r.ce:.4f}  "
            f"wa {r.wa:.3f}  ua {r.ua:.3f}  ({r.seconds:.1f}s)"))
    print(f"train accuracy after {cfg.epochs} epochs: "
          f"{tr.train_accuracy(net, train_segs):.3f}")


if __name__ == "__main__":
    main()
