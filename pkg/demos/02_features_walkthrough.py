"""From raw audio to normalized 197x40 logFBank segments.

Generates one synthetic utterance, extracts the mel log filterbank features,
segments them with the train/test window policies, and shows the cache
round-tripping bit-for-bit.
"""

import tempfile
from pathlib import Path

import numpy as np

from dkdfmh import data as dt
from dkdfmh import features as ft


def main():
    corpus = dt.synth_corpus(1, seed=7)
    clip = corpus.utterances[0]
    dur = len(clip.samples) / clip.sample_rate
    print(f"utterance {clip.utterance_id}: {dur:.2f} s "
          f"({dt.CLASS_NAMES[clip.label]})")

    feats = ft.logfbank(clip.samples)
    print(f"logFBank: {feats.shape[0]} frames x {feats.shape[1]} mel filters "
          f"(0.04 s window, 0.01 s hop)")

    # a 2 s clip is exactly one 197-frame segment; longer clips slide a
    # 197-frame window with hop 100 (train) or 40 (test)
    for split in ("train", "test"):
        segs = ft.segment(feats, split, utterance_id=clip.utterance_id,
                          label=clip.label)
        print(f"{split}: {len(segs)} segment(s) of shape "
              f"{segs[0].frames.shape}")

    train_segs = ft.segment(feats, "train", utterance_id=clip.utterance_id,
                            label=clip.label)
    stats = ft.compute_stats(train_segs)
    normed = ft.normalize(train_segs, stats)
    stacked = np.concatenate([s.frames for s in normed])
    print(f"after normalization: per-bin mean ~ {stacked.mean():.2e}, "
          f"std ~ {stacked.std():.4f}")

    with tempfile.TemporaryDirectory() as tmp:
        p1, p2 = Path(tmp) / "a.dkdf", Path(tmp) / "b.dkdf"
        ft.write_cache(p1, normed)
        ft.write_cache(p2, normed)
        print(f"cache files byte-identical across writes: "
              f"{p1.read_bytes() == p2.read_bytes()}")
        back = ft.read_cache(p1)
        print(f"round trip: {len(back)} segment(s), max abs error "
              f"{max(np.abs(a.frames - b.frames).max() for a, b in zip(normed, back)):.2e}"
              f" (float32 storage)")


if __name__ == "__main__":
    main()
