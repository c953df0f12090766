"""Corpus handling: synthetic 4-class generator, IEMOCAP-layout ingestion,
and deterministic stratified 80/20 splitting by utterance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import SAMPLE_RATE, read_wav, write_wav

CLASS_NAMES = ["angry", "happy", "neutral", "sad"]


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int
    utterance_id: str
    label: int  # 0..3


@dataclass
class Corpus:
    utterances: list
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))
    source: str = "synthetic"

    def by_class(self):
        groups = {i: [] for i in range(len(self.class_names))}
        for u in self.utterances:
            groups[u.label].append(u)
        return groups


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


# ---------------------------------------------------------------------------
# synthetic corpus


def _bandlimited_noise(rng, n, sr, lo, hi):
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / (np.abs(x).max() + 1e-12)


def _chirp(t, f0, f1, dur):
    # linear sweep f0 -> f1 over dur
    return np.sin(2 * np.pi * (f0 * t + (f1 - f0) / (2 * dur) * t * t))


def _synth_signal(rng, label, dur, sr):
    n = int(round(dur * sr))
    t = np.arange(n) / sr
    jitter = rng.uniform(0.9, 1.1)
    if label == 0:
        # band-limited noise with fast 8 Hz amplitude modulation
        carrier = _bandlimited_noise(rng, n, sr, 1500.0, 3500.0)
        x = carrier * (1.0 + 0.9 * np.sin(2 * np.pi * 8.0 * t))
    elif label == 1:
        # rising two-tone chirps
        x = 0.6 * _chirp(t, 300.0 * jitter, 1500.0 * jitter, dur)
        x += 0.4 * _chirp(t, 600.0 * jitter, 3000.0 * jitter, dur)
    elif label == 2:
        # steady mid-band harmonic tone
        f0 = 440.0 * jitter
        x = sum(
            a * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
            for k, a in ((1, 1.0), (2, 0.5), (3, 0.25), (4, 0.125))
        )
    elif label == 3:
        # slow 2 Hz amplitude-modulated low band
        f0 = 120.0 * jitter
        x = np.sin(2 * np.pi * f0 * t) + 0.5 * np.sin(2 * np.pi * 2 * f0 * t)
        x = x * (1.0 + 0.9 * np.sin(2 * np.pi * 2.0 * t))
    else:
        raise ValueError(f"unknown class label {label}")
    x = x / (np.abs(x).max() + 1e-12)
    # additive white noise at 10 dB SNR
    sig_power = np.mean(x**2)
    noise = rng.normal(size=n)
    noise *= np.sqrt(sig_power / 10.0 / np.mean(noise**2))
    x = x + noise
    return 0.9 * x / np.abs(x).max()


def synth_corpus(n_per_class, seed):
    """Deterministic 4-class synthetic corpus of 16 kHz clips.

    Each class carries a distinct spectro-temporal signature; durations are
    uniform in [2, 6] s and everything is derived from ``seed``.
    """
    if n_per_class < 1:
        raise ValueError("synth_corpus: n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    utterances = []
    for label in range(4):
        for i in range(n_per_class):
            dur = rng.uniform(2.0, 6.0)
            samples = _synth_signal(rng, label, dur, SAMPLE_RATE)
            utterances.append(AudioClip(
                samples=samples, sample_rate=SAMPLE_RATE,
                utterance_id=f"synth_{CLASS_NAMES[label]}_{i:03d}", label=label))
    utterances.sort(key=lambda u: u.utterance_id)
    return Corpus(utterances=utterances, source="synthetic")


def export_wavs(corpus, out_dir):
    """Write each utterance as a WAV file for inspection."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for u in corpus.utterances:
        write_wav(out_dir / f"{u.utterance_id}.wav", u.samples, u.sample_rate)


# ---------------------------------------------------------------------------
# splitting


def split(corpus, spec):
    """Seeded stratified split by utterance. Returns (train, test) corpora."""
    if not corpus.utterances:
        raise ValueError("split: corpus is empty")
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for label in sorted(corpus.by_class()):
        group = sorted(corpus.by_class()[label], key=lambda u: u.utterance_id)
        if len(group) < 2:
            raise ValueError(
                f"split: class {CLASS_NAMES[label]} has {len(group)} utterance(s); "
                "need at least 2 to stratify"
            )
        order = rng.permutation(len(group))
        n_train = int(round(spec.train_fraction * len(group)))
        n_train = min(max(n_train, 1), len(group) - 1)
        for pos, idx in enumerate(order):
            (train if pos < n_train else test).append(group[idx])
    return (
        Corpus(sorted(train, key=lambda u: u.utterance_id), corpus.class_names, corpus.source),
        Corpus(sorted(test, key=lambda u: u.utterance_id), corpus.class_names, corpus.source),
    )


# ---------------------------------------------------------------------------
# IEMOCAP-layout ingestion

_EMOTION_TOKENS = {"ang": 0, "hap": 1, "neu": 2, "sad": 3}
_KNOWN_TOKENS = _EMOTION_TOKENS.keys() | {
    "exc", "fru", "sur", "fea", "dis", "oth", "xxx"
}


def _parse_label_file(path):
    """Yield (utterance_id, emotion_token) from an evaluation text file.

    Lines look like: [start - end]\tSesXX_improYY_Z000\temo\t[v, a, d]
    """
    labels = {}
    for line in Path(path).read_text().splitlines():
        if not line.startswith("["):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            continue
        labels[parts[1].strip()] = parts[2].strip()
    return labels


def ingest_iemocap(root, improvised_only=True, excitement_policy="replace"):
    """Read a session-layout corpus: SessionN/dialog/EmoEvaluation/*.txt labels
    and SessionN/sentences/wav/<dialog>/<utt>.wav audio.

    ``excitement_policy``: "replace" keeps happiness as-is and drops
    excitement; "combine" relabels excitement as happiness.
    """
    if excitement_policy not in ("replace", "combine"):
        raise ValueError(f"unknown excitement policy {excitement_policy!r}")
    root = Path(root)
    sessions = sorted(root.glob("Session*"))
    if not sessions:
        raise ValueError(f"ingest_iemocap: no Session directories under {root}")
    token_map = dict(_EMOTION_TOKENS)
    if excitement_policy == "combine":
        token_map["exc"] = 1
    utterances = []
    skipped_unknown = 0
    for session in sessions:
        wav_root = session / "sentences" / "wav"
        for dialog_dir in sorted(p for p in wav_root.iterdir() if p.is_dir()):
            dialog = dialog_dir.name
            if improvised_only and "impro" not in dialog:
                continue
            label_file = session / "dialog" / "EmoEvaluation" / f"{dialog}.txt"
            if not label_file.exists():
                raise ValueError(f"ingest_iemocap: missing label file {label_file}")
            labels = _parse_label_file(label_file)
            for wav_path in sorted(dialog_dir.glob("*.wav")):
                uid = wav_path.stem
                token = labels.get(uid)
                if token is None or token not in _KNOWN_TOKENS:
                    skipped_unknown += 1
                    continue
                if token not in token_map:
                    continue
                samples = read_wav(wav_path)
                utterances.append(AudioClip(
                    samples=samples, sample_rate=SAMPLE_RATE,
                    utterance_id=uid, label=token_map[token]))
    if skipped_unknown:
        warnings.warn(
            f"ingest_iemocap: skipped {skipped_unknown} utterance(s) with "
            "unknown emotion labels"
        )
    utterances.sort(key=lambda u: u.utterance_id)
    counts = {i: 0 for i in range(4)}
    for u in utterances:
        counts[u.label] += 1
    if min(counts.values()) == 0:
        missing = [CLASS_NAMES[i] for i, c in counts.items() if c == 0]
        raise ValueError(f"ingest_iemocap: no utterances for class(es) {missing}")
    return Corpus(utterances=utterances, source="iemocap")
