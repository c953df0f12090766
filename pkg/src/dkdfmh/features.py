"""Log mel-filterbank front-end and fixed-length segmentation.

Audio is framed with a 0.04 s Hamming window and a 0.01 s hop, run through a
40-filter triangular mel filterbank, and log-compressed. Feature matrices are
then cut into 2 s (197-frame) segments: hop 1.0 s for the training split and
0.4 s for the test split, with a >=50 % final remainder zero-padded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

SAMPLE_RATE = 16000
N_FILTERS = 40
WIN_LEN = 0.04
HOP_LEN = 0.01
SEGMENT_FRAMES = 197
TRAIN_HOP_FRAMES = 100  # 1.0 s
TEST_HOP_FRAMES = 40  # 0.4 s
LOG_FLOOR = 1e-10

CACHE_MAGIC = b"DKDF"
CACHE_VERSION = 1


@dataclass
class FeatureSegment:
    """One fixed-size log-mel spectrogram slice of an utterance."""

    frames: np.ndarray  # [SEGMENT_FRAMES, N_FILTERS]
    utterance_id: str
    label: int
    segment_index: int


@dataclass
class FeatureStats:
    """Per-mel-bin standardization statistics, computed on the train split."""

    mean: np.ndarray  # [N_FILTERS]
    std: np.ndarray  # [N_FILTERS], floored at 1e-8


def mel_scale(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters=N_FILTERS, nfft=1024, sample_rate=SAMPLE_RATE):
    """Triangular filters with centers equally spaced on the mel scale.

    Returns a [n_filters, nfft//2 + 1] weight matrix spanning 0..Nyquist.
    Weights are evaluated at the bin frequencies directly (no bin snapping),
    so no filter can end up empty unless nfft is genuinely too coarse.
    """
    if n_filters < 2:
        raise ValueError(f"mel_filterbank: need at least 2 filters, got {n_filters}")
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(0.0, mel_scale(nyquist), n_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    weights = np.zeros((n_filters, nfft // 2 + 1))
    for m in range(n_filters):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        weights[m] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not weights[m].any():
            raise ValueError(
                f"mel_filterbank: nfft={nfft} too small to resolve filter {m} "
                f"(center {center:.1f} Hz)"
            )
    return weights


def num_frames(n_samples, sample_rate=SAMPLE_RATE, win_len=WIN_LEN, hop=HOP_LEN):
    win = int(round(win_len * sample_rate))
    step = int(round(hop * sample_rate))
    if n_samples < win:
        return 0
    return (n_samples - win) // step + 1


def logfbank(samples, sample_rate=SAMPLE_RATE, n_filters=N_FILTERS,
             win_len=WIN_LEN, hop=HOP_LEN):
    """Log mel-filterbank energies, one row per frame.

    Hamming window, magnitude-squared FFT (size = next power of two >= window
    length), natural log floored at LOG_FLOOR.
    """
    samples = np.asarray(samples, dtype=np.float64)
    win = int(round(win_len * sample_rate))
    step = int(round(hop * sample_rate))
    n = num_frames(len(samples), sample_rate, win_len, hop)
    if n == 0:
        raise ValueError(
            f"logfbank: clip of {len(samples)} samples is shorter than one "
            f"{win}-sample window"
        )
    nfft = 1 << (win - 1).bit_length()
    window = np.hamming(win)
    starts = np.arange(n) * step
    frames = samples[starts[:, None] + np.arange(win)] * window
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    fb = mel_filterbank(n_filters, nfft, sample_rate)
    energies = power @ fb.T
    return np.log(np.maximum(energies, LOG_FLOOR))


def segment(features, split, utterance_id="", label=0):
    """Cut a [frames, bins] matrix into fixed 197-frame segments.

    Full windows start at multiples of the split's hop. A final partial
    window is zero-padded and kept only if it is at least half a segment long
    and reaches past the frames already covered.
    """
    if split not in ("train", "test"):
        raise ValueError(f"segment: split must be 'train' or 'test', got {split!r}")
    hop = TRAIN_HOP_FRAMES if split == "train" else TEST_HOP_FRAMES
    n = features.shape[0]
    half = (SEGMENT_FRAMES + 1) // 2
    segments = []
    start = 0
    covered = 0
    while start + SEGMENT_FRAMES <= n:
        segments.append(FeatureSegment(
            frames=features[start : start + SEGMENT_FRAMES].copy(),
            utterance_id=utterance_id, label=label, segment_index=len(segments)))
        covered = start + SEGMENT_FRAMES
        start += hop
    remainder = n - start
    if remainder >= half and n > covered:
        padded = np.zeros((SEGMENT_FRAMES, features.shape[1]))
        padded[:remainder] = features[start:]
        segments.append(FeatureSegment(
            frames=padded, utterance_id=utterance_id, label=label,
            segment_index=len(segments)))
    return segments


def compute_stats(segments):
    """Per-bin mean/std over a list of (train) segments."""
    stacked = np.concatenate([s.frames for s in segments], axis=0)
    std = stacked.std(axis=0)
    return FeatureStats(mean=stacked.mean(axis=0), std=np.maximum(std, 1e-8))


def normalize(segments, stats):
    """Standardize each mel bin with train-split statistics."""
    return [
        FeatureSegment(
            frames=(s.frames - stats.mean) / stats.std,
            utterance_id=s.utterance_id, label=s.label,
            segment_index=s.segment_index)
        for s in segments
    ]


def denormalize(segments, stats):
    return [
        FeatureSegment(
            frames=s.frames * stats.std + stats.mean,
            utterance_id=s.utterance_id, label=s.label,
            segment_index=s.segment_index)
        for s in segments
    ]


# ---------------------------------------------------------------------------
# WAV ingestion


def read_wav(path, target_rate=SAMPLE_RATE):
    """Read a PCM16 or float32 WAV as mono float64 in [-1, 1].

    Stereo is averaged to mono; other sample rates are linearly resampled.
    """
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"read_wav: unsupported sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != target_rate:
        n_out = int(round(len(samples) * target_rate / rate))
        samples = np.interp(
            np.arange(n_out) * rate / target_rate,
            np.arange(len(samples)), samples)
    return samples


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, sample_rate, pcm)


# ---------------------------------------------------------------------------
# feature cache


def write_cache(path, segments):
    """Write segments in the binary cache format (bit-exact across platforms).

    Layout: magic "DKDF", version u16, segment count u32, then per segment
    frames u16, bins u16, label u32, utterance-id length u32 + UTF-8 bytes,
    and frames*bins little-endian float32 values.
    """
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<H", CACHE_VERSION))
        f.write(struct.pack("<I", len(segments)))
        for s in segments:
            frames, bins = s.frames.shape
            uid = s.utterance_id.encode("utf-8")
            f.write(struct.pack("<HHI", frames, bins, s.label))
            f.write(struct.pack("<I", len(uid)))
            f.write(uid)
            f.write(s.frames.astype("<f4").tobytes())


def read_cache(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CACHE_MAGIC:
            raise ValueError(f"read_cache: bad magic {magic!r} in {path}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CACHE_VERSION:
            raise ValueError(f"read_cache: unsupported version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        per_utterance_index = {}
        segments = []
        for _ in range(count):
            frames, bins, label = struct.unpack("<HHI", f.read(8))
            (uid_len,) = struct.unpack("<I", f.read(4))
            uid = f.read(uid_len).decode("utf-8")
            raw = f.read(frames * bins * 4)
            mat = np.frombuffer(raw, dtype="<f4").reshape(frames, bins)
            idx = per_utterance_index.get(uid, 0)
            per_utterance_index[uid] = idx + 1
            segments.append(FeatureSegment(
                frames=mat.astype(np.float64), utterance_id=uid,
                label=int(label), segment_index=idx))
        return segments
