import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkdfmh import features as ft


def tone(freq, dur=2.0, sr=16000, amp=0.5):
    t = np.arange(int(dur * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


class TestMelFilterbank:
    def test_mel_scale_analytic(self):
        assert ft.mel_scale(0.0) == 0.0
        np.testing.assert_allclose(ft.mel_scale(700.0), 2595.0 * np.log10(2.0))

    def test_weights_nonnegative_and_overlapping(self):
        fb = ft.mel_filterbank(40, 1024, 16000)
        assert fb.shape == (40, 513)
        assert (fb >= 0).all()
        # adjacent filters overlap
        for m in range(39):
            assert ((fb[m] > 0) & (fb[m + 1] > 0)).any()

    def test_coverage_between_first_and_last_center(self):
        fb = ft.mel_filterbank(40, 1024, 16000)
        bin_freqs = np.arange(513) * 16000 / 1024
        centers = ft.mel_to_hz(np.linspace(0, ft.mel_scale(8000), 42))[1:-1]
        inside = (bin_freqs > centers[0]) & (bin_freqs < centers[-1])
        assert (fb.sum(axis=0)[inside] > 0).all()

    def test_too_few_filters(self):
        with pytest.raises(ValueError, match="at least 2"):
            ft.mel_filterbank(1, 1024, 16000)

    def test_nfft_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            ft.mel_filterbank(40, 16, 16000)


class TestLogFBank:
    def test_two_second_clip_gives_197_frames(self):
        out = ft.logfbank(np.zeros(32000))
        assert out.shape == (197, 40)

    def test_silence_hits_log_floor(self):
        out = ft.logfbank(np.zeros(32000))
        np.testing.assert_array_equal(out, np.log(1e-10))

    def test_tone_peaks_in_matching_filter(self):
        out = ft.logfbank(tone(1000.0))
        fb = ft.mel_filterbank(40, 1024, 16000)
        bin_1khz = int(round(1000 * 1024 / 16000))
        expected_filter = fb[:, bin_1khz].argmax()
        assert (out.argmax(axis=1) == expected_filter).all()

    def test_too_short_clip(self):
        with pytest.raises(ValueError, match="shorter than one"):
            ft.logfbank(np.zeros(100))

    def test_shift_covariance_at_hop(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=40000) * 0.1
        base = ft.logfbank(x)
        shifted = ft.logfbank(x[160:])
        n = shifted.shape[0]
        np.testing.assert_allclose(base[1 : n + 1], shifted, atol=1e-9)

    @given(n_samples=st.integers(min_value=640, max_value=100000))
    @settings(max_examples=30, deadline=None)
    def test_frame_count_formula(self, n_samples):
        # direct enumeration of window positions
        count = 0
        start = 0
        while start + 640 <= n_samples:
            count += 1
            start += 160
        assert ft.num_frames(n_samples) == count


class TestSegmentation:
    def test_4_5s_train_split(self):
        feats = ft.logfbank(np.zeros(72000))  # 4.5 s -> 447 frames
        assert feats.shape[0] == 447
        segs = ft.segment(feats, "train")
        assert len(segs) == 4  # starts 0,100,200 full + padded remainder at 300

    def test_2s_single_segment_both_splits(self):
        feats = np.zeros((197, 40))
        assert len(ft.segment(feats, "train")) == 1
        assert len(ft.segment(feats, "test")) == 1

    def test_4_5s_test_split_starts_every_40(self):
        feats = np.arange(447 * 40, dtype=np.float64).reshape(447, 40)
        segs = ft.segment(feats, "test")
        # full windows at 0,40,...,240 then padded remainder at 280
        assert len(segs) == 8
        for i, s in enumerate(segs[:-1]):
            np.testing.assert_array_equal(s.frames, feats[i * 40 : i * 40 + 197])
        np.testing.assert_array_equal(segs[-1].frames[: 447 - 280], feats[280:])
        np.testing.assert_array_equal(segs[-1].frames[447 - 280 :], 0.0)

    def test_segment_indices_and_metadata(self):
        feats = np.zeros((400, 40))
        segs = ft.segment(feats, "train", utterance_id="utt1", label=2)
        assert [s.segment_index for s in segs] == list(range(len(segs)))
        assert all(s.utterance_id == "utt1" and s.label == 2 for s in segs)

    @given(n=st.integers(min_value=197, max_value=1200))
    @settings(max_examples=40, deadline=None)
    def test_test_split_covers_every_frame(self, n):
        feats = np.zeros((n, 2))
        segs = ft.segment(feats, "test")
        covered = np.zeros(n, dtype=bool)
        for i in range(len(segs)):
            lo = i * 40
            covered[lo : min(lo + 197, n)] = True
        assert covered.all()

    def test_bad_split(self):
        with pytest.raises(ValueError, match="split"):
            ft.segment(np.zeros((197, 40)), "validation")


class TestNormalize:
    def _segs(self, seed=0, n=10):
        rng = np.random.default_rng(seed)
        return [
            ft.FeatureSegment(rng.normal(3.0, 2.0, size=(197, 40)), f"u{i}", 0, 0)
            for i in range(n)
        ]

    def test_train_set_standardized(self):
        segs = self._segs()
        stats = ft.compute_stats(segs)
        normed = ft.normalize(segs, stats)
        stacked = np.concatenate([s.frames for s in normed])
        np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(stacked.std(axis=0), 1.0, atol=1e-6)

    def test_constant_bin_floored_to_zero(self):
        segs = [ft.FeatureSegment(np.full((197, 40), 2.5), "u", 0, 0)]
        stats = ft.compute_stats(segs)
        normed = ft.normalize(segs, stats)
        np.testing.assert_array_equal(normed[0].frames, 0.0)

    def test_round_trip(self):
        segs = self._segs(seed=1)
        stats = ft.compute_stats(segs)
        back = ft.denormalize(ft.normalize(segs, stats), stats)
        for a, b in zip(segs, back):
            np.testing.assert_allclose(a.frames, b.frames, atol=1e-9)


class TestCache:
    def test_round_trip_and_bit_exactness(self, tmp_path):
        rng = np.random.default_rng(2)
        segs = [
            ft.FeatureSegment(rng.normal(size=(197, 40)), f"utt_{i}", i % 4, 0)
            for i in range(5)
        ]
        p1, p2 = tmp_path / "a.dkdf", tmp_path / "b.dkdf"
        ft.write_cache(p1, segs)
        ft.write_cache(p2, segs)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = ft.read_cache(p1)
        assert len(loaded) == 5
        for orig, got in zip(segs, loaded):
            assert got.utterance_id == orig.utterance_id
            assert got.label == orig.label
            np.testing.assert_allclose(got.frames, orig.frames, atol=1e-6)

    def test_segment_index_reconstructed(self, tmp_path):
        segs = [
            ft.FeatureSegment(np.zeros((197, 40)), "u1", 0, 0),
            ft.FeatureSegment(np.zeros((197, 40)), "u1", 0, 1),
            ft.FeatureSegment(np.zeros((197, 40)), "u2", 1, 0),
        ]
        path = tmp_path / "c.dkdf"
        ft.write_cache(path, segs)
        loaded = ft.read_cache(path)
        assert [s.segment_index for s in loaded] == [0, 1, 0]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dkdf"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            ft.read_cache(path)


class TestWavIO:
    def test_pcm16_round_trip(self, tmp_path):
        x = tone(440.0)
        path = tmp_path / "t.wav"
        ft.write_wav(path, x)
        back = ft.read_wav(path)
        np.testing.assert_allclose(back, x, atol=1e-3)

    def test_stereo_averaged(self, tmp_path):
        import scipy.io.wavfile
        path = tmp_path / "st.wav"
        left = (tone(440.0) * 32767).astype(np.int16)
        right = np.zeros_like(left)
        scipy.io.wavfile.write(path, 16000, np.stack([left, right], axis=1))
        mono = ft.read_wav(path)
        np.testing.assert_allclose(mono, tone(440.0) / 2, atol=1e-3)

    def test_resampled(self, tmp_path):
        import scipy.io.wavfile
        path = tmp_path / "8k.wav"
        t = np.arange(8000) / 8000.0
        x = (0.5 * np.sin(2 * np.pi * 100 * t) * 32767).astype(np.int16)
        scipy.io.wavfile.write(path, 8000, x)
        y = ft.read_wav(path)
        assert len(y) == 16000
