import numpy as np
import pytest

from dkdfmh import data as dt
from dkdfmh import features as ft


class TestSynthCorpus:
    def test_counts_and_balance(self):
        corpus = dt.synth_corpus(5, seed=7)
        assert len(corpus.utterances) == 20
        groups = corpus.by_class()
        assert all(len(groups[c]) == 5 for c in range(4))

    def test_deterministic(self):
        a = dt.synth_corpus(3, seed=11)
        b = dt.synth_corpus(3, seed=11)
        for ua, ub in zip(a.utterances, b.utterances):
            assert ua.utterance_id == ub.utterance_id
            assert (ua.samples == ub.samples).all()

    def test_different_seeds_differ(self):
        a = dt.synth_corpus(2, seed=1)
        b = dt.synth_corpus(2, seed=2)
        assert not np.array_equal(a.utterances[0].samples, b.utterances[0].samples)

    def test_durations_in_range(self):
        corpus = dt.synth_corpus(4, seed=3)
        for u in corpus.utterances:
            dur = len(u.samples) / u.sample_rate
            assert 2.0 <= dur <= 6.0

    def test_n_per_class_validation(self):
        with pytest.raises(ValueError):
            dt.synth_corpus(0, seed=0)

    def test_centroid_classifier_separates_classes(self):
        # the generator must be learnable: nearest-centroid on mean logFBank
        # vectors should reach UA >= 0.9
        corpus = dt.synth_corpus(10, seed=42)
        train, test = dt.split(corpus, dt.SplitSpec(seed=0))
        feats = {
            u.utterance_id: ft.logfbank(u.samples).mean(axis=0)
            for c in (train, test) for u in c.utterances
        }
        centroids = np.zeros((4, 40))
        for label, group in train.by_class().items():
            centroids[label] = np.mean([feats[u.utterance_id] for u in group], axis=0)
        correct = np.zeros(4)
        totals = np.zeros(4)
        for u in test.utterances:
            pred = np.linalg.norm(centroids - feats[u.utterance_id], axis=1).argmin()
            totals[u.label] += 1
            correct[u.label] += pred == u.label
        ua = (correct / totals).mean()
        assert ua >= 0.9

    def test_export_wavs(self, tmp_path):
        corpus = dt.synth_corpus(1, seed=5)
        dt.export_wavs(corpus, tmp_path)
        assert len(list(tmp_path.glob("*.wav"))) == 4


class TestSplit:
    def test_80_20_stratified(self):
        corpus = dt.synth_corpus(25, seed=9)
        train, test = dt.split(corpus, dt.SplitSpec(seed=1))
        assert len(train.utterances) == 80
        assert len(test.utterances) == 20
        assert all(len(g) == 20 for g in train.by_class().values())
        assert all(len(g) == 5 for g in test.by_class().values())

    def test_deterministic(self):
        corpus = dt.synth_corpus(10, seed=9)
        s1 = dt.split(corpus, dt.SplitSpec(seed=4))
        s2 = dt.split(corpus, dt.SplitSpec(seed=4))
        assert [u.utterance_id for u in s1[0].utterances] == \
               [u.utterance_id for u in s2[0].utterances]

    def test_no_leakage(self):
        for seed in range(5):
            corpus = dt.synth_corpus(7, seed=seed)
            train, test = dt.split(corpus, dt.SplitSpec(seed=seed))
            train_ids = {u.utterance_id for u in train.utterances}
            test_ids = {u.utterance_id for u in test.utterances}
            assert not train_ids & test_ids
            assert len(train_ids | test_ids) == len(corpus.utterances)

    def test_fraction_within_one_utterance(self):
        corpus = dt.synth_corpus(13, seed=2)
        train, _ = dt.split(corpus, dt.SplitSpec(seed=0))
        for label, group in train.by_class().items():
            assert abs(len(group) - 0.8 * 13) <= 1

    def test_small_class_rejected(self):
        corpus = dt.Corpus(utterances=[
            dt.AudioClip(np.zeros(100), 16000, "a", 0),
            dt.AudioClip(np.zeros(100), 16000, "b", 0),
            dt.AudioClip(np.zeros(100), 16000, "c", 1),
        ])
        with pytest.raises(ValueError, match="at least 2"):
            dt.split(corpus, dt.SplitSpec())

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            dt.split(dt.Corpus(utterances=[]), dt.SplitSpec())


def make_iemocap_fixture(root, dialogs):
    """Build a minimal session-layout tree.

    ``dialogs``: {dialog_name: [(utt_suffix, token), ...]}
    """
    t = np.arange(32000) / 16000.0
    wav = 0.3 * np.sin(2 * np.pi * 440 * t)
    session = root / "Session1"
    for dialog, utts in dialogs.items():
        wav_dir = session / "sentences" / "wav" / dialog
        wav_dir.mkdir(parents=True)
        eval_dir = session / "dialog" / "EmoEvaluation"
        eval_dir.mkdir(parents=True, exist_ok=True)
        lines = ["% header"]
        for suffix, token in utts:
            uid = f"{dialog}_{suffix}"
            ft.write_wav(wav_dir / f"{uid}.wav", wav)
            lines.append(f"[1.0 - 3.0]\t{uid}\t{token}\t[2.5, 2.5, 2.5]")
        (eval_dir / f"{dialog}.txt").write_text("\n".join(lines))


class TestIngestIemocap:
    DIALOGS = {
        "Ses01F_impro01": [
            ("F000", "ang"), ("F001", "hap"), ("M000", "neu"), ("M001", "sad"),
            ("F002", "exc"), ("M002", "fru"),
        ],
        "Ses01F_script01": [("F000", "ang"), ("M000", "hap")],
        "Ses01M_impro02": [("F000", "ang"), ("M000", "hap"),
                           ("F001", "neu"), ("M001", "sad")],
    }

    def test_empty_root(self, tmp_path):
        with pytest.raises(ValueError, match="no Session"):
            dt.ingest_iemocap(tmp_path)

    def test_fixture_filtering(self, tmp_path):
        make_iemocap_fixture(tmp_path, self.DIALOGS)
        corpus = dt.ingest_iemocap(tmp_path)
        ids = [u.utterance_id for u in corpus.utterances]
        # improvised four-emotion utterances only; exc and fru dropped
        assert len(ids) == 8
        assert all("impro" in i for i in ids)
        assert "Ses01F_impro01_F002" not in ids  # exc dropped under "replace"
        assert "Ses01F_impro01_M002" not in ids  # fru out of scope

    def test_scripted_excluded(self, tmp_path):
        make_iemocap_fixture(tmp_path, self.DIALOGS)
        corpus = dt.ingest_iemocap(tmp_path)
        assert not any("script" in u.utterance_id for u in corpus.utterances)

    def test_combine_policy_relabels_excitement(self, tmp_path):
        make_iemocap_fixture(tmp_path, self.DIALOGS)
        corpus = dt.ingest_iemocap(tmp_path, excitement_policy="combine")
        by_id = {u.utterance_id: u for u in corpus.utterances}
        assert by_id["Ses01F_impro01_F002"].label == 1

    def test_missing_label_file(self, tmp_path):
        make_iemocap_fixture(tmp_path, self.DIALOGS)
        target = tmp_path / "Session1" / "dialog" / "EmoEvaluation" / "Ses01F_impro01.txt"
        target.unlink()
        with pytest.raises(ValueError, match="Ses01F_impro01.txt"):
            dt.ingest_iemocap(tmp_path)

    def test_unknown_token_warns(self, tmp_path):
        dialogs = {
            "Ses01F_impro01": [("F000", "ang"), ("F001", "hap"),
                               ("M000", "neu"), ("M001", "sad"),
                               ("M002", "zzz")],
            "Ses01M_impro02": [("F000", "ang"), ("M000", "hap"),
                               ("F001", "neu"), ("M001", "sad")],
        }
        make_iemocap_fixture(tmp_path, dialogs)
        with pytest.warns(UserWarning, match="skipped 1"):
            dt.ingest_iemocap(tmp_path)
