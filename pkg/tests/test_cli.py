import json

import numpy as np
import pytest

from dkdfmh import cli
from dkdfmh import data as dt
from dkdfmh import features as ft
from dkdfmh import model as md


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def synth_cache(tmp_path_factory):
    """A small synthetic feature cache shared by the training tests."""
    out = tmp_path_factory.mktemp("cache")
    rc = run_cli("features", "--synthetic", "--n-per-class", "3",
                 "--seed", "0", "--out", str(out))
    assert rc == 0
    return out


class TestConfigFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "epochs = 3        # short run\n"
            "lr0 = 1e-3\n"
            "variant = dkd\n"
            "beta = 8\n"
            "\n")
        cfg = cli.read_config_file(path)
        assert cfg == {"epochs": 3, "lr0": 1e-3, "variant": "dkd", "beta": 8}

    def test_missing_file(self, tmp_path):
        with pytest.raises(cli.UsageError, match="not found"):
            cli.read_config_file(tmp_path / "nope.cfg")

    def test_bad_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs 3\n")
        with pytest.raises(cli.UsageError, match="key = value"):
            cli.read_config_file(path)

    def test_unknown_key_rejected(self, tmp_path, synth_cache):
        path = tmp_path / "run.cfg"
        path.write_text("momentum = 0.9\n")
        rc = run_cli("train", "--role", "teacher", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "run"), "--config", str(path))
        assert rc == 2

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = 50\nseed = 1\n")

        class Args:
            config = str(path)
            batch_size = None
            epochs = 2
            lr0 = None
            decay = None
            seed = None
            init_seed = None
            shuffle_seed = None
            variant = None
            alpha = None
            beta = None
            temperature = None

        cfg = cli._train_config(Args())
        assert cfg.epochs == 2 and cfg.seed == 1


class TestFeatures:
    def test_synthetic_deterministic_hash(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("features", "--synthetic", "--n-per-class", "2",
                           "--seed", "5", "--out", str(out)) == 0
        assert (a / "train.dkdf").read_bytes() == (b / "train.dkdf").read_bytes()
        assert (a / "test.dkdf").read_bytes() == (b / "test.dkdf").read_bytes()

    def test_missing_directory_exit_2(self, tmp_path, capsys):
        rc = run_cli("features", "--in-dir", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "o"))
        assert rc == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and err.count("\n") == 1

    def test_no_source_exit_2(self, tmp_path):
        assert run_cli("features", "--out", str(tmp_path / "o")) == 2

    def test_manifest_lists_artifacts(self, synth_cache):
        manifest = json.loads((synth_cache / "manifest.json").read_text())
        hashed = [p for p in manifest["artifacts"]]
        assert any(p.endswith("train.dkdf") for p in hashed)
        assert any(p.endswith("test.dkdf") for p in hashed)
        assert manifest["seeds"] == {"data": 0}
        assert manifest["version"]

    def test_two_second_wav_single_segment(self, tmp_path):
        in_dir = tmp_path / "wavs"
        in_dir.mkdir()
        t = np.arange(32000) / 16000.0
        for name in dt.CLASS_NAMES:
            for i in range(2):
                ft.write_wav(in_dir / f"x_{name}_{i}.wav",
                             0.4 * np.sin(2 * np.pi * (300 + 100 * i) * t))
        out = tmp_path / "o"
        assert run_cli("features", "--in-dir", str(in_dir),
                       "--out", str(out)) == 0
        # every utterance is exactly 2 s -> exactly 1 segment each
        train = ft.read_cache(out / "train.dkdf")
        test = ft.read_cache(out / "test.dkdf")
        assert len(train) == 4 and len(test) == 4
        assert all(s.frames.shape == (197, 40) for s in train + test)

    def test_unreadable_wav_reported(self, tmp_path, capsys):
        in_dir = tmp_path / "wavs"
        in_dir.mkdir()
        t = np.arange(32000) / 16000.0
        for name in dt.CLASS_NAMES:
            for i in range(2):
                ft.write_wav(in_dir / f"x_{name}_{i}.wav",
                             0.4 * np.sin(2 * np.pi * 440 * t))
        (in_dir / "x_happy_9.wav").write_bytes(b"not a wav file")
        rc = run_cli("features", "--in-dir", str(in_dir),
                     "--out", str(tmp_path / "o"))
        assert rc == 2
        assert "x_happy_9.wav" in capsys.readouterr().err


class TestTrainEval:
    def test_teacher_student_eval_pipeline(self, synth_cache, tmp_path):
        teacher_dir = tmp_path / "teacher"
        rc = run_cli("train", "--role", "teacher", "--cache", str(synth_cache),
                     "--out", str(teacher_dir), "--epochs", "1",
                     "--batch-size", "8", "--seed", "0")
        assert rc == 0
        assert (teacher_dir / "final.dkdm").exists()
        log = (teacher_dir / "runlog.csv").read_text().splitlines()
        assert log[0] == "epoch,total,ce,tckd,nckd,wa,ua,seconds"
        assert len(log) == 2  # one epoch

        student_dir = tmp_path / "student"
        rc = run_cli("train", "--role", "student", "--cache", str(synth_cache),
                     "--teacher-ckpt", str(teacher_dir / "final.dkdm"),
                     "--out", str(student_dir), "--epochs", "1",
                     "--batch-size", "8", "--seed", "1", "--variant", "dkd")
        assert rc == 0
        row = (student_dir / "runlog.csv").read_text().splitlines()[1]
        tckd_col, nckd_col = row.split(",")[3:5]
        assert float(tckd_col) > 0 and float(nckd_col) > 0

        eval_dir = tmp_path / "eval"
        rc = run_cli("eval", "--ckpt", str(student_dir / "final.dkdm"),
                     "--cache", str(synth_cache), "--out", str(eval_dir))
        assert rc == 0
        blob = json.loads((eval_dir / "metrics.json").read_text())
        assert set(blob) == {"wa", "ua", "confusion"}
        assert (eval_dir / "confusion.txt").read_text().strip()

    def test_student_without_teacher_ckpt_usage_error(self, synth_cache,
                                                      tmp_path):
        rc = run_cli("train", "--role", "student", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "s"), "--epochs", "1",
                     "--variant", "dkd")
        assert rc == 2

    def test_missing_cache_exit_2(self, tmp_path):
        rc = run_cli("train", "--role", "teacher",
                     "--cache", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o"), "--epochs", "1")
        assert rc == 2

    def test_eval_missing_ckpt_exit_2(self, synth_cache, tmp_path):
        rc = run_cli("eval", "--ckpt", str(tmp_path / "none.dkdm"),
                     "--cache", str(synth_cache))
        assert rc == 2

    def test_invalid_config_value_exit_2(self, synth_cache, tmp_path):
        rc = run_cli("train", "--role", "teacher", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "o"), "--epochs", "0")
        assert rc == 2

    def test_thread_cap_applied(self, synth_cache, tmp_path, monkeypatch):
        monkeypatch.setenv("DKDFMH_THREADS", "1")
        rc = run_cli("train", "--role", "teacher", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "o"), "--epochs", "1",
                     "--batch-size", "8")
        assert rc == 0

    def test_bad_thread_cap_exit_2(self, synth_cache, tmp_path, monkeypatch):
        monkeypatch.setenv("DKDFMH_THREADS", "lots")
        rc = run_cli("train", "--role", "teacher", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "o"), "--epochs", "1")
        assert rc == 2


class TestHarnessCommands:
    def test_ablation_csv(self, synth_cache, tmp_path):
        out = tmp_path / "abl"
        rc = run_cli("ablation", "--cache", str(synth_cache),
                     "--out", str(out), "--epochs", "1", "--batch-size", "8")
        assert rc == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        body = [l for l in lines if not l.startswith("#")]
        assert body[0] == "config,wa,ua,status"
        assert len(body) == 7
        assert body[-1].startswith("DKDFMH,")
        assert any("79.1" in l for l in lines if l.startswith("#"))

    def test_beta_sweep_csv(self, synth_cache, tmp_path):
        out = tmp_path / "sweep"
        rc = run_cli("beta-sweep", "--cache", str(synth_cache),
                     "--out", str(out), "--epochs", "1", "--batch-size", "8",
                     "--betas", "2,8")
        assert rc == 0
        body = [l for l in (out / "beta_sweep.csv").read_text().splitlines()
                if not l.startswith("#")]
        assert body[0] == "beta,wa,ua"
        assert len(body) == 3

    def test_bad_betas_exit_2(self, synth_cache, tmp_path):
        rc = run_cli("beta-sweep", "--cache", str(synth_cache),
                     "--out", str(tmp_path / "o"), "--betas", "a,b")
        assert rc == 2
