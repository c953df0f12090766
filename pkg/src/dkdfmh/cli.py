"""Command-line front end: features -> train -> eval -> reports.

Subcommands: ``features``, ``train``, ``eval``, ``ablation``, ``beta-sweep``.
Every run emits a JSON manifest recording the effective configuration, the
three seeds (data, init, shuffle), and content hashes of inputs and produced
artifacts, so a run can be reproduced and checked byte for byte.

Exit codes: 0 success; 2 usage or missing-input errors; 1 runtime failures.
The env var DKDFMH_THREADS caps BLAS thread counts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dt
from . import distill as dl
from . import features as ft
from . import metrics as mt
from . import model as md
from . import train as tr


class UsageError(ValueError):
    """Bad invocation or missing input; maps to exit code 2."""


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, seeds, inputs, artifacts):
    """Manifest: config snapshot, seeds, and content hashes of all files."""
    manifest = {
        "tool": "dkdfmh",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "artifacts": {str(p): sha256_file(p) for p in artifacts},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_config_file(path):
    """`key = value` lines; '#' comments; values parsed as JSON when possible."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    cfg = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        value = value.strip()
        try:
            cfg[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key.strip()] = value
    return cfg


# ---------------------------------------------------------------------------
# features


def _prepare_corpus(args):
    if args.synthetic:
        return dt.synth_corpus(args.n_per_class, seed=args.data_seed)
    if args.in_dir is None:
        raise UsageError("features: need --synthetic or --in-dir")
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise UsageError(f"features: input directory not found: {in_dir}")
    if any(in_dir.glob("Session*")):
        return dt.ingest_iemocap(in_dir,
                                 excitement_policy=args.excitement_policy)
    # flat directory of wavs named <anything>_<class>_<id>.wav
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        raise UsageError(f"features: no .wav files or Session*/ under {in_dir}")
    utterances = []
    errors = []
    for path in wavs:
        label = next((i for i, name in enumerate(dt.CLASS_NAMES)
                      if f"_{name}_" in path.name), None)
        if label is None:
            errors.append(f"{path}: class name not found in filename")
            continue
        try:
            samples = ft.read_wav(path)
        except Exception as exc:
            errors.append(f"{path}: {exc}")
            continue
        utterances.append(dt.AudioClip(samples, ft.SAMPLE_RATE,
                                       path.stem, label))
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        raise UsageError(f"features: {len(errors)} unreadable input file(s)")
    return dt.Corpus(utterances=utterances, source="iemocap")


def cmd_features(args):
    corpus = _prepare_corpus(args)
    train_corpus, test_corpus = dt.split(
        corpus, dt.SplitSpec(seed=args.data_seed))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def extract(split_corpus, split):
        segs = []
        for u in split_corpus.utterances:
            feats = ft.logfbank(u.samples)
            segs.extend(ft.segment(feats, split, utterance_id=u.utterance_id,
                                   label=u.label))
        return segs

    train_segs = extract(train_corpus, "train")
    test_segs = extract(test_corpus, "test")
    stats = ft.compute_stats(train_segs)
    train_segs = ft.normalize(train_segs, stats)
    test_segs = ft.normalize(test_segs, stats)
    paths = []
    for name, segs in (("train", train_segs), ("test", test_segs)):
        path = out_dir / f"{name}.dkdf"
        ft.write_cache(path, segs)
        paths.append(path)
        counts = {c: 0 for c in range(md.N_CLASSES)}
        for s in segs:
            counts[s.label] += 1
        pretty = ", ".join(f"{dt.CLASS_NAMES[c]}={n}"
                           for c, n in counts.items())
        print(f"{name}: {len(segs)} segments ({pretty})")
    write_manifest(
        out_dir, "features",
        config={"synthetic": args.synthetic, "n_per_class": args.n_per_class,
                "in_dir": args.in_dir,
                "excitement_policy": args.excitement_policy},
        seeds={"data": args.data_seed},
        inputs=[], artifacts=paths)
    return 0


# ---------------------------------------------------------------------------
# train


def _cache_paths(cache):
    cache = Path(cache)
    if cache.is_file():
        return cache, None
    train_path = cache / "train.dkdf"
    test_path = cache / "test.dkdf"
    if not train_path.exists():
        raise UsageError(f"feature cache not found: {train_path}")
    return train_path, (test_path if test_path.exists() else None)


def _load_cache(cache):
    train_path, test_path = _cache_paths(cache)
    train_segs = ft.read_cache(train_path)
    test_segs = ft.read_cache(test_path) if test_path else []
    return train_segs, test_segs, [p for p in (train_path, test_path) if p]


def _train_config(args):
    base = {}
    if args.config:
        base = read_config_file(args.config)
    distill_keys = {f.name for f in dl.DistillConfig.__dataclass_fields__.values()}
    train_keys = {f.name for f in tr.TrainConfig.__dataclass_fields__.values()}
    dcfg = {k: v for k, v in base.items() if k in distill_keys}
    tcfg = {k: v for k, v in base.items() if k in train_keys - {"distill"}}
    unknown = set(base) - distill_keys - train_keys
    if unknown:
        raise UsageError(f"config: unknown key(s) {sorted(unknown)}")
    # flags override file values
    for key in ("batch_size", "epochs", "lr0", "decay", "seed",
                "init_seed", "shuffle_seed"):
        value = getattr(args, key, None)
        if value is not None:
            tcfg[key] = value
    for key in ("variant", "alpha", "beta", "temperature"):
        value = getattr(args, key, None)
        if value is not None:
            dcfg[key] = value
    cfg = tr.TrainConfig(**tcfg, distill=dl.DistillConfig(**dcfg))
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    return cfg


def _progress(record):
    print(f"epoch {record.epoch}: total={record.total:.4f} "
          f"wa={record.wa:.3f} ua={record.ua:.3f} "
          f"({record.seconds:.1f}s)")


def cmd_train(args):
    cfg = _train_config(args)
    train_segs, test_segs, inputs = _load_cache(args.cache)
    teacher = None
    if args.role == "student":
        if cfg.distill.variant != "ce_only":
            if args.teacher_ckpt is None:
                raise UsageError(
                    f"train: variant {cfg.distill.variant!r} requires "
                    "--teacher-ckpt")
            teacher = md.load_checkpoint(args.teacher_ckpt)
            inputs.append(Path(args.teacher_ckpt))
        net, log = tr.train_student(train_segs, test_segs, teacher, cfg,
                                    progress=_progress)
    else:
        net, log = tr.train_teacher(train_segs, test_segs, cfg,
                                    progress=_progress)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "final.dkdm"
    md.save_checkpoint(ckpt_path, net)
    log_path = out_dir / "runlog.csv"
    log.to_csv(log_path)
    config_snapshot = {**cfg.__dict__, "distill": cfg.distill.__dict__,
                       "role": args.role}
    write_manifest(
        out_dir, "train", config=config_snapshot,
        seeds={"data": None, "init": cfg.resolved_init_seed(),
               "shuffle": cfg.resolved_shuffle_seed()},
        inputs=inputs, artifacts=[ckpt_path, log_path])
    last = log.records[-1]
    print(f"final: wa={last.wa:.3f} ua={last.ua:.3f}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise UsageError(f"eval: checkpoint not found: {ckpt}")
    cache = Path(args.cache)
    if not cache.exists():
        raise UsageError(f"eval: feature cache not found: {cache}")
    net = md.load_checkpoint(ckpt)
    segs = ft.read_cache(cache if cache.is_file() else cache / "test.dkdf")
    cm = mt.ConfusionMatrix.from_pairs(tr.evaluate(net, segs))
    blob = mt.metrics_json(cm)
    print(f"wa={mt.wa(cm):.4f} ua={mt.ua(cm):.4f}")
    print(cm.to_text())
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(blob + "\n")
        (out_dir / "confusion.txt").write_text(cm.to_text() + "\n")
        write_manifest(out_dir, "eval", config={"ckpt": str(ckpt)},
                       seeds={}, inputs=[ckpt],
                       artifacts=[out_dir / "metrics.json",
                                  out_dir / "confusion.txt"])
    return 0


# ---------------------------------------------------------------------------
# experiment harnesses


def cmd_ablation(args):
    cfg = _train_config(args)
    train_segs, test_segs, inputs = _load_cache(args.cache)
    report = mt.run_ablation(train_segs, test_segs, cfg,
                             progress=lambda name: print(f"training {name}"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "ablation.csv"
    report.to_csv(path)
    write_manifest(out_dir, "ablation",
                   config={**cfg.__dict__, "distill": cfg.distill.__dict__},
                   seeds={"init": cfg.resolved_init_seed(),
                          "shuffle": cfg.resolved_shuffle_seed()},
                   inputs=inputs, artifacts=[path])
    print(path.read_text(), end="")
    failures = [name for name, _, _, err in report.rows if err]
    return 1 if failures else 0


def cmd_beta_sweep(args):
    cfg = _train_config(args)
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"beta-sweep: bad --betas value {args.betas!r}")
    if not betas:
        raise UsageError("beta-sweep: --betas is empty")
    train_segs, test_segs, inputs = _load_cache(args.cache)
    csv = mt.run_beta_sweep(train_segs, test_segs, cfg, betas=betas,
                            progress=lambda name: print(f"training {name}"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "beta_sweep.csv"
    path.write_text(csv)
    write_manifest(out_dir, "beta-sweep",
                   config={**cfg.__dict__, "distill": cfg.distill.__dict__,
                           "betas": betas},
                   seeds={"init": cfg.resolved_init_seed(),
                          "shuffle": cfg.resolved_shuffle_seed()},
                   inputs=inputs, artifacts=[path])
    print(csv, end="")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _add_train_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", dest="init_seed", type=int)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)
    p.add_argument("--variant", choices=dl.VARIANTS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--temperature", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dkdfmh",
        description="Decoupled knowledge distillation for spectrogram "
                    "emotion classification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract logFBank feature caches")
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in synthetic corpus")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=25)
    p.add_argument("--in-dir", dest="in_dir",
                   help="audio directory (session layout or flat wavs)")
    p.add_argument("--excitement-policy", dest="excitement_policy",
                   choices=["replace", "combine"], default="replace")
    p.add_argument("--seed", dest="data_seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", help="train a teacher or student")
    p.add_argument("--role", choices=["teacher", "student"], required=True)
    p.add_argument("--cache", required=True, help="feature cache dir or file")
    p.add_argument("--teacher-ckpt", dest="teacher_ckpt")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cache")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablation", help="run the six-configuration ablation")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("beta-sweep", help="sweep the NCKD weight")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--betas", default="1,2,4,8,16")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_beta_sweep)
    return parser


def _apply_thread_cap():
    cap = os.environ.get("DKDFMH_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise UsageError(f"DKDFMH_THREADS must be an integer, got {cap!r}")
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
