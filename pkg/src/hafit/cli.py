"""Command-line entry points.

Subcommands: ``fit`` (train gains for an audiogram), ``prescribe`` (NAL-R
baseline), ``evaluate`` (score processors on a corpus split), ``gradcheck``
(finite-difference verification of the gradient path), and ``make-corpus``
(deterministic synthetic speech-like test corpus).

Exit codes: 0 success; 1 a verification/check failed; 2 usage or input
error. Audiograms are given as a JSON file path or a label: one of the
bundled standard audiograms (N1..N7, S1..S3), ``zero``, or ``flat<dB>``
(e.g. ``flat40``).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, report, synth, training
from .auditory import AUDIOGRAM_FREQS, Audiogram, standard_audiograms
from .pipeline import FitObjective, finite_difference_check
from .processors import GainParams, gains_to_fir, identity_filter, nalr_gains
from .training import CB_POLICIES, TrainingConfig


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def resolve_audiogram(spec: str) -> Audiogram:
    """Audiogram from a label (N1..S3, zero, flat<dB>) or a JSON file path."""
    bundled = standard_audiograms()
    if spec in bundled:
        return bundled[spec]
    if spec == "zero":
        return Audiogram.zero()
    flat = re.fullmatch(r"flat(\d{1,3})", spec)
    if flat:
        level = float(flat.group(1))
        return Audiogram(spec, np.full(len(AUDIOGRAM_FREQS), level))
    path = Path(spec)
    if path.is_file():
        try:
            return Audiogram.from_json(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"malformed audiogram file {path}: {exc}") from exc
    raise UsageError(
        f"audiogram {spec!r} is neither a bundled label "
        f"({', '.join(sorted(bundled))}, zero, flat<dB>) nor a readable file")


def _load_config(args) -> TrainingConfig:
    try:
        cfg = (TrainingConfig.from_file(args.config)
               if getattr(args, "config", None) else TrainingConfig())
        return cfg.with_overrides(
            epochs=getattr(args, "epochs", None),
            rng_seed=getattr(args, "seed", None),
            audiogram=getattr(args, "audiogram", None))
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _load_corpus(args, cfg: TrainingConfig) -> training.CorpusIndex:
    try:
        return training.load_corpus(args.corpus, split=cfg.split,
                                    segment_seconds=cfg.segment_seconds)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(f"bad corpus: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    ag = resolve_audiogram(args.audiogram)
    idx = _load_corpus(args, cfg)
    out = _out_dir(args)

    def progress(row):
        if row.val_loss is not None:
            print(f"epoch {row.epoch}: train {row.train_loss:.6f} "
                  f"val {row.val_loss:.6f}")

    result = training.train(cfg, idx, ag, out_dir=out, progress=progress)
    result.params.to_json(out / "gains.json")
    prescribed = nalr_gains(ag)
    prescribed.to_json(out / "nalr.json")
    report.write_history_csv(out / "history.csv", result.history)
    report.response_plot(
        out / "response.svg",
        {"trained": gains_to_fir(result.params, source="trained"),
         "NAL-R": gains_to_fir(prescribed, source="prescribed")},
        title=f"audiogram {ag.label}")
    outputs = ["gains.json", "nalr.json", "history.csv", "response.svg",
               "checkpoint.json"]
    report.RunManifest(command="fit", config=cfg.to_mapping(),
                       seed=cfg.rng_seed,
                       corpus_sha256=report.corpus_hash(args.corpus),
                       outputs=tuple(outputs)).save(out)
    best = ("n/a" if result.best_val_loss is None
            else f"{result.best_val_loss:.6f} at epoch {result.best_epoch}")
    print(f"trained gains (dB): {np.round(result.params.gains, 3).tolist()}")
    print(f"best validation loss: {best}")
    print(f"outputs in {out}")
    return 0


def cmd_prescribe(args) -> int:
    ag = resolve_audiogram(args.audiogram)
    out = _out_dir(args)
    prescribed = nalr_gains(ag)
    prescribed.to_json(out / "gains.json")
    report.response_plot(
        out / "response.svg",
        {"NAL-R": gains_to_fir(prescribed, source="prescribed")},
        title=f"audiogram {ag.label}")
    report.RunManifest(command="prescribe", config=None, seed=None,
                       corpus_sha256=None,
                       outputs=("gains.json", "response.svg")).save(out)
    print(f"NAL-R gains (dB) at {AUDIOGRAM_FREQS.astype(int).tolist()} Hz: "
          f"{np.round(prescribed.gains, 3).tolist()}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ag = resolve_audiogram(args.audiogram)
    idx = _load_corpus(args, cfg)
    out = _out_dir(args)
    procs = []
    for spec in args.gains:
        if spec == "identity":
            procs.append(("unprocessed", identity_filter()))
            continue
        path = Path(spec)
        if not path.is_file():
            raise UsageError(f"gains record not found: {spec}")
        try:
            params = GainParams.from_json(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"malformed gains record {spec}: {exc}") from exc
        procs.append((params.label or path.stem, params))

    nh_frames = training.nh_reference_frames(idx, args.split)
    reports = []
    for label, proc in procs:
        rep = training.evaluate(proc, idx, ag, split=args.split,
                                cb_policy=args.cb_policy,
                                nh_frames=nh_frames, label=label)
        reports.append(rep)
        print(f"{rep.processor}: cepstral {rep.mean_cepstral:.4f} "
              f"(sem {rep.sem_cepstral:.4f}), intelligibility "
              f"{rep.mean_haspi:.4f} (sem {rep.sem_haspi:.4f})")
    report.write_report_csv(out / "report.csv", reports)
    report.write_scores_csv(out / "scores.csv", reports)
    report.score_bar_chart(out / "scores.svg", reports,
                           title=f"audiogram {ag.label} ({args.split} split)")
    report.RunManifest(command="evaluate", config=cfg.to_mapping(),
                       seed=cfg.rng_seed,
                       corpus_sha256=report.corpus_hash(args.corpus),
                       outputs=("report.csv", "scores.csv",
                                "scores.svg")).save(out)
    print(f"outputs in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    ag = resolve_audiogram(args.audiogram)
    idx = _load_corpus(args, cfg)
    from .auditory import AuditoryModel
    nh_model, hi_model = AuditoryModel(None), AuditoryModel(ag)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    gains = np.full(len(AUDIOGRAM_FREQS), cfg.init_gain_db)
    results = []
    worst = 0.0
    for i in range(args.segments):
        seg = training.sample_segment(idx, cfg, rng, split="train")
        objf = FitObjective(seg.samples, hi_model, nh_model, alpha=cfg.alpha)
        res = finite_difference_check(objf, gains)
        results.append(res)
        worst = max(worst, res.max_rel_err)
        print(f"segment {i}: max relative error {res.max_rel_err:.3e} "
              f"({'pass' if res.passed else 'FAIL'})")
        for row in res.rows:
            print(f"  g[{row.index}]: analytic {row.analytic:+.6e} "
                  f"numeric {row.numeric:+.6e} rel {row.rel_err:.3e} "
                  f"(step {row.step:g})")
    if args.out:
        out = _out_dir(args)
        report.write_gradcheck_csv(out / "gradcheck.csv", results)
        report.RunManifest(command="gradcheck", config=cfg.to_mapping(),
                           seed=cfg.rng_seed,
                           corpus_sha256=report.corpus_hash(args.corpus),
                           outputs=("gradcheck.csv",)).save(out)
    passed = all(r.passed for r in results)
    print(f"gradient check: {'PASS' if passed else 'FAIL'} "
          f"(worst relative error {worst:.3e})")
    return 0 if passed else 1


def cmd_make_corpus(args) -> int:
    out = Path(args.out)
    paths = synth.write_corpus(out, n_files=args.files,
                               seconds=args.seconds, seed=args.seed)
    report.RunManifest(command="make-corpus",
                       config={"files": args.files, "seconds": args.seconds},
                       seed=args.seed, corpus_sha256=report.corpus_hash(out),
                       outputs=tuple(p.name for p in paths)).save(out)
    print(f"wrote {len(paths)} utterances "
          f"({args.files * args.seconds / 60:.1f} min) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hafit",
        description="Differentiable hearing-aid fitting toolkit")
    parser.add_argument("--version", action="version",
                        version=f"hafit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True, out=True):
        p.add_argument("--audiogram", required=True,
                       help="label (N1..S3, zero, flat<dB>) or JSON path")
        if corpus:
            p.add_argument("--corpus", required=True,
                           help="directory of WAV files")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override rng_seed")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="train amplification gains")
    common(p)
    p.add_argument("--epochs", type=int, help="override config epochs")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("prescribe", help="NAL-R baseline gains")
    p.add_argument("--audiogram", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prescribe)

    p = sub.add_parser("evaluate", help="score processors on a corpus split")
    common(p)
    p.add_argument("--gains", nargs="+", required=True,
                   help="gains JSON path(s) and/or the literal 'identity'")
    p.add_argument("--cb-policy", choices=list(CB_POLICIES), default="zero",
                   help="stand-in for the external fine-structure term")
    p.add_argument("--split", choices=["train", "validation", "test"],
                   default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck",
                       help="verify gradients against finite differences")
    common(p, out=False)
    p.add_argument("--out", help="optional output directory for the table")
    p.add_argument("--segments", type=int, default=2,
                   help="number of sampled segments to check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-corpus",
                       help="generate a synthetic speech-like corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--files", type=int, default=60)
    p.add_argument("--seconds", type=float, default=12.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
