"""Deterministic run artifacts: CSV tables, SVG plots, and manifests.

Outputs are byte-stable for fixed inputs: floats are serialized with
shortest round-trip repr, plots use a fixed hash salt and carry no
timestamps, and manifests identify the corpus by content hash rather
than by mtime.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .auditory import AUDIOGRAM_FREQS
from .pipeline import FdCheckResult
from .processors import ProcessorFilter
from .training import EvaluationReport, HistoryRow

MANIFEST_NAME = "manifest.json"


def _fmt(x) -> str:
    """Shortest exact decimal form of a float (or empty for None)."""
    if x is None:
        return ""
    return repr(float(x))


def write_history_csv(path, history) -> Path:
    """epoch,train_loss,val_loss rows; val_loss blank between validations."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            w.writerow([row.epoch, _fmt(row.train_loss), _fmt(row.val_loss)])
    return path


def write_report_csv(path, reports) -> Path:
    """One summary row per processor, sorted by mean intelligibility."""
    path = Path(path)
    ordered = sorted(reports, key=lambda r: -r.mean_haspi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["processor", "cb_policy", "n_utterances",
                    "mean_cepstral", "sem_cepstral", "mean_energy",
                    "sem_energy", "mean_haspi", "sem_haspi"])
        for r in ordered:
            w.writerow([r.processor, r.cb_policy, len(r.scores),
                        _fmt(r.mean_cepstral), _fmt(r.sem_cepstral),
                        _fmt(r.mean_energy), _fmt(r.sem_energy),
                        _fmt(r.mean_haspi), _fmt(r.sem_haspi)])
    return path


def write_scores_csv(path, reports) -> Path:
    """Per-utterance rows for every processor (the paired raw data)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["processor", "utterance", "cepstral", "energy", "haspi"])
        for r in reports:
            for s in r.scores:
                w.writerow([r.processor, s.name, _fmt(s.cepstral),
                            _fmt(s.energy), _fmt(s.haspi)])
    return path


def write_gradcheck_csv(path, results) -> Path:
    """Per-coordinate finite-difference table, one block per segment."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "coordinate", "analytic", "numeric",
                    "rel_err", "step"])
        for seg_idx, result in enumerate(results):
            for row in result.rows:
                w.writerow([seg_idx, row.index, _fmt(row.analytic),
                            _fmt(row.numeric), _fmt(row.rel_err),
                            _fmt(row.step)])
    return path


# ---------------------------------------------------------------------------
# Plots


def _plot_setup():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "hafit"
    import matplotlib.pyplot as plt
    return plt


def _save_svg(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path


def response_plot(path, filters: dict, title: str = "") -> Path:
    """Overlay of processor magnitude responses on a log-frequency axis.

    ``filters`` maps label -> ProcessorFilter; trained responses are drawn
    solid, everything else dashed.
    """
    plt = _plot_setup()
    freqs = np.geomspace(100.0, 10000.0, 400)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, filt in filters.items():
        style = "-" if filt.source == "trained" else "--"
        ax.semilogx(freqs, filt.response_db(freqs), style, label=label)
    for f in AUDIOGRAM_FREQS:
        ax.axvline(f, color="0.85", lw=0.6, zorder=0)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("insertion gain (dB)")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    return _save_svg(fig, path)


def score_bar_chart(path, reports, title: str = "") -> Path:
    """Grouped bars of mean intelligibility with standard-error bars,
    overlaid with the mean cepstral correlations (cross markers)."""
    plt = _plot_setup()
    ordered = sorted(reports, key=lambda r: -r.mean_haspi)
    labels = [r.processor for r in ordered]
    h = [r.mean_haspi for r in ordered]
    h_err = [r.sem_haspi for r in ordered]
    cc = [r.mean_cepstral for r in ordered]
    cc_err = [r.sem_cepstral for r in ordered]
    x = np.arange(len(ordered))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(x, h, yerr=h_err, capsize=4, width=0.55, label="intelligibility H",
           color="#4878cf")
    ax.errorbar(x, cc, yerr=cc_err, fmt="x-", color="#d65f5f", capsize=3,
                label="cepstral correlation")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left")
    ax.grid(True, axis="y", alpha=0.25)
    fig.tight_layout()
    return _save_svg(fig, path)


# ---------------------------------------------------------------------------
# Manifests


def corpus_hash(root) -> str:
    """Content hash of a corpus directory: sha256 over (name, file-sha256)."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*.wav")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(hashlib.sha256(path.read_bytes()).digest())
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """What produced an output directory; enough to reproduce it bitwise."""

    command: str
    config: dict | None
    seed: int | None
    corpus_sha256: str | None
    outputs: tuple
    tool_version: str = __version__

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        doc = {"command": self.command,
               "config": self.config,
               "seed": self.seed,
               "corpus_sha256": self.corpus_sha256,
               "outputs": list(self.outputs),
               "tool_version": self.tool_version}
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        return cls(command=doc["command"], config=doc["config"],
                   seed=doc["seed"], corpus_sha256=doc["corpus_sha256"],
                   outputs=tuple(doc["outputs"]),
                   tool_version=doc["tool_version"])
