"""Corpus handling, the Adam fitting loop, and evaluation runs.

Determinism contract: (seed, config, corpus) fixes every sampled segment,
every gradient, and therefore the full parameter trajectory bitwise. All
randomness flows from one ``SeedSequence``; batch gradients are averaged in
fixed index order; checkpoints store the exact generator state so a resumed
run replays the uninterrupted one.

"Epoch" here means one optimizer step on one freshly sampled batch of
segments (stochastic sampling, not a full pass over the corpus).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import audio_io, dsp
from .auditory import AUDIOGRAM_FREQS, MODEL_RATE, Audiogram, AuditoryModel
from .dsp import DegenerateSignalError, Signal
from .objective import (ENERGY_ALPHA, cepstral_correlation, energy_control_loss,
                        haspi_combine)
from .pipeline import FitObjective, gradient
from .processors import (GainParams, ProcessorFilter, apply_processor,
                         gains_to_fir)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_SPLIT = "8/1/1"
CHECKPOINT_FORMAT = "hafit-checkpoint"
CHECKPOINT_VERSION = 1
CB_POLICIES = ("zero", "mirror")

_SAMPLE_ATTEMPTS = 8


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss or gradient; state was checkpointed."""

    def __init__(self, message: str, checkpoint_path: Path | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainingConfig:
    """Knobs of one fitting run; defaults follow the full-scale recipe."""

    audiogram: str | None = None
    epochs: int = 4000
    batch_size: int = 128
    learning_rate: float = 0.001
    segment_seconds: float = 0.5
    alpha: float = ENERGY_ALPHA
    init_gain_db: float = 1.0
    rng_seed: int = 0
    validation_every: int = 25
    n_validation: int = 16
    split: str = DEFAULT_SPLIT

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "learning_rate", "segment_seconds",
                     "validation_every", "n_validation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        win, _ = dsp.frame_params(MODEL_RATE)
        if self.segment_length < win:
            raise ValueError(
                f"segment of {self.segment_length} samples is shorter than "
                f"one smoothing window ({win})")
        parse_split(self.split)

    @property
    def segment_length(self) -> int:
        """Segment length in samples at the model rate."""
        return int(round(self.segment_seconds * MODEL_RATE))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainingConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce_field(key, raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        return cls.from_mapping(parse_config(Path(path).read_text()))

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, **kwargs) -> "TrainingConfig":
        provided = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **provided) if provided else self


_INT_FIELDS = {"epochs", "batch_size", "rng_seed", "validation_every",
               "n_validation"}
_FLOAT_FIELDS = {"learning_rate", "segment_seconds", "alpha", "init_gain_db"}


def _coerce_field(key: str, raw):
    if key in _INT_FIELDS:
        return int(raw)
    if key in _FLOAT_FIELDS:
        return float(raw)
    return None if raw is None else str(raw).strip()


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected key = value, "
                             f"got {stripped!r}")
        key, value = stripped.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def parse_split(spec: str) -> tuple[int, int, int]:
    """'a/b/c' -> integer train/validation/test weights, all positive."""
    parts = spec.split("/")
    if len(parts) != 3:
        raise ValueError(f"split must be train/validation/test, got {spec!r}")
    try:
        weights = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"split weights must be integers, got {spec!r}") from None
    if any(w <= 0 for w in weights):
        raise ValueError(f"split weights must be positive, got {spec!r}")
    return weights


# ---------------------------------------------------------------------------
# Corpus


@dataclass(frozen=True)
class CorpusFile:
    """One utterance, resampled to the model rate at load time."""

    name: str
    samples: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / MODEL_RATE


@dataclass(frozen=True)
class CorpusIndex:
    """Disjoint train/validation/test utterance lists at the model rate."""

    train: tuple
    validation: tuple
    test: tuple
    rate: int = MODEL_RATE

    def split(self, name: str) -> tuple:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def n_files(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    @property
    def total_seconds(self) -> float:
        return sum(f.seconds for split in (self.train, self.validation,
                                           self.test) for f in split)


def _split_counts(n: int, weights: tuple[int, int, int]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of n files over the split weights."""
    total = sum(weights)
    exact = [n * w / total for w in weights]
    counts = [math.floor(e) for e in exact]
    leftover = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return tuple(counts)


def load_corpus(root, split: str = DEFAULT_SPLIT,
                segment_seconds: float | None = None) -> CorpusIndex:
    """Index a directory of WAV files into train/validation/test splits.

    Files are resampled to the model rate once, here. Assignment is
    deterministic: files sorted by relative path, split contiguously with
    largest-remainder counts from the 'a/b/c' weights. Unreadable files and
    (when ``segment_seconds`` is given) files too short to sample from are
    skipped with a warning; an empty resulting split is an error.
    """
    weights = parse_split(split)
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    min_len = (int(round(segment_seconds * MODEL_RATE))
               if segment_seconds is not None else 1)
    entries = []
    for path in sorted(root.rglob("*.wav")):
        name = path.relative_to(root).as_posix()
        try:
            sig = audio_io.read_wav(path)
        except (ValueError, OSError) as exc:
            warnings.warn(f"skipping unreadable corpus file {name}: {exc}")
            continue
        sig = dsp.resample(sig, MODEL_RATE)
        if len(sig) < min_len:
            warnings.warn(f"skipping corpus file {name}: {len(sig)} samples "
                          f"is shorter than one segment ({min_len})")
            continue
        entries.append(CorpusFile(name=name, samples=sig.samples))
    if not entries:
        raise ValueError(f"no usable WAV files under {root}")
    n_train, n_val, n_test = _split_counts(len(entries), weights)
    index = CorpusIndex(train=tuple(entries[:n_train]),
                        validation=tuple(entries[n_train:n_train + n_val]),
                        test=tuple(entries[n_train + n_val:]))
    for name in ("train", "validation", "test"):
        if not index.split(name):
            raise ValueError(
                f"{name} split is empty ({len(entries)} usable files split "
                f"{split}); need more files or different weights")
    return index


def sample_segment(idx: CorpusIndex, cfg: TrainingConfig,
                   rng: np.random.Generator, split: str = "train") -> Signal:
    """Uniformly sample one RMS-normalized segment from a split.

    File choice is uniform over eligible files, offset uniform over valid
    positions. Silent segments are redrawn a bounded number of times.
    """
    seg_len = cfg.segment_length
    files = [f for f in idx.split(split) if len(f) >= seg_len]
    if not files:
        raise DegenerateSignalError(
            f"no file in split {split!r} is at least {seg_len} samples long")
    for _ in range(_SAMPLE_ATTEMPTS):
        f = files[int(rng.integers(len(files)))]
        start = int(rng.integers(len(f) - seg_len + 1))
        segment = Signal(f.samples[start:start + seg_len].copy(), idx.rate)
        try:
            return dsp.rms_normalize(segment)
        except DegenerateSignalError:
            continue
    raise DegenerateSignalError(
        f"could not draw a nonsilent segment from split {split!r} "
        f"in {_SAMPLE_ATTEMPTS} attempts")


# ---------------------------------------------------------------------------
# Optimizer


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; pure (returns new arrays)."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(grad).all():
        raise ValueError(f"non-finite gradient: {grad}")
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float | None = None


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to continue a run bitwise; JSON on disk.

    Floats survive the round trip exactly (shortest-repr JSON encoding is
    lossless for float64), and the generator state is stored verbatim.
    """

    epoch: int
    params_db: np.ndarray
    adam: AdamState
    rng_state: dict
    best_epoch: int | None
    best_val_loss: float | None
    best_params_db: np.ndarray | None
    history: tuple
    config: dict

    def save(self, path) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "params_db": self.params_db.tolist(),
            "adam": {"m": self.adam.m.tolist(), "v": self.adam.v.tolist(),
                     "step": self.adam.step},
            "rng_state": self.rng_state,
            "best": (None if self.best_epoch is None else
                     {"epoch": self.best_epoch,
                      "val_loss": self.best_val_loss,
                      "params_db": self.best_params_db.tolist()}),
            "history": [[r.epoch, r.train_loss, r.val_loss]
                        for r in self.history],
            "config": self.config,
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a checkpoint file")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version "
                             f"{doc.get('version')!r}")
        best = doc["best"]
        return cls(
            epoch=doc["epoch"],
            params_db=np.asarray(doc["params_db"], dtype=np.float64),
            adam=AdamState(m=np.asarray(doc["adam"]["m"], dtype=np.float64),
                           v=np.asarray(doc["adam"]["v"], dtype=np.float64),
                           step=doc["adam"]["step"]),
            rng_state=doc["rng_state"],
            best_epoch=None if best is None else best["epoch"],
            best_val_loss=None if best is None else best["val_loss"],
            best_params_db=(None if best is None else
                            np.asarray(best["params_db"], dtype=np.float64)),
            history=tuple(HistoryRow(int(e), float(t),
                                     None if v is None else float(v))
                          for e, t, v in doc["history"]),
            config=doc["config"],
        )


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainingResult:
    params: GainParams
    history: tuple
    best_epoch: int | None
    best_val_loss: float | None
    final_params_db: np.ndarray
    checkpoint_path: Path | None = None


def train(cfg: TrainingConfig, idx: CorpusIndex, ag: Audiogram,
          out_dir=None, resume_from=None, progress=None) -> TrainingResult:
    """Fit the six gains to an audiogram by stochastic gradient descent.

    Per epoch: sample a batch of segments, average per-segment loss
    gradients in index order, take one Adam step. Validation runs on a
    fixed set of segments every ``cfg.validation_every`` epochs and at the
    final epoch; the best-validation parameters are the returned fit.

    ``out_dir`` (optional) receives ``checkpoint.json`` at every validation
    point; on a non-finite loss or gradient the state is saved to
    ``checkpoint-diverged.json`` before :class:`TrainingDivergedError` is
    raised. ``resume_from`` continues a checkpointed run bitwise;
    ``progress`` is an optional ``f(HistoryRow)`` callback.
    """
    nh_model, hi_model = AuditoryModel(None), AuditoryModel(ag)
    seed_root = np.random.SeedSequence(cfg.rng_seed)
    train_seq, val_seq = seed_root.spawn(2)
    train_rng = np.random.default_rng(train_seq)
    val_rng = np.random.default_rng(val_seq)

    # Fixed validation segments, regenerated identically on resume.
    val_objectives = []
    for _ in range(cfg.n_validation):
        seg = sample_segment(idx, cfg, val_rng, split="validation")
        val_objectives.append(FitObjective(seg.samples, hi_model, nh_model,
                                           alpha=cfg.alpha))

    def validation_loss(p: np.ndarray) -> float:
        return sum(objf(p) for objf in val_objectives) / len(val_objectives)

    params = np.full(len(AUDIOGRAM_FREQS), float(cfg.init_gain_db))
    adam = AdamState.fresh(len(params))
    history: list[HistoryRow] = []
    best_epoch: int | None = None
    best_val: float | None = None
    best_params: np.ndarray | None = None
    start_epoch = 0

    if resume_from is not None:
        ck = Checkpoint.load(resume_from)
        stored = dict(ck.config)
        current = cfg.to_mapping()
        stored.pop("epochs", None)
        current_cmp = dict(current)
        current_cmp.pop("epochs", None)
        if stored != current_cmp:
            raise ValueError("checkpoint was produced with a different "
                             "config; only `epochs` may change on resume")
        params = ck.params_db.copy()
        adam = ck.adam
        train_rng.bit_generator.state = ck.rng_state
        history = list(ck.history)
        best_epoch, best_val = ck.best_epoch, ck.best_val_loss
        best_params = (None if ck.best_params_db is None
                       else ck.best_params_db.copy())
        start_epoch = ck.epoch

    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    def make_checkpoint() -> Checkpoint:
        return Checkpoint(epoch=epoch, params_db=params.copy(), adam=adam,
                          rng_state=train_rng.bit_generator.state,
                          best_epoch=best_epoch, best_val_loss=best_val,
                          best_params_db=(None if best_params is None
                                          else best_params.copy()),
                          history=tuple(history),
                          config=cfg.to_mapping())

    epoch = start_epoch
    wrote_checkpoint = False
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        loss_sum = 0.0
        grad_sum = np.zeros_like(params)
        for _ in range(cfg.batch_size):
            seg = sample_segment(idx, cfg, train_rng, split="train")
            objf = FitObjective(seg.samples, hi_model, nh_model,
                                alpha=cfg.alpha)
            result = gradient(objf, params)
            loss_sum += result.loss
            grad_sum += result.grad
        train_loss = loss_sum / cfg.batch_size
        grad = grad_sum / cfg.batch_size

        if not (np.isfinite(train_loss) and np.isfinite(grad).all()):
            diverged_path = None
            if out_path is not None:
                diverged_path = out_path / "checkpoint-diverged.json"
                make_checkpoint().save(diverged_path)
            raise TrainingDivergedError(
                f"non-finite loss or gradient at epoch {epoch}",
                checkpoint_path=diverged_path)

        params, adam = adam_step(params, grad, adam, cfg.learning_rate)

        val_loss = None
        if epoch % cfg.validation_every == 0 or epoch == cfg.epochs:
            val_loss = validation_loss(params)
            if best_val is None or val_loss < best_val:
                best_epoch, best_val = epoch, val_loss
                best_params = params.copy()
        row = HistoryRow(epoch=epoch, train_loss=train_loss, val_loss=val_loss)
        history.append(row)
        if progress is not None:
            progress(row)
        if val_loss is not None and out_path is not None:
            make_checkpoint().save(out_path / "checkpoint.json")
            wrote_checkpoint = True

    final_fit = best_params if best_params is not None else params
    label = cfg.audiogram or ag.label
    result_params = GainParams(final_fit.copy(), label=f"trained-{label}",
                               source="trained")
    return TrainingResult(params=result_params, history=tuple(history),
                          best_epoch=best_epoch, best_val_loss=best_val,
                          final_params_db=params.copy(),
                          checkpoint_path=(out_path / "checkpoint.json"
                                           if wrote_checkpoint else None))


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class UtteranceScore:
    name: str
    cepstral: float
    energy: float
    haspi: float


@dataclass(frozen=True)
class EvaluationReport:
    """Per-utterance intelligibility scores for one processor setting."""

    processor: str
    cb_policy: str
    scores: tuple
    mean_cepstral: float
    sem_cepstral: float
    mean_energy: float
    sem_energy: float
    mean_haspi: float
    sem_haspi: float


def _mean_sem(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    if len(values) < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / np.sqrt(len(values)))


def nh_reference_frames(idx: CorpusIndex, split: str = "test") -> dict:
    """Normal-hearing envelope frames per utterance (shared across settings)."""
    nh_model = AuditoryModel(None)
    frames = {}
    for f in idx.split(split):
        sig = dsp.rms_normalize(Signal(f.samples, idx.rate))
        frames[f.name] = nh_model.process_values(sig.samples)
    return frames


def evaluate(proc, idx: CorpusIndex, ag: Audiogram, split: str = "test",
             cb_policy: str = "zero", nh_frames: dict | None = None,
             label: str | None = None) -> EvaluationReport:
    """Score one processor setting on a corpus split.

    ``proc`` is a ProcessorFilter or a GainParams (designed into one). Per
    utterance: RMS-normalize, process, run the impaired model on the
    processed signal and the normal model on the original, then report the
    cepstral correlation, the energy penalty term, and the combined
    intelligibility score. The basilar-membrane correlation the combiner
    expects is external input here; policy 'zero' substitutes 0, 'mirror'
    reuses the cepstral correlation.
    """
    if cb_policy not in CB_POLICIES:
        raise ValueError(f"cb_policy must be one of {CB_POLICIES}")
    if isinstance(proc, GainParams):
        name = label or (proc.label or proc.source)
        filt = gains_to_fir(proc, source=proc.source)
    elif isinstance(proc, ProcessorFilter):
        name = label or proc.source
        filt = proc
    else:
        raise TypeError(f"expected GainParams or ProcessorFilter, "
                        f"got {type(proc).__name__}")
    hi_model = AuditoryModel(ag)
    nh_model = AuditoryModel(None) if nh_frames is None else None

    scores = []
    for f in idx.split(split):
        sig = dsp.rms_normalize(Signal(f.samples, idx.rate))
        if nh_frames is not None:
            ref = nh_frames[f.name]
        else:
            ref = nh_model.process_values(sig.samples)
        processed = apply_processor(sig, filt)
        proc_frames = hi_model.process_values(processed.samples)
        cc, _ = cepstral_correlation(ref, proc_frames)
        energy = float(energy_control_loss(ref, proc_frames))
        cb = 0.0 if cb_policy == "zero" else float(cc)
        scores.append(UtteranceScore(name=f.name, cepstral=float(cc),
                                     energy=energy,
                                     haspi=haspi_combine(float(cc), cb)))
    cc_mean, cc_sem = _mean_sem(np.array([s.cepstral for s in scores]))
    en_mean, en_sem = _mean_sem(np.array([s.energy for s in scores]))
    h_mean, h_sem = _mean_sem(np.array([s.haspi for s in scores]))
    return EvaluationReport(processor=name, cb_policy=cb_policy,
                            scores=tuple(scores),
                            mean_cepstral=cc_mean, sem_cepstral=cc_sem,
                            mean_energy=en_mean, sem_energy=en_sem,
                            mean_haspi=h_mean, sem_haspi=h_sem)
