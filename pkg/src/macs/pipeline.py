"""End-to-end MACS run: generate, split, train, threshold, evaluate, bias report.

Every stage reads its inputs from the output directory (falling back to
values already computed in the same process) and writes its artifacts
there, so the CLI subcommands and ``run_all`` share one code path.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bias import bias_analysis, build_cohorts
from .cohort import select_candidates
from .datagen import GeneratorConfig, generate_corpus, read_corpus, write_corpus
from .errors import ConfigError, InputError, StageError
from .model import TrainConfig, TrainedModel, cross_validate_lambda, fit_logreg, predict_score
from .selection import choose_threshold, classify, evaluate
from .stats import RngSpec
from .textfeat import DEFAULT_MAX_FEATURES, Vocabulary, build_vocabulary, patient_text, vectorize_many

log = logging.getLogger(__name__)

STAGES = ("gen", "train", "threshold", "eval", "bias")


@dataclass
class PipelineConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train_fraction: float = 0.5
    validation_fraction_of_train: float = 0.2
    target_sensitivity: float = 0.95
    train: TrainConfig = field(default_factory=TrainConfig)
    n_boot: int = 1000
    output_dir: str = "macs_run"
    global_seed: int = 0
    max_features: int = DEFAULT_MAX_FEATURES
    workers: int = 1

    def __post_init__(self):
        if not (0 <= self.global_seed < 2**64):
            raise ConfigError("global_seed must be a 64-bit unsigned integer")
        for name in ("train_fraction", "validation_fraction_of_train"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie strictly inside (0, 1)")
        if not 0.0 < self.target_sensitivity <= 1.0:
            raise ConfigError("target_sensitivity must lie in (0, 1]")
        if self.n_boot < 1 or self.max_features < 1 or self.workers < 1:
            raise ConfigError("n_boot, max_features and workers must be positive")
        # all randomness derives from the global seed through named streams
        self.generator.seed = self.global_seed
        self.train.seed = RngSpec(self.global_seed).child("cv").stream

    def rng(self, name: str) -> RngSpec:
        return RngSpec(self.global_seed).child(name)

    def to_dict(self):
        return {
            "generator": self.generator.to_dict(),
            "train_fraction": self.train_fraction,
            "validation_fraction_of_train": self.validation_fraction_of_train,
            "target_sensitivity": self.target_sensitivity,
            "train": self.train.to_dict(),
            "n_boot": self.n_boot,
            "output_dir": str(self.output_dir),
            "global_seed": self.global_seed,
            "max_features": self.max_features,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        gen = dict(d.pop("generator", {}))
        gen.pop("seed", None)
        train = dict(d.pop("train", {}))
        train.pop("seed", None)
        try:
            return cls(generator=GeneratorConfig.from_dict(gen), train=TrainConfig(**train), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, **overrides):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)


# --------------------------------------------------------------------------
# Split
# --------------------------------------------------------------------------


def split(candidates, train_fraction: float, validation_fraction: float, rng: RngSpec):
    """(train_ids, validation_ids, test_ids) from two seeded shuffles of the sorted ids."""
    ids = sorted(candidates)
    if not ids:
        raise InputError("split() needs at least one candidate")
    n = len(ids)
    order = rng.generator(0).permutation(n)
    shuffled = [ids[i] for i in order]
    n_pool = int(np.floor(train_fraction * n))
    pool, test = shuffled[:n_pool], shuffled[n_pool:]
    m = len(pool)
    order2 = rng.generator(1).permutation(m)
    pool = [pool[i] for i in order2]
    n_val = int(np.floor(validation_fraction * m))
    train, val = pool[: m - n_val], pool[m - n_val:]
    if not train or not val or not test:
        raise InputError(f"empty partition (train={len(train)}, validation={len(val)}, test={len(test)})")
    return train, val, test


# --------------------------------------------------------------------------
# Run context
# --------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path: Path, stage: str, hint: str):
    if not path.exists():
        raise StageError(stage, f"missing {path.name}; run `{hint}` first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class Run:
    """One output directory plus lazily loaded intermediate results."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")
        self.written: list = []
        self.timings: dict = {}
        self._corpus = None
        self._index = None
        self._texts = {}

    def path(self, name) -> Path:
        return self.out / name

    def emit(self, name) -> Path:
        if name not in self.written:
            self.written.append(name)
        return self.path(name)

    # --- cached inputs ---------------------------------------------------
    @property
    def corpus(self):
        if self._corpus is None:
            p = self.path("corpus.jsonl")
            if not p.exists():
                raise StageError("load", "missing corpus.jsonl; run `gen` first")
            self._corpus = read_corpus(p)
        return self._corpus

    @property
    def patients(self) -> dict:
        return {p.patient_id: p for p in self.corpus}

    def text(self, pid):
        if pid not in self._texts:
            self._texts[pid] = patient_text(self._patient_index()[pid])
        return self._texts[pid]

    def _patient_index(self):
        if self._index is None:
            self._index = self.patients
        return self._index

    def labels(self, ids) -> np.ndarray:
        idx = self._patient_index()
        return np.array([idx[i].is_positive for i in ids])

    def split_ids(self, stage):
        return _load_json(self.path("split.json"), stage, "train")

    def vocab(self, stage) -> Vocabulary:
        return Vocabulary.from_dict(_load_json(self.path("vocab.json"), stage, "train"))

    def model(self, stage) -> TrainedModel:
        return TrainedModel.from_dict(_load_json(self.path("model.json"), stage, "train"))

    def scores(self, ids, vocab, model):
        X = vectorize_many([self.text(i) for i in ids], vocab)
        return predict_score(model, X, vocab.fingerprint())


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def stage_gen(run: Run):
    corpus = generate_corpus(run.config.generator)
    write_corpus(corpus, run.emit("corpus.jsonl"))
    run._corpus = corpus
    run._index = None
    run._texts = {}
    log.info("generated %d patients", len(corpus))


def stage_train(run: Run):
    cfg = run.config
    cand = select_candidates(run.corpus)
    _dump_json(cand.patient_ids, run.emit("candidates.json"))
    train, val, test = split(cand.patient_ids, cfg.train_fraction, cfg.validation_fraction_of_train,
                             cfg.rng("split"))
    _dump_json({"train": train, "validation": val, "test": test}, run.emit("split.json"))

    pool = train + val
    vocab_ids = set(pool)
    if vocab_ids & set(test):
        raise StageError("train", "test patients leaked into vocabulary construction")
    vocab = build_vocabulary([run.text(i) for i in sorted(pool)], cfg.max_features)
    _dump_json(vocab.to_dict(), run.emit("vocab.json"))

    X = vectorize_many([run.text(i) for i in train], vocab)
    y = np.where(run.labels(train), 1.0, -1.0)
    cv = cross_validate_lambda(X, y, cfg.train, workers=cfg.workers)
    _dump_json(cv.to_dict(), run.emit("cv.json"))
    model = fit_logreg(X, y, cv.best_lambda, cfg.train, vocab_fingerprint=vocab.fingerprint())
    model.save(run.emit("model.json"))
    log.info("trained on %d patients, lambda=%g, |vocab|=%d", len(train), cv.best_lambda, len(vocab))


def stage_threshold(run: Run):
    ids = run.split_ids("threshold")["validation"]
    vocab, model = run.vocab("threshold"), run.model("threshold")
    labels = run.labels(ids)
    if not labels.any():
        raise StageError("threshold", "validation set has no positive patients")
    scores = run.scores(ids, vocab, model)
    result = choose_threshold(scores[labels], run.config.target_sensitivity)
    _dump_json(result.to_dict(), run.emit("threshold.json"))


def stage_eval(run: Run):
    ids = run.split_ids("eval")["test"]
    vocab, model = run.vocab("eval"), run.model("eval")
    threshold = _load_json(run.path("threshold.json"), "eval", "threshold")["threshold"]
    labels = run.labels(ids)
    scores = run.scores(ids, vocab, model)
    flags = classify(scores, threshold)
    cfg = run.config
    report = evaluate(scores, labels, threshold, cfg.n_boot, cfg.rng("bootstrap-eval").stream,
                      workers=cfg.workers)
    _dump_json(report.to_dict(), run.emit("eval.json"))
    run.emit("roc.csv").write_text(report.roc_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "label", "score", "flag"])
    for pid, lab, s, f in zip(ids, labels, scores, flags):
        w.writerow([pid, int(lab), repr(float(s)), int(f)])
    run.emit("test_scores.csv").write_text(buf.getvalue())


def read_test_scores(path: Path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {r["patient_id"]: (bool(int(r["label"])), float(r["score"]), bool(int(r["flag"]))) for r in rows}


def stage_bias(run: Run, threshold_override: float | None = None):
    p = run.path("test_scores.csv")
    if not p.exists():
        raise StageError("bias", "missing test_scores.csv; run `eval` first")
    scored = read_test_scores(p)
    labels = {pid: v[0] for pid, v in scored.items()}
    if threshold_override is None:
        flags = {pid: v[2] for pid, v in scored.items()}
    else:
        flags = {pid: v[1] > threshold_override for pid, v in scored.items()}
    pair = build_cohorts(labels, flags)
    cfg = run.config
    report = bias_analysis(pair, run._patient_index(), cfg.n_boot, cfg.rng("bootstrap-bias"), workers=cfg.workers)
    _dump_json(report.to_dict(), run.emit("bias_report.json"))
    run.emit("bias_report.csv").write_text(report.to_csv())
    for name, text in sorted(report.km_csvs().items()):
        run.emit(name).write_text(text)
    return report


STAGE_FUNCS = {
    "gen": stage_gen,
    "train": stage_train,
    "threshold": stage_threshold,
    "eval": stage_eval,
    "bias": stage_bias,
}


def run_stage(run: Run, name: str):
    t0 = time.perf_counter()
    try:
        STAGE_FUNCS[name](run)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    run.timings[name] = round(time.perf_counter() - t0, 3)


def write_manifest(run: Run) -> dict:
    manifest = {
        "software_version": __version__,
        "config": run.config.to_dict(),
        "artifacts": {name: _sha256(run.path(name)) for name in sorted(run.written)},
        "timings_seconds": run.timings,
    }
    _dump_json(manifest, run.path("manifest.json"))
    return manifest


def run_all(config: PipelineConfig) -> dict:
    """Execute every stage in order and return the manifest."""
    run = Run(config)
    for name in STAGES:
        run_stage(run, name)
    return write_manifest(run)
