"""End-to-end steps shared by the CLI and the ablation runner."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .bpe import BpeVocab, WordVocab, train_bpe
from .config import RunConfig
from .data import DatasetSplit, generate_synthetic, handle_missing, stratified_split
from .embedding import EncodedBatch, encode_profiles
from .evaluation import MetricReport, compute_metrics
from .model import Ablation, BgmHan
from .training import TrainResult, train

logger = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f1", "accuracy")


def synthetic_dataset(cfg: RunConfig, signal_strength: float | None = None) -> list:
    profiles = generate_synthetic(
        cfg.n_profiles,
        seed=cfg.data_seed,
        signal_strength=cfg.signal_strength if signal_strength is None else signal_strength,
        positive_fraction=cfg.positive_fraction,
        blank_fraction=cfg.blank_fraction,
    )
    return [handle_missing(p) for p in profiles]


def split_dataset(profiles, cfg: RunConfig) -> DatasetSplit:
    return stratified_split(profiles, cfg.split_fractions, seed=cfg.data_seed)


def corpus_of(profiles) -> str:
    return "\n".join(p.text() for p in profiles)


def build_tokenizer(train_profiles, cfg: RunConfig, flags: Ablation | None = None):
    flags = flags or cfg.flags
    corpus = corpus_of(train_profiles)
    if flags.use_bpe:
        return train_bpe(corpus, max(cfg.vocab_size, len(set(corpus))))
    return WordVocab.train(corpus, cfg.vocab_size)


@dataclass
class FitResult:
    model: BgmHan
    tokenizer: BpeVocab | WordVocab
    result: TrainResult
    flags: Ablation
    seed: int


def fit(split: DatasetSplit, cfg: RunConfig, flags: Ablation | None = None, seed: int | None = None, tokenizer=None) -> FitResult:
    """Tokenize, build and train one model variant on ``split``."""
    flags = flags or cfg.flags
    seed = cfg.seed if seed is None else seed
    if tokenizer is None:
        tokenizer = build_tokenizer(split.train, cfg, flags)
    tr = encode_profiles(split.train, tokenizer, cfg.sentences, cfg.words)
    va = encode_profiles(split.validation, tokenizer, cfg.sentences, cfg.words)
    model = BgmHan(cfg.model_config(tokenizer.size, flags), seed=seed)
    result = train(model, tr, va, cfg.train_config(seed))
    return FitResult(model, tokenizer, result, flags, seed)


def predict(model: BgmHan, batch: EncodedBatch) -> np.ndarray:
    return (model.predict_proba(batch) >= 0.5).astype(int)


def evaluate(model: BgmHan, tokenizer, profiles, cfg: RunConfig) -> MetricReport:
    batch = encode_profiles(profiles, tokenizer, cfg.sentences, cfg.words)
    return compute_metrics(predict(model, batch), batch.labels)


# ---------------------------------------------------------------------------
# ablation

ADDITIVE = {
    "HAN": Ablation(False, False, False),
    "HAN+BPE": Ablation(True, False, False),
    "HAN+MHA": Ablation(False, True, False),
    "HAN+GRC": Ablation(False, False, True),
    "BGM-HAN": Ablation(True, True, True),
}
SUBTRACTIVE = {
    "HAN": Ablation(False, False, False),
    "BGM-HAN-BPE": Ablation(False, True, True),
    "BGM-HAN-MHA": Ablation(True, False, True),
    "BGM-HAN-GRC": Ablation(True, True, False),
    "BGM-HAN": Ablation(True, True, True),
}
VARIANT_SETS = {"additive": ADDITIVE, "subtractive": SUBTRACTIVE}


@dataclass
class AblationReport:
    rows: dict  # variant -> list of MetricReport (one per seed)
    seeds: tuple
    mode: str

    def summary(self) -> dict:
        out = {}
        for name, reports in self.rows.items():
            out[name] = {}
            for m in METRICS:
                vals = np.array([getattr(r, m) for r in reports])
                out[name][m] = {"mean": float(vals.mean()), "std": float(vals.std()), "values": vals.tolist()}
        return out

    def records(self) -> str:
        lines = []
        for name, reports in self.rows.items():
            for seed, r in zip(self.seeds, reports):
                rec = {"variant": name, "seed": seed, **{m: getattr(r, m) for m in METRICS}}
                lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        summ = self.summary()
        width = max(len(n) for n in summ) + 2
        head = f"{'Model':<{width}}" + "".join(f"{m.capitalize():>18}" for m in ("Precision", "Recall", "F1", "Accuracy"))
        rule = "-" * len(head)
        lines = [head, rule]
        for name, stats in summ.items():
            cells = "".join(f"{stats[m]['mean']:>11.4f} ±{stats[m]['std']:.3f}" for m in METRICS)
            lines.append(f"{name:<{width}}{cells}")
        lines.append(rule)
        lines.append(
            f"mean ± std over seeds {list(self.seeds)}; precision and recall are macro-averaged like F1"
        )
        return "\n".join(lines) + "\n"


def run_ablation(
    split: DatasetSplit, cfg: RunConfig, mode: str = "additive", seeds=None, on_result=None
) -> AblationReport:
    """Train every variant of ``mode`` for each seed on the same split; score on test."""
    if mode not in VARIANT_SETS:
        raise ValueError(f"unknown ablation mode {mode!r}")
    seeds = tuple(cfg.ablation_seeds if seeds is None else seeds)
    rows: dict = {}
    tokenizers = {}
    for name, flags in VARIANT_SETS[mode].items():
        rows[name] = []
        if flags.use_bpe not in tokenizers:
            tokenizers[flags.use_bpe] = build_tokenizer(split.train, cfg, flags)
        tok = tokenizers[flags.use_bpe]
        for seed in seeds:
            fitted = fit(split, cfg, flags, seed, tokenizer=tok)
            report = evaluate(fitted.model, tok, split.test, cfg)
            rows[name].append(report)
            logger.info("%s seed %d: f1 %.4f acc %.4f", name, seed, report.f1, report.accuracy)
            if on_result is not None:
                on_result(name, seed, fitted, report)
    return AblationReport(rows, seeds, mode)
