"""Command-line entry point: ``bgmhan <command> [options]``.

Commands: gen-data, tokenize, train, eval, ablate, report.  Every command
writes only into ``--out``; configuration is resolved as defaults < profile
< ``--config`` file < explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .bpe import load_tokenizer, save_tokenizer, train_bpe
from .config import PROFILES, RunConfig, RunConfigError, load_run_config
from .data import RecordError, SplitError, generate_synthetic, load_profiles, save_profiles
from .evaluation import tfidf_baseline
from .model import load_checkpoint, save_checkpoint
from .pipeline import METRICS, corpus_of, evaluate, fit, run_ablation, split_dataset, synthetic_dataset
from .training import read_history, write_history

logger = logging.getLogger("bgmhan")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out", required=out_required, type=Path, help="output directory (created if needed)")
    p.add_argument("--config", type=Path, help="JSON file of RunConfig fields")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="built-in defaults (default: desk)")
    p.add_argument("--seed", type=int, help="training seed (model init, shuffling, dropout)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    group = p.add_argument_group("config overrides", "any RunConfig field; comma-separate tuple values")
    for f in fields(RunConfig):
        if f.name == "seed":
            continue
        default = getattr(RunConfig(), f.name)
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f"cfg_{f.name}",
            metavar=type(default).__name__.upper(),
            help=f"(desk default: {default})",
        )


def _run_config(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return load_run_config(args.profile, args.config, overrides)
    except RunConfigError as exc:
        raise CliError(f"configuration error: {exc}", EXIT_USAGE) from None


def _out_dir(args) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _need_file(path: Path | None, what: str) -> Path:
    if path is None or not Path(path).is_file():
        raise CliError(f"{what} not found: {path}", EXIT_USAGE)
    return Path(path)


def _load_dataset(path: Path):
    try:
        return load_profiles(_need_file(path, "dataset"))
    except RecordError as exc:
        raise CliError(f"malformed dataset {path}: {exc}", EXIT_USAGE) from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _metric_text(title: str, report) -> str:
    cm = report.confusion
    lines = [title]
    lines += [f"  {m:<10}{getattr(report, m):.4f}" for m in METRICS]
    lines.append(f"  confusion tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    lines += [f"  warning: {w}" for w in report.warnings]
    lines.append("  precision and recall are macro-averaged over both classes")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    profiles = generate_synthetic(
        cfg.n_profiles, cfg.data_seed, cfg.signal_strength, cfg.positive_fraction, cfg.blank_fraction
    )
    save_profiles(profiles, out / "profiles.jsonl")
    _write_json(
        out / "generator.json",
        {k: getattr(cfg, k) for k in ("n_profiles", "data_seed", "signal_strength", "positive_fraction", "blank_fraction")},
    )
    print(f"wrote {len(profiles)} profiles to {out / 'profiles.jsonl'}")
    return 0


def cmd_tokenize(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    corpus_path = _need_file(args.corpus, "corpus")
    if corpus_path.suffix == ".jsonl":
        # fit on the training split only so val/test text never shapes the vocabulary
        split = _split(_load_dataset(corpus_path), cfg)
        corpus = corpus_of(split.train)
    else:
        corpus = corpus_path.read_text(encoding="utf-8")
    if not corpus:
        raise CliError("corpus is empty", EXIT_USAGE)
    vocab = train_bpe(corpus, max(cfg.vocab_size, len(set(corpus))))
    save_tokenizer(vocab, out / "vocab.bpe")
    print(f"learned {len(vocab.merges)} merges, {vocab.size} symbols -> {out / 'vocab.bpe'}")
    return 0


def _split(profiles, cfg):
    try:
        return split_dataset(profiles, cfg)
    except SplitError as exc:
        raise CliError(f"cannot split dataset: {exc}", EXIT_USAGE) from None


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    profiles = _load_dataset(args.data) if args.data else synthetic_dataset(cfg)
    split = _split(profiles, cfg)
    tokenizer = None
    if args.vocab is not None:
        if not cfg.use_bpe:
            raise CliError("--vocab is a BPE vocabulary but use_bpe is false", EXIT_USAGE)
        tokenizer = load_tokenizer(_need_file(args.vocab, "vocab file"))
    fitted = fit(split, cfg, tokenizer=tokenizer)
    vocab_name = "vocab.bpe" if cfg.use_bpe else "vocab.words"
    save_tokenizer(fitted.tokenizer, out / vocab_name)
    meta = {
        "config_hash": cfg.shape_hash(),
        "tokenizer": {"file": vocab_name, "sha256": _sha256(out / vocab_name)},
        "best_epoch": fitted.result.best_epoch,
        "best_val_accuracy": fitted.result.best_val_accuracy,
        "seed": cfg.seed,
    }
    save_checkpoint(out / "checkpoint.npz", fitted.model, meta)
    write_history(out / "history.jsonl", fitted.result.history)
    (out / "config.json").write_text(cfg.dumps())
    report = evaluate(fitted.model, fitted.tokenizer, split.validation, cfg)
    _write_json(out / "val_metrics.json", report.to_dict())
    print(
        f"trained {len(fitted.result.history)} epochs; best val accuracy "
        f"{fitted.result.best_val_accuracy:.4f} at epoch {fitted.result.best_epoch}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    ckpt = _need_file(args.checkpoint, "checkpoint")
    try:
        model, meta = load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read checkpoint {ckpt}: {exc}", EXIT_USAGE) from None
    expected = cfg.shape_hash()
    if meta.get("config_hash") != expected:
        raise CliError(
            f"checkpoint config hash {meta.get('config_hash')} does not match the run config ({expected}); "
            "pass the --config/--profile/flags the checkpoint was trained with",
            EXIT_USAGE,
        )
    vocab_path = args.vocab or ckpt.parent / meta["tokenizer"]["file"]
    vocab_path = _need_file(vocab_path, "tokenizer file")
    if args.vocab is None and _sha256(vocab_path) != meta["tokenizer"]["sha256"]:
        raise CliError(f"tokenizer file {vocab_path} differs from the one the checkpoint was trained with", EXIT_USAGE)
    tokenizer = load_tokenizer(vocab_path)
    profiles = _load_dataset(args.data) if args.data else synthetic_dataset(cfg)
    target = profiles if args.split == "all" else getattr(_split(profiles, cfg), args.split)
    report = evaluate(model, tokenizer, target, cfg)
    _write_json(out / "metrics.json", report.to_dict())
    text = _metric_text(f"{args.split} split ({len(target)} profiles)", report)
    if args.baseline:
        split = _split(profiles, cfg)
        base = tfidf_baseline(split.train, target)
        _write_json(out / "tfidf_metrics.json", base.to_dict())
        text += _metric_text("TF-IDF + logistic regression", base)
    (out / "metrics.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    profiles = _load_dataset(args.data) if args.data else synthetic_dataset(cfg)
    split = _split(profiles, cfg)
    seeds = cfg.ablation_seeds
    report = run_ablation(split, cfg, args.mode, seeds)
    (out / "ablation.jsonl").write_text(report.records())
    _write_json(out / "ablation_summary.json", report.summary())
    table = report.table()
    if args.baseline:
        base = tfidf_baseline(split.train, split.test)
        table += "\nTF-IDF + logistic regression: " + "  ".join(f"{m} {getattr(base, m):.4f}" for m in METRICS) + "\n"
    (out / "ablation.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def ascii_plot(values, title: str, width: int = 60, height: int = 10) -> str:
    """Character plot of one series, x = epoch."""
    if not values:
        return f"{title}: (no data)\n"
    lo, hi = min(values), max(values)
    span = hi - lo or 1.0
    n = len(values)
    cols = min(width, n)
    grid = [[" "] * cols for _ in range(height)]
    for c in range(cols):
        v = values[round(c * (n - 1) / max(cols - 1, 1))]
        r = height - 1 - round((v - lo) / span * (height - 1))
        grid[r][c] = "*"
    lines = [title]
    for r, row in enumerate(grid):
        label = hi if r == 0 else lo if r == height - 1 else None
        prefix = f"{label:>10.3g} |" if label is not None else " " * 10 + " |"
        lines.append(prefix + "".join(row))
    lines.append(" " * 11 + "+" + "-" * cols)
    lines.append(" " * 12 + f"epoch 0 .. {n - 1}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    out = _out_dir(args)
    chunks = []
    for path in args.history:
        hist = read_history(_need_file(path, "history file"))
        chunks.append(f"== {path} ({len(hist)} epochs) ==\n")
        for key in ("train_loss", "val_loss", "val_acc", "lr"):
            chunks.append(ascii_plot([getattr(h, key) for h in hist], key))
        if hist:
            best = max(hist, key=lambda h: (h.val_acc, -h.epoch))
            chunks.append(f"best val_acc {best.val_acc:.4f} at epoch {best.epoch}\n\n")
    text = "".join(chunks)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgmhan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic profile dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("tokenize", help="learn a BPE vocabulary")
    p.add_argument("--corpus", type=Path, required=True, help="dataset .jsonl (train split is used) or plain text")
    _add_common(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="train one model; writes checkpoint.npz and history.jsonl")
    p.add_argument("--data", type=Path, help="dataset .jsonl (default: generate from config)")
    p.add_argument("--vocab", type=Path, help="pre-trained BPE vocabulary (default: learn from train split)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset .jsonl (default: generate from config)")
    p.add_argument("--vocab", type=Path, help="tokenizer file (default: the one next to the checkpoint)")
    p.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--baseline", action="store_true", help="also score the TF-IDF + logistic regression baseline")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train ablation variants over several seeds")
    p.add_argument("--data", type=Path, help="dataset .jsonl (default: generate from config)")
    p.add_argument("--mode", choices=("additive", "subtractive"), default="additive")
    p.add_argument("--baseline", action="store_true", help="append the TF-IDF baseline row")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="character plots of training histories")
    p.add_argument("history", nargs="+", type=Path, help="history.jsonl files")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
