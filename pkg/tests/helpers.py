"""Small fixtures shared by unit tests and the acceptance script."""

import numpy as np

from bgmhan.bpe import train_bpe
from bgmhan.data import generate_synthetic, handle_missing
from bgmhan.embedding import encode_profiles
from bgmhan.model import Ablation, BgmHan, ModelConfig

TINY = dict(s=2, w=3, dim=8, heads=2, ffn_dim=16)


def tiny_setup(seed=0, n=2, flags=Ablation(), dropout=0.0, extra_merges=10, **dims):
    """A desk-dims model plus an ``n``-profile encoded batch with both labels."""
    dims = {**TINY, **dims}
    profiles = [handle_missing(p) for p in generate_synthetic(max(n, 4), seed=seed, blank_fraction=0.3)]
    if n == 2:
        profiles = [next(p for p in profiles if p.label == 0), next(p for p in profiles if p.label == 1)]
    profiles = profiles[:n]
    corpus = "\n".join(p.text() for p in profiles)
    vocab = train_bpe(corpus, len(set(corpus)) + extra_merges)
    cfg = ModelConfig(
        vocab_size=vocab.size,
        dim=dims["dim"],
        heads=dims["heads"],
        ffn_dim=dims["ffn_dim"],
        dropout=dropout,
        flags=flags,
    )
    model = BgmHan(cfg, seed=seed)
    batch = encode_profiles(profiles, vocab, dims["s"], dims["w"])
    return model, batch, vocab


def randomize(model, rng, scale=1.0):
    """Replace every parameter with fresh normal draws (gates and gains included)."""
    for p in model.parameters():
        p.data = rng.normal(scale=scale, size=p.shape)


def perturb_padding(blocks, word_mask, rng, scale=10.0):
    """Copy of ``blocks`` with arbitrary values written into every padded slot."""
    out = blocks.copy()
    pad = ~np.asarray(word_mask, dtype=bool)
    out[pad] = rng.normal(scale=scale, size=(int(pad.sum()), blocks.shape[-1]))
    return out
