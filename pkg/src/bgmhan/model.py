"""BGM-HAN: hierarchical stack of attention level blocks.

Each level block is LayerNorm -> multi-head self-attention -> gated
residual network -> masked mean pooling.  Blocks run at token level
(words of a sentence), sentence level (sentences of a field) and field
level (the four fields of a profile); a linear unit with a sigmoid turns
the pooled profile vector into an offer probability.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding import FIELD_ORDER, EmbeddingTable, EncodedBatch, lookup
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    mean_pool,
    parameter,
    sigmoid,
    softmax,
    scatter_rows,
    take_rows,
)

LEVELS = ("token", "sentence", "field")


@dataclass(frozen=True)
class Ablation:
    use_bpe: bool = True
    use_mha: bool = True
    use_grc: bool = True

    @property
    def label(self) -> str:
        on = [n for n, f in (("BPE", self.use_bpe), ("MHA", self.use_mha), ("GRC", self.use_grc)) if f]
        if len(on) == 3:
            return "BGM-HAN"
        return "HAN" + "".join(f"+{n}" for n in on)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 32
    heads: int = 4
    ffn_dim: int = 64
    dropout: float = 0.1
    ln_eps: float = 1e-5
    gelu_approximate: bool = False
    flags: Ablation = field(default_factory=Ablation)

    @property
    def effective_heads(self) -> int:
        return self.heads if self.flags.use_mha else 1

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.ffn_dim < self.dim:
            raise ValueError(f"ffn_dim {self.ffn_dim} must be >= dim {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["flags"] = Ablation(**d.get("flags", {}))
        return cls(**d)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MhaParams:
    """Per-head projections stored side by side: columns ``i*dk:(i+1)*dk`` of
    ``wq`` are head i's query matrix (likewise ``wk``, ``wv``)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, prefix: str = "mha"):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = parameter(_uniform(rng, dim, (dim, dim)), f"{prefix}.wq")
        self.wk = parameter(_uniform(rng, dim, (dim, dim)), f"{prefix}.wk")
        self.wv = parameter(_uniform(rng, dim, (dim, dim)), f"{prefix}.wv")
        self.wo = parameter(_uniform(rng, dim, (dim, dim)), f"{prefix}.wo")

    def parameters(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo]


class GrnParams:
    def __init__(
        self, dim: int, ffn_dim: int, rng: np.random.Generator, gated: bool = True, prefix: str = "grn"
    ):
        self.gamma = parameter(np.ones(dim), f"{prefix}.gamma") if gated else None
        self.w1 = parameter(_uniform(rng, dim, (dim, ffn_dim)), f"{prefix}.w1")
        self.b1 = parameter(_uniform(rng, dim, (ffn_dim,)), f"{prefix}.b1")
        self.w2 = parameter(_uniform(rng, ffn_dim, (ffn_dim, dim)), f"{prefix}.w2")
        self.b2 = parameter(_uniform(rng, ffn_dim, (dim,)), f"{prefix}.b2")
        self.ln_gain = parameter(np.ones(dim), f"{prefix}.ln_gain")
        self.ln_bias = parameter(np.zeros(dim), f"{prefix}.ln_bias")

    def parameters(self) -> list[Tensor]:
        ps = [self.w1, self.b1, self.w2, self.b2, self.ln_gain, self.ln_bias]
        return ([self.gamma] if self.gamma is not None else []) + ps


def multi_head_attention(
    x: Tensor, p: MhaParams, mask: np.ndarray | None = None, return_weights: bool = False
):
    """Scaled dot-product self-attention with ``p.heads`` heads.

    ``x`` is ``(l, d)`` or ``(n, l, d)``; ``mask`` marks real positions and
    masked keys get zero attention.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
        mask = None if mask is None else np.asarray(mask, dtype=bool)[None]
    n, l, d = x.shape
    if d != p.wq.shape[0]:
        raise ShapeError(f"attention input width {d} does not match projections {p.wq.shape}")
    if mask is None:
        mask = np.ones((n, l), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("multi_head_attention: a sequence has every position masked")
    h, dk = p.heads, p.head_dim

    def split(t: Tensor) -> Tensor:
        return t.reshape(n, l, h, dk).transpose(0, 2, 1, 3)

    q = split(matmul(x, p.wq))
    k = split(matmul(x, p.wk))
    v = split(matmul(x, p.wv))
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    weights = softmax(scores, mask[:, None, None, :])
    heads = matmul(weights, v).transpose(0, 2, 1, 3).reshape(n, l, h * dk)
    out = matmul(heads, p.wo)
    if squeeze:
        out = out.reshape(l, d)
    if return_weights:
        w = weights.data[0] if squeeze else weights.data
        return out, w
    return out


def feed_forward(x: Tensor, p: GrnParams, approximate: bool = False) -> Tensor:
    return add(matmul(gelu(add(matmul(x, p.w1), p.b1), approximate), p.w2), p.b2)


def gated_residual(x: Tensor, p: GrnParams, eps: float = 1e-5, approximate: bool = False) -> Tensor:
    """LayerNorm(gamma * FFN(x) + x); without a gate, LayerNorm(FFN(x) + x)."""
    branch = feed_forward(x, p, approximate)
    if p.gamma is not None:
        branch = branch * p.gamma
    return layer_norm(branch + x, p.ln_gain, p.ln_bias, eps)


class LevelBlock:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str):
        d = cfg.dim
        self.cfg = cfg
        self.ln_gain = parameter(np.ones(d), f"{prefix}.ln_gain")
        self.ln_bias = parameter(np.zeros(d), f"{prefix}.ln_bias")
        self.mha = MhaParams(d, cfg.effective_heads, rng, f"{prefix}.mha")
        self.grn = GrnParams(d, cfg.ffn_dim, rng, cfg.flags.use_grc, f"{prefix}.grn")

    def parameters(self) -> list[Tensor]:
        return [self.ln_gain, self.ln_bias, *self.mha.parameters(), *self.grn.parameters()]

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return level_block(x, self, mask)


def level_block(x: Tensor, block: LevelBlock, mask: np.ndarray | None = None) -> Tensor:
    """``(n, l, d)`` rows -> ``(n, d)`` pooled vectors; masked rows are ignored."""
    cfg = block.cfg
    normed = layer_norm(x, block.ln_gain, block.ln_bias, cfg.ln_eps)
    attended = multi_head_attention(normed, block.mha, mask)
    mixed = gated_residual(attended, block.grn, cfg.ln_eps, cfg.gelu_approximate)
    return mean_pool(mixed, mask)


def _dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


class BgmHan:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.table = EmbeddingTable(cfg.vocab_size, cfg.dim, rng)
        self.blocks = {lvl: LevelBlock(cfg, rng, lvl) for lvl in LEVELS}
        self.head_w = parameter(_uniform(rng, cfg.dim, (cfg.dim, 1)), "head.w")
        self.head_b = parameter(_uniform(rng, cfg.dim, (1,)), "head.b")

    def parameters(self) -> list[Tensor]:
        ps = [self.table.matrix]
        for lvl in LEVELS:
            ps.extend(self.blocks[lvl].parameters())
        ps.extend([self.head_w, self.head_b])
        return ps

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def embed(self, batch: EncodedBatch) -> Tensor:
        return lookup(self.table, batch.ids, batch.word_mask)

    def forward_blocks(
        self,
        blocks: Tensor,
        word_mask: np.ndarray,
        sentence_mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Probabilities for embedded profiles of shape ``(B, 4, s, w, d)``."""
        b, f, s, w, d = blocks.shape
        if f != len(FIELD_ORDER) or d != self.cfg.dim:
            raise ShapeError(f"expected (B, {len(FIELD_ORDER)}, s, w, {self.cfg.dim}), got {blocks.shape}")
        rate = self.cfg.dropout
        word_mask = np.asarray(word_mask, dtype=bool).reshape(b * f * s, w)
        sentence_mask = np.asarray(sentence_mask, dtype=bool).reshape(b * f, s)
        # only sentences with real tokens go through the token level; padded
        # sentence slots stay zero and are masked one level up
        real = np.flatnonzero(sentence_mask.reshape(-1))
        x = take_rows(blocks.reshape(b * f * s, w, d), real)
        sent_vecs = _dropout(self.blocks["token"](x, word_mask[real]), rate, training, rng)
        sent_vecs = scatter_rows(sent_vecs, real, b * f * s).reshape(b * f, s, d)
        field_vecs = self.blocks["sentence"](sent_vecs, sentence_mask)
        field_vecs = _dropout(field_vecs, rate, training, rng).reshape(b, f, d)
        profile_vecs = _dropout(self.blocks["field"](field_vecs), rate, training, rng)
        logits = add(matmul(profile_vecs, self.head_w), self.head_b)
        return sigmoid(logits.reshape(b))

    def forward(self, batch: EncodedBatch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.forward_blocks(self.embed(batch), batch.word_mask, batch.sentence_mask, training, rng)

    def predict_proba(self, batch: EncodedBatch, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(batch), batch_size):
            sub = batch.subset(slice(start, start + batch_size))
            out.append(self.forward(sub).data)
        return np.concatenate(out) if out else np.zeros(0)

    # state -----------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()


def parameter_count(vocab_size: int, dim: int, ffn_dim: int, flags: Ablation = Ablation()) -> int:
    """Closed-form parameter count; attention width is ``dim`` for any head count."""
    d, f = dim, ffn_dim
    block = 2 * d + 4 * d * d + (d * f + f + f * d + d + 2 * d) + (d if flags.use_grc else 0)
    return vocab_size * d + 3 * block + d + 1


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, model: BgmHan, meta: dict | None = None) -> None:
    """Write parameters and metadata into one ``.npz`` container.

    Metadata (model config, config hash, tokenizer reference, caller extras)
    is stored as a UTF-8 JSON byte array under ``__meta__``.
    """
    meta = dict(meta or {})
    meta["model"] = model.cfg.to_dict()
    meta.setdefault("config_hash", config_hash(meta["model"]))
    payload = {name: arr for name, arr in model.state_dict().items()}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[BgmHan, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        state = {k: z[k] for k in z.files if k != "__meta__"}
    model = BgmHan(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(state)
    return model, meta
