"""Hierarchical attention classifier for multi-field applicant profiles, on a small numpy autodiff engine."""

from .bpe import BpeVocab, WordVocab, decode, encode, load_tokenizer, load_vocab, save_tokenizer, save_vocab, train_bpe
from .config import RunConfig, load_run_config
from .data import Profile, generate_synthetic, load_profiles, save_profiles, stratified_split
from .embedding import embed_field, encode_field, encode_profiles
from .evaluation import compute_metrics, tfidf_baseline
from .model import Ablation, BgmHan, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, check_gradients, parameter
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "BgmHan",
    "BpeVocab",
    "ModelConfig",
    "Profile",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "WordVocab",
    "backward",
    "check_gradients",
    "compute_metrics",
    "decode",
    "embed_field",
    "encode",
    "encode_field",
    "encode_profiles",
    "generate_synthetic",
    "load_checkpoint",
    "load_profiles",
    "load_run_config",
    "load_tokenizer",
    "load_vocab",
    "parameter",
    "save_checkpoint",
    "save_profiles",
    "save_tokenizer",
    "save_vocab",
    "stratified_split",
    "tfidf_baseline",
    "train",
    "train_bpe",
]
