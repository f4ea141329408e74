"""Word-level tokenizer and compact transformer text encoder."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, DimensionError, InputError
from .numerics import tensor as T
from .numerics.nn import MLP, LayerNorm, Module, MultiHeadAttention, Parameter
from .numerics.tensor import Tensor

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

# Lowercase words, and numbers split into single digits.
_TOKEN_RE = re.compile(r"[a-z]+|[0-9]")


class Vocabulary:
    """Word list; ids 0-3 are reserved, word on line i gets id 4 + i."""

    def __init__(self, words):
        self.words = list(RESERVED) + list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("vocabulary contains duplicate entries")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Vocabulary":
        if path is None:
            text = resources.files("refsam3d").joinpath("data/vocab.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls(line.strip() for line in text.splitlines() if line.strip())

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, UNK)


_default_vocab: Vocabulary | None = None


def default_vocab() -> Vocabulary:
    global _default_vocab
    if _default_vocab is None:
        _default_vocab = Vocabulary.load()
    return _default_vocab


@dataclass
class TokenSequence:
    ids: list[int]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary | None = None, max_len: int = 32) -> TokenSequence:
    """Lowercase, split on whitespace/punctuation, map to ids wrapped in BOS/EOS.

    Sequences longer than ``max_len`` keep their first ``max_len - 2`` words
    and set ``truncated``.
    """
    vocab = vocab or default_vocab()
    if not text or not text.strip():
        raise InputError("prompt text is empty")
    if max_len < 3:
        raise ConfigError("max_len must leave room for BOS, one word and EOS")
    words = split_words(text)
    if not words:
        raise InputError(f"prompt {text!r} contains no words")
    truncated = len(words) > max_len - 2
    words = words[: max_len - 2]
    return TokenSequence([BOS] + [vocab.id(w) for w in words] + [EOS], truncated)


def detokenize(tokens: TokenSequence, vocab: Vocabulary | None = None) -> str:
    vocab = vocab or default_vocab()
    return " ".join(vocab.words[i] for i in tokens.ids if i not in (PAD, BOS, EOS))


class TransformerBlock(Module):
    """Pre-norm self-attention + MLP, no causal mask."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, origin: str):
        self.norm1 = LayerNorm(dim, origin=origin)
        self.attn = MultiHeadAttention(dim, heads, rng, origin=origin)
        self.norm2 = LayerNorm(dim, origin=origin)
        self.mlp = MLP(dim, 4 * dim, dim, rng, origin=origin)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TextEncoder(Module):
    """Token + position embedding followed by a stack of transformer blocks.

    Stands in for a pretrained text tower, so all weights are tagged
    ``pretrained-2d`` and stay frozen during fine-tuning.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, max_len: int = 32,
                 depth: int = 2, heads: int = 2, pooling: str = "mean"):
        if pooling not in ("mean", "eos"):
            raise ConfigError(f"unknown pooling rule {pooling!r}")
        origin = "pretrained-2d"
        self.token_embed = Parameter(rng.normal(0.0, 1.0, size=(vocab_size, dim)), origin)
        self.pos_embed = Parameter(rng.normal(0.0, 0.1, size=(max_len, dim)), origin)
        self.blocks = [TransformerBlock(dim, heads, rng, origin) for _ in range(depth)]
        self.norm = LayerNorm(dim, origin=origin)
        self.max_len = max_len
        self.pooling = pooling

    def forward(self, tokens: TokenSequence) -> Tensor:
        return encode_text(tokens, self)

    def pool(self, F_e: Tensor) -> Tensor:
        if self.pooling == "eos":
            return F_e[F_e.shape[0] - 1]
        return pool_sentence(F_e)


def encode_text(tokens: TokenSequence, enc: TextEncoder) -> Tensor:
    """Word embeddings F_e of shape (L, C_e)."""
    ids = np.asarray(tokens.ids, dtype=np.int64)
    vocab_size = enc.token_embed.shape[0]
    if ids.ndim != 1 or len(ids) == 0:
        raise InputError("token sequence is empty")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise CorruptionError(f"token id out of range [0, {vocab_size}): {ids.tolist()}")
    if len(ids) > enc.max_len:
        raise DimensionError(f"sequence length {len(ids)} exceeds max_len {enc.max_len}")
    x = enc.token_embed[ids] + enc.pos_embed[: len(ids)]
    x = T.reshape(x, (1, len(ids), x.shape[-1]))
    for block in enc.blocks:
        x = block(x)
    x = enc.norm(x)
    return T.reshape(x, x.shape[1:])


def pool_sentence(F_e: Tensor) -> Tensor:
    """Sentence embedding as the arithmetic mean of the word rows."""
    if F_e.ndim != 2 or F_e.shape[0] < 1:
        raise DimensionError(f"expected (L >= 1, C_e) word embeddings, got {F_e.shape}")
    return F_e.mean(axis=0)
