"""Per-modality feature extraction.

Provides lightweight trainable encoders (linear patch/token embedding +
learned positions + a small stack of self-attention layers) that exercise the
same sequence-of-features contract as heavyweight pretrained encoders, plus an
adapter interface for plugging those in without bundling their weights.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import torch
from torch import Tensor, nn

VISUAL = "visual"
TEXTUAL = "textual"
MODALITIES = (VISUAL, TEXTUAL)

#: Number of reserved byte-fallback tokens at the head of every vocabulary.
BYTE_TOKENS = 256


@dataclass(frozen=True)
class FeatureSequence:
    """Encoder output: an L x d feature matrix tagged with its modality."""

    values: Tensor
    modality: str

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.values.ndim != 2:
            raise ValueError(f"values must be a 2-D matrix, got shape {tuple(self.values.shape)}")
        length, width = self.values.shape
        if length < 1 or width < 1:
            raise ValueError(f"values must be at least 1x1, got {length}x{width}")
        if not torch.isfinite(self.values).all():
            raise ValueError("feature values contain NaN or Inf")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EncoderConfig:
    """Shape/config contract for one modality's encoder."""

    modality: str
    output_width: int
    # visual
    image_side: int = 32
    patch_size: int = 8
    channels: int = 3
    # textual
    vocab_size: int = BYTE_TOKENS
    max_length: int = 64
    # shared
    depth: int = 1
    positional: bool = True
    trainable: bool = True

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.output_width < 1:
            raise ValueError("output_width must be >= 1")
        if self.modality == VISUAL:
            if self.image_side < 1 or self.patch_size < 1 or self.channels < 1:
                raise ValueError("image_side, patch_size, and channels must be >= 1")
            if self.image_side % self.patch_size != 0:
                raise ValueError(
                    f"image_side {self.image_side} not divisible by patch_size {self.patch_size}"
                )
        else:
            if self.vocab_size < 1:
                raise ValueError("vocab_size must be >= 1")
            if self.max_length < 1:
                raise ValueError("max_length must be >= 1")

    @property
    def sequence_length(self) -> int:
        """L for visual configs; the max L for textual configs."""
        if self.modality == VISUAL:
            return (self.image_side // self.patch_size) ** 2
        return self.max_length


class SelfAttentionBlock(nn.Module):
    """Single-head self-attention with a residual connection and layer norm."""

    def __init__(self, width: int, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(width, dtype=dtype)
        self.query = nn.Linear(width, width, dtype=dtype)
        self.key = nn.Linear(width, width, dtype=dtype)
        self.value = nn.Linear(width, width, dtype=dtype)
        self.out = nn.Linear(width, width, dtype=dtype)
        self.scale = width**-0.5

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        attn = torch.softmax(self.query(h) @ self.key(h).T * self.scale, dim=-1)
        return x + self.out(attn @ self.value(h))


class ImageEncoder(nn.Module):
    """Patchify, linearly embed, add positions, run self-attention layers."""

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        if config.modality != VISUAL:
            raise ValueError("ImageEncoder requires a visual config")
        self.config = config
        patch_dim = config.patch_size * config.patch_size * config.channels
        self.patch_embed = nn.Linear(patch_dim, config.output_width, dtype=dtype)
        self.positions = nn.Parameter(
            torch.zeros(config.sequence_length, config.output_width, dtype=dtype)
        )
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.output_width, dtype=dtype) for _ in range(config.depth)
        )
        if not config.trainable:
            self.requires_grad_(False)

    def patchify(self, image: Tensor) -> Tensor:
        """[S, S, C] image -> [L, patch_size^2 * C] row-major patch matrix."""
        side, patch = self.config.image_side, self.config.patch_size
        n = side // patch
        patches = image.reshape(n, patch, n, patch, self.config.channels)
        return patches.permute(0, 2, 1, 3, 4).reshape(n * n, patch * patch * self.config.channels)

    def forward(self, image: Tensor) -> FeatureSequence:
        cfg = self.config
        if image.ndim != 3 or image.shape != (cfg.image_side, cfg.image_side, cfg.channels):
            raise ValueError(
                f"expected image of shape ({cfg.image_side}, {cfg.image_side}, {cfg.channels}), "
                f"got {tuple(image.shape)}"
            )
        if not torch.isfinite(image).all():
            raise ValueError("image contains non-finite pixels")
        if image.min() < 0 or image.max() > 1:
            raise ValueError("pixel values must be normalized to [0, 1]")
        x = self.patch_embed(self.patchify(image.to(self.patch_embed.weight.dtype)))
        if cfg.positional:
            x = x + self.positions
        for block in self.blocks:
            x = block(x)
        return FeatureSequence(values=x, modality=VISUAL)


class TextEncoder(nn.Module):
    """Token embedding + learned positions + self-attention layers."""

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        if config.modality != TEXTUAL:
            raise ValueError("TextEncoder requires a textual config")
        self.config = config
        self.token_embed = nn.Embedding(config.vocab_size, config.output_width, dtype=dtype)
        self.positions = nn.Parameter(
            torch.zeros(config.max_length, config.output_width, dtype=dtype)
        )
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.output_width, dtype=dtype) for _ in range(config.depth)
        )
        if not config.trainable:
            self.requires_grad_(False)

    def forward(self, tokens: Iterable[int] | Tensor) -> FeatureSequence:
        cfg = self.config
        ids = torch.as_tensor(tuple(tokens) if not isinstance(tokens, Tensor) else tokens)
        if ids.ndim != 1 or ids.numel() == 0:
            raise ValueError("token sequence must be a non-empty 1-D sequence")
        if ids.numel() > cfg.max_length:
            raise ValueError(f"sequence length {ids.numel()} exceeds max_length {cfg.max_length}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            bad = int(ids.min() if ids.min() < 0 else ids.max())
            raise ValueError(f"token id {bad} outside vocabulary of size {cfg.vocab_size}")
        x = self.token_embed(ids.long())
        if cfg.positional:
            x = x + self.positions[: ids.numel()]
        for block in self.blocks:
            x = block(x)
        return FeatureSequence(values=x, modality=TEXTUAL)


def project_features(features: FeatureSequence, projection: Tensor) -> FeatureSequence:
    """Linearly map a feature sequence to a new width; length is unchanged."""
    if projection.ndim != 2 or projection.shape[0] != features.width:
        raise ValueError(
            f"projection shape {tuple(projection.shape)} incompatible with width {features.width}"
        )
    return FeatureSequence(values=features.values @ projection, modality=features.modality)


class Tokenizer:
    """Whitespace tokenizer with byte fallback for out-of-vocabulary words.

    The vocabulary starts with 256 reserved byte tokens ("<0x00>".."<0xFF>");
    any word not present as a whole token is encoded as its UTF-8 bytes.
    Persisted as one token per line, index = line number.
    """

    def __init__(self, vocab: Iterable[str] | None = None) -> None:
        tokens = list(vocab) if vocab is not None else [f"<0x{i:02X}>" for i in range(BYTE_TOKENS)]
        if len(tokens) < BYTE_TOKENS:
            raise ValueError("vocabulary must include the 256 byte-fallback tokens")
        self.tokens: list[str] = tokens
        self.index: dict[str, int] = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Iterable[str], max_words: int | None = None) -> "Tokenizer":
        """Build a vocabulary from a corpus: byte tokens, then words by
        descending frequency (ties broken by first occurrence)."""
        counts: dict[str, int] = {}
        first_seen: dict[str, int] = {}
        for text in texts:
            for word in text.split():
                counts[word] = counts.get(word, 0) + 1
                first_seen.setdefault(word, len(first_seen))
        ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
        if max_words is not None:
            ranked = ranked[:max_words]
        byte_tokens = [f"<0x{i:02X}>" for i in range(BYTE_TOKENS)]
        words = [w for w in ranked if w not in set(byte_tokens)]
        return cls(byte_tokens + words)

    def encode(self, text: str, max_length: int | None = None) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            if word in self.index:
                ids.append(self.index[word])
            else:
                ids.extend(b for b in word.encode("utf-8"))
        if not ids:
            raise ValueError("text produced no tokens")
        if max_length is not None:
            ids = ids[:max_length]
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        words: list[str] = []
        byte_run: list[int] = []

        def flush() -> None:
            if byte_run:
                words.append(bytes(byte_run).decode("utf-8", errors="replace"))
                byte_run.clear()

        for i in ids:
            if i < 0 or i >= len(self.tokens):
                raise ValueError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
            if i < BYTE_TOKENS:
                byte_run.append(i)
            else:
                flush()
                words.append(self.tokens[i])
        flush()
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


# --- pretrained-adapter interface ------------------------------------------
#
# Heavyweight encoders run out of process; they exchange features in a tiny
# binary format: uint32 L, uint32 d, then L*d row-major float32 values,
# little-endian throughout.

_HEADER = struct.Struct("<II")


def serialize_features(features: FeatureSequence) -> bytes:
    values = features.values.detach().to(torch.float32).contiguous()
    return _HEADER.pack(features.length, features.width) + values.numpy().tobytes()


def deserialize_features(data: bytes, modality: str) -> FeatureSequence:
    if len(data) < _HEADER.size:
        raise ValueError("feature payload too short")
    length, width = _HEADER.unpack_from(data)
    expected = _HEADER.size + 4 * length * width
    if len(data) != expected:
        raise ValueError(f"feature payload has {len(data)} bytes, expected {expected}")
    values = torch.frombuffer(bytearray(data[_HEADER.size :]), dtype=torch.float32)
    return FeatureSequence(values=values.reshape(length, width), modality=modality)


class FeatureAdapter(Protocol):
    """Contract for plug-in pretrained encoders."""

    def encode_image_file(self, path: str | Path) -> FeatureSequence: ...

    def encode_caption(self, text: str) -> FeatureSequence: ...


class PrecomputedFeatureAdapter:
    """Adapter serving features precomputed into a directory.

    Expects ``<key>.visual.feat`` / ``<key>.textual.feat`` files in the wire
    format above. Images are keyed by filename stem; captions by the SHA-1
    hex digest of their UTF-8 text.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @staticmethod
    def caption_key(text: str) -> str:
        return hashlib.sha1(text.encode("utf-8")).hexdigest()

    def store(self, key: str, features: FeatureSequence) -> Path:
        path = self.root / f"{key}.{features.modality}.feat"
        path.write_bytes(serialize_features(features))
        return path

    def lookup(self, key: str, modality: str) -> FeatureSequence:
        path = self.root / f"{key}.{modality}.feat"
        if not path.is_file():
            raise FileNotFoundError(f"no precomputed features at {path}")
        return deserialize_features(path.read_bytes(), modality)

    def encode_image_file(self, path: str | Path) -> FeatureSequence:
        return self.lookup(Path(path).stem, VISUAL)

    def encode_caption(self, text: str) -> FeatureSequence:
        return self.lookup(self.caption_key(text), TEXTUAL)
