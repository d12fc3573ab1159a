"""End-to-end classifier: lightweight encoders -> dual co-attention -> head."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .coattention import (
    AblationVariant,
    ClassifierHead,
    DualCoAttention,
    FusedRepresentation,
    fuse,
    fused_width,
)
from .encoders import TEXTUAL, VISUAL, EncoderConfig, FeatureSequence, ImageEncoder, TextEncoder


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a classifier with identical shapes."""

    visual: EncoderConfig
    textual: EncoderConfig
    class_count: int = 2
    heads: int = 2
    d_head: int = 32
    d_model: int = 64
    variant: AblationVariant = AblationVariant.FULL
    class_labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.visual.modality != VISUAL or self.textual.modality != TEXTUAL:
            raise ValueError("visual/textual encoder configs are swapped or mislabeled")
        if self.class_labels and len(self.class_labels) != self.class_count:
            raise ValueError("class_labels length must match class_count")


class MemeClassifier(nn.Module):
    """Full pipeline from (image, tokens) to class probabilities.

    The ablation variant decides which components reach the fusion layer;
    excluded branches are not evaluated, so their parameters receive no
    gradient through the loss.
    """

    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.config = config
        self.image_encoder = ImageEncoder(config.visual, dtype=dtype)
        self.text_encoder = TextEncoder(config.textual, dtype=dtype)
        self.co_attention = DualCoAttention(
            visual_width=config.visual.output_width,
            textual_width=config.textual.output_width,
            heads=config.heads,
            d_head=config.d_head,
            d_model=config.d_model,
            dtype=dtype,
        )
        width = fused_width(
            config.variant, config.d_model, config.visual.output_width, config.textual.output_width
        )
        self.head = ClassifierHead(width, config.class_count, dtype=dtype)

    @property
    def variant(self) -> AblationVariant:
        return self.config.variant

    def fuse_features(self, visual: FeatureSequence, textual: FeatureSequence) -> FusedRepresentation:
        """Fusion for already-encoded features (e.g. from a pretrained adapter)."""
        if self.variant.uses_co_attention:
            vgar_seq, tgar_seq = self.co_attention(visual, textual)
        else:
            vgar_seq = tgar_seq = None
        return fuse(vgar_seq, tgar_seq, visual, textual, self.variant)

    def forward_features(self, visual: FeatureSequence, textual: FeatureSequence) -> Tensor:
        return self.head(self.fuse_features(visual, textual))

    def forward(self, image: Tensor, tokens: Tensor) -> Tensor:
        visual = self.image_encoder(image)
        textual = self.text_encoder(tokens)
        return self.forward_features(visual, textual)


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministically reinitialize all parameters of a module.

    Matrices (>= 2-D) are drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    with fan_in the trailing dimension; biases are zeroed; layer-norm scales
    are set to one. Iteration follows registration order, so identical seeds
    give identical parameters.
    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.ndim >= 2:
                bound = param.shape[-1] ** -0.5
                values = torch.rand(
                    param.shape, generator=generator, dtype=torch.float64
                ) * 2 * bound - bound
                param.copy_(values.to(param.dtype))
            elif name.endswith("norm.weight"):
                param.fill_(1.0)
            else:
                param.zero_()


def build_model(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> MemeClassifier:
    """Construct and seed-initialize a classifier."""
    model = MemeClassifier(config, dtype=dtype)
    init_parameters(model, seed)
    return model
