"""Dual co-attention core: cross-modal scores, VGAR/TGAR, fusion, classifier.

Queries are projected from the visual sequence and keys from the textual one;
the score matrix is softmax-normalized along each axis in turn to produce
per-token scalar weights. Those weights rescale each modality's own value
vectors, yielding the vision-guided (VGAR) and text-guided (TGAR) attentive
representations, which are mean-pooled and concatenated with the pooled raw
modality features (VF, TF) before the dense softmax head.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .encoders import TEXTUAL, VISUAL, FeatureSequence


class Component(str, enum.Enum):
    """The four fusable representation components."""

    VGAR = "VGAR"
    TGAR = "TGAR"
    VF = "VF"
    TF = "TF"


#: Fixed concatenation order of fused components.
FUSION_ORDER = (Component.VGAR, Component.TGAR, Component.VF, Component.TF)


class AblationVariant(enum.Enum):
    """Model variants dropping named components from fusion."""

    FULL = frozenset(FUSION_ORDER)
    NO_VF = frozenset(FUSION_ORDER) - {Component.VF}
    NO_TF = frozenset(FUSION_ORDER) - {Component.TF}
    NO_VF_TF = frozenset({Component.VGAR, Component.TGAR})
    NO_VGAR = frozenset(FUSION_ORDER) - {Component.VGAR}
    NO_TGAR = frozenset(FUSION_ORDER) - {Component.TGAR}
    NO_VGAR_TGAR = frozenset({Component.VF, Component.TF})

    @property
    def included(self) -> frozenset[Component]:
        return self.value

    @property
    def uses_co_attention(self) -> bool:
        return bool(self.included & {Component.VGAR, Component.TGAR})

    @property
    def label(self) -> str:
        """Human-readable row label for ablation tables."""
        if self is AblationVariant.FULL:
            return "full"
        dropped = [c.value for c in FUSION_ORDER if c not in self.included]
        return "w/o " + "+".join(dropped)

    @classmethod
    def from_name(cls, name: str) -> "AblationVariant":
        try:
            return cls[name.strip().upper().replace("+", "_").replace("-", "_")]
        except KeyError:
            raise ValueError(
                f"unknown ablation variant {name!r}; expected one of "
                f"{[v.name for v in cls]}"
            ) from None


#: Ablation-table row order: each single/double drop, then the full model.
TABLE_VARIANTS = (
    AblationVariant.NO_VF,
    AblationVariant.NO_TF,
    AblationVariant.NO_VF_TF,
    AblationVariant.NO_VGAR,
    AblationVariant.NO_TGAR,
    AblationVariant.NO_VGAR_TGAR,
    AblationVariant.FULL,
)


def cross_attention_scores(
    q_features: FeatureSequence, k_features: FeatureSequence, w_q: Tensor, w_k: Tensor
) -> Tensor:
    """Scaled dot-product scores between projected visual queries and textual
    keys: S = (Xv W_q)(Xt W_k)^T / sqrt(d_head), shape [L_v, L_t]."""
    if q_features.modality != VISUAL or k_features.modality != TEXTUAL:
        raise ValueError("queries must come from the visual sequence, keys from the textual one")
    if w_q.shape[0] != q_features.width or w_k.shape[0] != k_features.width:
        raise ValueError(
            f"projection shapes {tuple(w_q.shape)}/{tuple(w_k.shape)} incompatible with "
            f"feature widths {q_features.width}/{k_features.width}"
        )
    if w_q.shape[1] != w_k.shape[1]:
        raise ValueError("W_Q and W_K must project to the same head width")
    d_head = w_q.shape[1]
    scores = (q_features.values @ w_q) @ (k_features.values @ w_k).T / math.sqrt(d_head)
    if not torch.isfinite(scores).all():
        raise ValueError("attention scores contain NaN or Inf")
    return scores


def vision_guided_repr(scores: Tensor, v_visual: Tensor) -> Tensor:
    """Rescale visual value rows by attention mass on each visual token.

    The scores are softmax-normalized over the visual axis (each column sums
    to 1); averaging each row over text tokens gives one scalar weight per
    visual token, which multiplies that token's value vector.
    """
    if scores.numel() == 0 or v_visual.numel() == 0:
        raise ValueError("scores and values must be non-empty")
    if scores.shape[0] != v_visual.shape[0]:
        raise ValueError(
            f"scores have {scores.shape[0]} visual rows but values have {v_visual.shape[0]}"
        )
    attn = torch.softmax(scores, dim=0)
    weights = attn.mean(dim=1)
    return weights.unsqueeze(1) * v_visual


def text_guided_repr(scores: Tensor, v_textual: Tensor) -> Tensor:
    """Mirror of vision_guided_repr: softmax over the textual axis (rows sum
    to 1), average over visual tokens, rescale textual value rows."""
    if scores.numel() == 0 or v_textual.numel() == 0:
        raise ValueError("scores and values must be non-empty")
    if scores.shape[1] != v_textual.shape[0]:
        raise ValueError(
            f"scores have {scores.shape[1]} textual columns but values have {v_textual.shape[0]}"
        )
    attn = torch.softmax(scores, dim=1)
    weights = attn.mean(dim=0)
    return weights.unsqueeze(1) * v_textual


class DualCoAttention(nn.Module):
    """Multi-head dual co-attention block.

    Per head: score the modalities against each other, build VGAR/TGAR, then
    concatenate heads and project each stream back to d_model. The block is
    bias-free so zero value inputs produce zero outputs.
    """

    def __init__(
        self,
        visual_width: int,
        textual_width: int,
        heads: int = 2,
        d_head: int = 32,
        d_model: int = 64,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if heads < 1 or d_head < 1 or d_model < 1:
            raise ValueError("heads, d_head, and d_model must all be >= 1")
        self.heads = heads
        self.d_head = d_head
        self.d_model = d_model
        self.visual_width = visual_width
        self.textual_width = textual_width
        self.w_q = nn.Parameter(torch.empty(heads, visual_width, d_head, dtype=dtype))
        self.w_k = nn.Parameter(torch.empty(heads, textual_width, d_head, dtype=dtype))
        self.w_vv = nn.Parameter(torch.empty(heads, visual_width, d_head, dtype=dtype))
        self.w_vt = nn.Parameter(torch.empty(heads, textual_width, d_head, dtype=dtype))
        self.o_v = nn.Parameter(torch.empty(heads * d_head, d_model, dtype=dtype))
        self.o_t = nn.Parameter(torch.empty(heads * d_head, d_model, dtype=dtype))

    def head_representations(
        self, visual: FeatureSequence, textual: FeatureSequence
    ) -> tuple[Tensor, Tensor]:
        """Per-head VGAR/TGAR concatenated along the feature axis, before the
        output projections: shapes [L_v, H*d_head] and [L_t, H*d_head]."""
        vgar_heads, tgar_heads = [], []
        for h in range(self.heads):
            scores = cross_attention_scores(visual, textual, self.w_q[h], self.w_k[h])
            vgar_heads.append(vision_guided_repr(scores, visual.values @ self.w_vv[h]))
            tgar_heads.append(text_guided_repr(scores, textual.values @ self.w_vt[h]))
        return torch.cat(vgar_heads, dim=1), torch.cat(tgar_heads, dim=1)

    def forward(self, visual: FeatureSequence, textual: FeatureSequence) -> tuple[Tensor, Tensor]:
        vgar_cat, tgar_cat = self.head_representations(visual, textual)
        return vgar_cat @ self.o_v, tgar_cat @ self.o_t


@dataclass(frozen=True)
class FusedRepresentation:
    """Concatenated multimodal vector plus which components built it."""

    vector: Tensor
    provenance: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        width = sum(w for _, w in self.provenance)
        if self.vector.ndim != 1 or self.vector.shape[0] != width:
            raise ValueError(
                f"fused vector width {tuple(self.vector.shape)} does not match "
                f"provenance total {width}"
            )

    @property
    def width(self) -> int:
        return self.vector.shape[0]


def fuse_components(parts: dict[Component, Tensor], include: tuple[Component, ...]) -> FusedRepresentation:
    """Mean-pool each included sequence and concatenate in FUSION_ORDER."""
    if not include:
        raise ValueError("fusion requires at least one included component")
    pooled: list[Tensor] = []
    provenance: list[tuple[str, int]] = []
    for component in FUSION_ORDER:
        if component not in include:
            continue
        seq = parts.get(component)
        if seq is None:
            raise ValueError(f"component {component.value} is included but missing")
        vec = seq.mean(dim=0)
        pooled.append(vec)
        provenance.append((component.value, vec.shape[0]))
    return FusedRepresentation(vector=torch.cat(pooled), provenance=tuple(provenance))


def fuse(
    vgar_seq: Tensor | None,
    tgar_seq: Tensor | None,
    visual: FeatureSequence,
    textual: FeatureSequence,
    variant: AblationVariant,
) -> FusedRepresentation:
    """Build the fused representation for a variant; attentive sequences may
    be None only when the variant excludes them."""
    include = tuple(c for c in FUSION_ORDER if c in variant.included)
    parts: dict[Component, Tensor] = {Component.VF: visual.values, Component.TF: textual.values}
    if vgar_seq is not None:
        parts[Component.VGAR] = vgar_seq
    if tgar_seq is not None:
        parts[Component.TGAR] = tgar_seq
    return fuse_components(parts, include)


def classify(fused: FusedRepresentation, weight: Tensor, bias: Tensor) -> Tensor:
    """Dense layer + softmax over classes; probabilities sum to 1."""
    if weight.ndim != 2 or weight.shape[1] != fused.width:
        raise ValueError(
            f"head weight shape {tuple(weight.shape)} incompatible with fused width {fused.width}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {tuple(bias.shape)} incompatible with {weight.shape[0]} classes")
    return torch.softmax(weight @ fused.vector + bias, dim=0)


class ClassifierHead(nn.Module):
    """Dense layer producing class probabilities from a fused vector."""

    def __init__(self, input_width: int, class_count: int, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        if class_count < 2:
            raise ValueError("class_count must be >= 2")
        self.dense = nn.Linear(input_width, class_count, dtype=dtype)

    def forward(self, fused: FusedRepresentation) -> Tensor:
        return classify(fused, self.dense.weight, self.dense.bias)


def fused_width(
    variant: AblationVariant, d_model: int, visual_width: int, textual_width: int
) -> int:
    """Width of the fused vector for a variant: sum of included components."""
    widths = {
        Component.VGAR: d_model,
        Component.TGAR: d_model,
        Component.VF: visual_width,
        Component.TF: textual_width,
    }
    return sum(widths[c] for c in FUSION_ORDER if c in variant.included)
