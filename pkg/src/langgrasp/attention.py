"""Three-stream attention over language, grasp-region, and segmentation features.

The model runs three attention blocks in parallel over a shared feature width d:

* text self-attention over the K token embeddings,
* language -> vision cross-attention that injects the instruction into the
  per-proposal visual features,
* vision -> segmentation cross-attention that produces per-proposal
  segmentation embeddings for the correspondence objective.

Each block ends in a residual layer-norm.  With a single head the block is the
plain scaled dot-product form (scale 1/sqrt(d), no output projection); with
H > 1 heads the stream's projection matrices are column-partitioned into
per-head slices of width d/H (scale 1/sqrt(d/H)) and the concatenated heads
pass through the stream's output projection W_O.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = [
    "QueryMode",
    "StreamWeights",
    "AttentionParams",
    "StreamFeatures",
    "AttentionOutput",
    "multi_head",
    "text_self_attention",
    "language_vision_cross_attention",
    "vision_segmentation_cross_attention",
    "mask_guided_forward",
]


class QueryMode(str, Enum):
    """How the language -> vision block forms its queries.

    TEXT_QUERY pools the token embeddings into one query row, attends over the
    proposals, and broadcasts the single attended vector back across all
    proposal rows before the residual.  REGION_QUERY flips the roles: each
    proposal row queries the token embeddings, so the attended matrix already
    has one row per proposal and the residual needs no broadcast.
    """

    TEXT_QUERY = "text-query"
    REGION_QUERY = "region-query"


@dataclass
class StreamWeights:
    """Projection and normalization weights for one attention stream."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln_gain: Tensor
    ln_bias: Tensor


_STREAMS = ("text", "vis", "seg")


@dataclass
class AttentionParams:
    """Weights for all three streams at feature width ``dim`` with ``heads`` heads."""

    dim: int
    heads: int
    text: StreamWeights
    vis: StreamWeights
    seg: StreamWeights

    def __post_init__(self):
        if self.dim < 2:
            raise ShapeError(f"attention needs dim >= 2, got {self.dim}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ShapeError(
                f"head count must divide the feature width: dim={self.dim}, heads={self.heads}"
            )
        for stream in _STREAMS:
            sw = getattr(self, stream)
            for name in ("w_q", "w_k", "w_v", "w_o"):
                t = getattr(sw, name)
                if t.data.shape != (self.dim, self.dim):
                    raise ShapeError(
                        f"{stream}.{name} must be ({self.dim}, {self.dim}), got {t.data.shape}"
                    )
            for name in ("ln_gain", "ln_bias"):
                t = getattr(sw, name)
                if t.data.shape != (1, self.dim):
                    raise ShapeError(
                        f"{stream}.{name} must be (1, {self.dim}), got {t.data.shape}"
                    )

    def named(self):
        """Yield ``(dotted_name, tensor)`` pairs in a fixed, documented order."""
        for stream in _STREAMS:
            sw = getattr(self, stream)
            for name in ("w_q", "w_k", "w_v", "w_o", "ln_gain", "ln_bias"):
                yield f"attention.{stream}.{name}", getattr(sw, name)


@dataclass
class StreamFeatures:
    """Frozen backbone features for one scene: K x d text tokens, m x d visual
    proposal features, and m x d per-proposal segmentation features."""

    text: Tensor
    vis: Tensor
    seg: Tensor

    def __post_init__(self):
        if self.text.rows < 1:
            raise ShapeError(f"need at least one text token, got {self.text.rows}")
        if self.vis.rows < 2:
            raise ShapeError(f"need at least two proposals, got {self.vis.rows}")
        if self.vis.rows != self.seg.rows:
            raise ShapeError(
                f"visual and segmentation proposal counts disagree: "
                f"{self.vis.rows} vs {self.seg.rows}"
            )
        if not (self.text.cols == self.vis.cols == self.seg.cols):
            raise ShapeError(
                f"stream feature widths disagree: text {self.text.cols}, "
                f"vis {self.vis.cols}, seg {self.seg.cols}"
            )


@dataclass
class AttentionOutput:
    """Attended embeddings plus the attention-weight matrices of each stream.

    Under multi-head attention the reported weight matrices are the average
    over heads, which keeps every row a probability distribution.
    """

    z_text: Tensor
    z_vis: Tensor
    z_seg: Tensor
    s_text: Tensor
    s_vis: Tensor
    s_seg: Tensor


def _stream_weights(params: AttentionParams, stream: str) -> StreamWeights:
    if stream not in _STREAMS:
        raise ValueError(f"unknown stream {stream!r}, expected one of {_STREAMS}")
    return getattr(params, stream)


def multi_head(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    params: AttentionParams,
    stream: str,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention for one stream.

    The stream's W_Q/W_K/W_V are column-partitioned into ``heads`` slices of
    width d/H; head outputs are concatenated and passed through W_O.  With
    ``return_weights`` the head-averaged attention matrix is returned as well.
    """
    sw = _stream_weights(params, stream)
    d_head = params.dim // params.heads
    inv_scale = 1.0 / math.sqrt(d_head)
    outputs = []
    weights = []
    for h in range(params.heads):
        lo, hi = h * d_head, (h + 1) * d_head
        q = ad.matmul(q_in, ad.slice_cols(sw.w_q, lo, hi))
        k = ad.matmul(k_in, ad.slice_cols(sw.w_k, lo, hi))
        v = ad.matmul(v_in, ad.slice_cols(sw.w_v, lo, hi))
        s = ad.row_softmax(ad.scale(ad.matmul(q, ad.transpose(k)), inv_scale))
        outputs.append(ad.matmul(s, v))
        weights.append(s)
    out = outputs[0]
    for part in outputs[1:]:
        out = ad.concat_cols(out, part)
    out = ad.matmul(out, sw.w_o)
    if not return_weights:
        return out
    s_mean = weights[0]
    for s in weights[1:]:
        s_mean = ad.add(s_mean, s)
    return out, ad.scale(s_mean, 1.0 / params.heads)


def _attend(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: AttentionParams, stream: str):
    """Attended output and weights; literal single-head form when heads == 1."""
    if params.heads == 1:
        sw = _stream_weights(params, stream)
        q = ad.matmul(q_in, sw.w_q)
        k = ad.matmul(k_in, sw.w_k)
        v = ad.matmul(v_in, sw.w_v)
        s = ad.row_softmax(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(params.dim)))
        return ad.matmul(s, v), s
    return multi_head(q_in, k_in, v_in, params, stream, return_weights=True)


def _check_width(name: str, f: Tensor, params: AttentionParams) -> None:
    if f.cols != params.dim:
        raise ShapeError(
            f"{name} feature width {f.cols} does not match attention dim {params.dim}"
        )


def text_self_attention(f_text: Tensor, params: AttentionParams):
    """Token self-attention: returns (s_text, z_text) with z_text = LN(attended + f_text)."""
    _check_width("text", f_text, params)
    att, s = _attend(f_text, f_text, f_text, params, "text")
    z = ad.layer_norm(ad.add(att, f_text), params.text.ln_gain, params.text.ln_bias)
    return s, z


def language_vision_cross_attention(
    f_text: Tensor,
    f_vis: Tensor,
    params: AttentionParams,
    mode: QueryMode = QueryMode.TEXT_QUERY,
):
    """Inject the instruction into the visual proposals; returns (s_vis, z_vis)."""
    _check_width("text", f_text, params)
    _check_width("vis", f_vis, params)
    mode = QueryMode(mode)
    if mode is QueryMode.TEXT_QUERY:
        pooled = ad.mean_rows(f_text)
        att, s = _attend(pooled, f_vis, f_vis, params, "vis")
        z = ad.layer_norm(ad.add_row(f_vis, att), params.vis.ln_gain, params.vis.ln_bias)
    else:
        att, s = _attend(f_vis, f_text, f_text, params, "vis")
        z = ad.layer_norm(ad.add(att, f_vis), params.vis.ln_gain, params.vis.ln_bias)
    return s, z


def vision_segmentation_cross_attention(f_vis: Tensor, f_seg: Tensor, params: AttentionParams):
    """Visual queries over segmentation keys/values; returns (s_seg, z_seg).

    The residual adds the segmentation features, so z_seg stays aligned
    row-for-row with the proposals.
    """
    _check_width("vis", f_vis, params)
    _check_width("seg", f_seg, params)
    if f_vis.rows != f_seg.rows:
        raise ShapeError(
            f"proposal counts disagree: vis {f_vis.rows} vs seg {f_seg.rows}"
        )
    att, s = _attend(f_vis, f_seg, f_seg, params, "seg")
    z = ad.layer_norm(ad.add(att, f_seg), params.seg.ln_gain, params.seg.ln_bias)
    return s, z


def mask_guided_forward(
    feats: StreamFeatures,
    params: AttentionParams,
    mode: QueryMode = QueryMode.TEXT_QUERY,
) -> AttentionOutput:
    """Run all three attention streams in parallel over one scene's features."""
    s_text, z_text = text_self_attention(feats.text, params)
    s_vis, z_vis = language_vision_cross_attention(feats.text, feats.vis, params, mode)
    s_seg, z_seg = vision_segmentation_cross_attention(feats.vis, feats.seg, params)
    return AttentionOutput(
        z_text=z_text, z_vis=z_vis, z_seg=z_seg,
        s_text=s_text, s_vis=s_vis, s_seg=s_seg,
    )
