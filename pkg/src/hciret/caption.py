"""Auxiliary-caption machinery: pair augmentation, co-attention audio
enhancement, and text-caption score fusion.

The enhancement module is one cross-attention transformer layer (frame
queries attend to caption keys/values) followed by a standard
self-attention layer over the frame sequence to model temporal
structure. Both layers are pre-norm residual with zero-initialised
output and second feed-forward projections, so at initialisation the
module is exactly the identity and training starts from the unenhanced
baseline.

Everything here is pure given immutable parameters and can run in
parallel across items at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Bundle, PairRecord
from .errors import UsageError
from .hierarchy import MlpParams, init_mlp
from .rng import Xoshiro256
from .tensor import Parameter, Tensor, as_tensor


@dataclass
class FusionConfig:
    """Weighted-sum fusion of audio-text and text-caption scores."""

    lam: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("fusion weight must be >= 0")


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class AttentionParams:
    """Query/key/value/output projections, D x D each, split across heads."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class TransformerLayerParams:
    ln_attn: LayerNormParams
    attn: AttentionParams
    ln_ff: LayerNormParams
    ff: MlpParams


@dataclass
class CoAttentionParams:
    heads: int
    cross: TransformerLayerParams
    self_attn: TransformerLayerParams


def _layer_norm_affine(x: Tensor, params: LayerNormParams) -> Tensor:
    return T.layer_norm(x) * params.gain + params.bias


def multi_head_attention(query_rows: Tensor, kv_rows: Tensor, params: AttentionParams, heads: int, collect=None) -> Tensor:
    """Scaled dot-product attention; heads are contiguous column blocks
    of the projected queries/keys/values. ``collect``, when given, is
    filled with each head's attention weight matrix."""
    dim = params.wq.shape[0]
    if dim % heads != 0:
        raise UsageError(f"dim {dim} not divisible by {heads} heads")
    head_dim = dim // heads
    q = T.matmul(query_rows, params.wq)
    k = T.matmul(kv_rows, params.wk)
    v = T.matmul(kv_rows, params.wv)
    outputs = []
    for h in range(heads):
        qh = T.narrow(q, 1, h * head_dim, head_dim)
        kh = T.narrow(k, 1, h * head_dim, head_dim)
        vh = T.narrow(v, 1, h * head_dim, head_dim)
        scores = T.matmul(qh, T.transpose(kh)) * (1.0 / np.sqrt(head_dim))
        weights = T.softmax(scores, axis=1)
        if collect is not None:
            collect.append(weights.data)
        outputs.append(T.matmul(weights, vh))
    return T.matmul(T.concat(outputs, axis=1), params.wo)


def _feed_forward(x: Tensor, params: MlpParams) -> Tensor:
    return T.matmul(T.relu(T.matmul(x, params.w1) + params.b1), params.w2) + params.b2


def _transformer_layer(x: Tensor, kv: Tensor | None, params: TransformerLayerParams, heads: int, collect=None) -> Tensor:
    normed = _layer_norm_affine(x, params.ln_attn)
    keys = normed if kv is None else kv
    x = x + multi_head_attention(normed, keys, params.attn, heads, collect)
    return x + _feed_forward(_layer_norm_affine(x, params.ln_ff), params.ff)


def co_attend(frames, caption, params: CoAttentionParams, return_weights: bool = False):
    """Enhance frame embeddings with caption information.

    ``caption`` is one or more rows (by default the caption's single
    [CLS] vector; full token sequences work too). Output has the frame
    sequence's shape.
    """
    frames = as_tensor(frames)
    caption = as_tensor(caption)
    if caption.ndim == 1:
        caption = T.reshape(caption, 1, caption.size)
    if frames.ndim != 2 or caption.ndim != 2 or caption.shape[0] < 1:
        raise UsageError("co_attend expects frame and caption row matrices")
    if frames.shape[1] != caption.shape[1]:
        raise UsageError(f"dimension mismatch: frames {frames.shape} vs caption {caption.shape}")
    weights: list[np.ndarray] | None = [] if return_weights else None
    out = _transformer_layer(frames, caption, params.cross, params.heads, weights)
    out = _transformer_layer(out, None, params.self_attn, params.heads, weights)
    if return_weights:
        return out, weights
    return out


def _init_layer(name: str, dim: int, heads: int, rng: Xoshiro256, zero_init_outputs: bool) -> TransformerLayerParams:
    s = 1.0 / np.sqrt(dim)

    def proj(suffix, zero):
        value = np.zeros((dim, dim)) if zero else s * rng.normals(dim, dim)
        return Parameter(f"{name}.{suffix}", value)

    attn = AttentionParams(
        wq=proj("wq", False), wk=proj("wk", False), wv=proj("wv", False), wo=proj("wo", zero_init_outputs)
    )
    ff = init_mlp(f"{name}.ff", dim, rng)
    if zero_init_outputs:
        ff.w2.data[:] = 0.0
    return TransformerLayerParams(
        ln_attn=LayerNormParams(
            gain=Parameter(f"{name}.ln_attn.gain", np.ones(dim)),
            bias=Parameter(f"{name}.ln_attn.bias", np.zeros(dim)),
        ),
        attn=attn,
        ln_ff=LayerNormParams(
            gain=Parameter(f"{name}.ln_ff.gain", np.ones(dim)),
            bias=Parameter(f"{name}.ln_ff.bias", np.zeros(dim)),
        ),
        ff=ff,
    )


def init_co_attention(
    name: str, dim: int, heads: int, rng: Xoshiro256, zero_init_outputs: bool = True
) -> CoAttentionParams:
    """Build co-attention parameters. With ``zero_init_outputs`` (the
    default) the module starts as the identity map."""
    if heads < 1 or dim % heads != 0:
        raise UsageError(f"dim {dim} must be divisible by heads {heads}")
    return CoAttentionParams(
        heads=heads,
        cross=_init_layer(f"{name}.cross", dim, heads, rng, zero_init_outputs),
        self_attn=_init_layer(f"{name}.self", dim, heads, rng, zero_init_outputs),
    )


def co_attention_parameters(params: CoAttentionParams) -> list[Parameter]:
    out: list[Parameter] = []
    for layer in (params.cross, params.self_attn):
        out.extend([layer.ln_attn.gain, layer.ln_attn.bias, layer.ln_ff.gain, layer.ln_ff.bias])
        out.extend([layer.attn.wq, layer.attn.wk, layer.attn.wv, layer.attn.wo])
        out.extend([layer.ff.w1, layer.ff.b1, layer.ff.w2, layer.ff.b2])
    return out


# -- pair augmentation ----------------------------------------------------


def augment_pairs(bundle: Bundle, split: str) -> list[PairRecord]:
    """The split's pairs plus, for every pair that has a caption, an
    extra positive pair using the caption as the text side. Never
    duplicates an existing (audio, text) pair; the source bundle is not
    touched."""
    pairs = bundle.pairs_for_split(split)
    out = list(pairs)
    existing = {(p.audio_id, p.text_id) for p in pairs}
    for pair in pairs:
        if pair.caption_id is None:
            continue
        key = (pair.audio_id, pair.caption_id)
        if key in existing:
            continue
        existing.add(key)
        out.append(PairRecord(pair.audio_id, pair.caption_id, None, pair.split))
    return out


# -- score fusion ----------------------------------------------------------


def fuse_scores(s_at, s_tc, config: FusionConfig):
    """Elementwise s_at + lam * s_tc; disabled fusion passes s_at
    through unchanged. Monotone in both arguments for lam >= 0."""
    if not config.enabled:
        return s_at
    a = np.asarray(s_at, dtype=np.float64)
    b = np.asarray(s_tc, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"fuse_scores shape mismatch: {a.shape} vs {b.shape}")
    fused = a + config.lam * b
    if np.isscalar(s_at) or (isinstance(s_at, float)) or a.shape == ():
        return float(fused)
    return fused
