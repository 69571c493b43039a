"""Multi-granularity representation hierarchies.

Audio frames are pooled into segment vectors and then a single clip
vector; text words are pooled into phrase vectors and a sentence vector.
Pooling is attention-based: ``aggregate(X) = softmax(X @ W)^T @ h(X)``
where the softmax runs over the input-row axis, so each output slot is a
convex combination of the rows of ``h(X)``, and ``h`` is a two-layer
feed-forward block (D -> 2D -> D, ReLU after the first layer only; a
final ReLU would force nonnegative embeddings and bias cosine scores
upward).

An optional trainable D x D input projection is applied to ingested
frame/word embeddings first, so every downstream loss has trainable
upstream parameters even though the encoders themselves are frozen.

Hierarchy building over shared read-only parameters may run concurrently
across items; parameter updates need exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, UsageError
from .rng import Xoshiro256
from .tensor import Parameter, Tensor, as_tensor
from .validation import check_choice

SOFTMAX_AXES = ("rows", "slots")
SENTENCE_MODES = ("cls", "aggregated")


@dataclass
class MlpParams:
    """Weights of the D -> 2D -> D feed-forward block h."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class AggregatorParams:
    """One attention-pooling stage: W maps rows to M slot logits, and h
    transforms the rows that get pooled."""

    w: Tensor
    mlp: MlpParams


@dataclass
class HierarchyConfig:
    dim: int
    n_segments: int = 10
    n_phrases: int = 10
    sentence_mode: str = "cls"
    projection: bool = True
    softmax_axis: str = "rows"

    def __post_init__(self):
        if self.n_segments < 1 or self.n_phrases < 1:
            raise UsageError("n_segments and n_phrases must be >= 1")
        check_choice(self.sentence_mode, SENTENCE_MODES, "sentence_mode")
        check_choice(self.softmax_axis, SOFTMAX_AXES, "softmax_axis")


@dataclass
class AudioHierarchyParams:
    projection: Tensor | None
    segment: AggregatorParams
    clip: AggregatorParams


@dataclass
class TextHierarchyParams:
    projection: Tensor | None
    phrase: AggregatorParams
    sentence: AggregatorParams


@dataclass
class MultiGranularityAudio:
    """Frame (N_f x D), segment (N_s x D), and clip (1 x D) levels."""

    frames: Tensor
    segments: Tensor
    clip: Tensor


@dataclass
class MultiGranularityText:
    """Word, phrase, sentence levels plus the raw [CLS] vector.

    ``words``/``phrases`` are None for caption-backed items that carry
    only a summary vector; such items participate in clip-sentence
    scoring but not in the finer-grained terms.
    """

    words: Tensor | None
    phrases: Tensor | None
    sentence: Tensor
    cls: Tensor | None


def mlp_h(x, params: MlpParams) -> Tensor:
    """Apply h: relu(x @ w1 + b1) @ w2 + b2."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[0]:
        raise UsageError(f"mlp_h input shape {x.shape} does not match w1 {params.w1.shape}")
    hidden = T.relu(T.matmul(x, params.w1) + params.b1)
    return T.matmul(hidden, params.w2) + params.b2


def aggregate(x, params: AggregatorParams, softmax_axis: str = "rows") -> Tensor:
    """Pool R input rows into M output slots.

    With ``softmax_axis="rows"`` (default) each slot's weights form a
    distribution over input rows, i.e. every column of the R x M weight
    matrix sums to one. The "slots" variant normalises each row's slot
    weights instead and is kept for comparison.
    """
    x = as_tensor(x)
    check_choice(softmax_axis, SOFTMAX_AXES, "softmax_axis")
    if x.ndim != 2 or x.shape[1] != params.w.shape[0]:
        raise UsageError(f"aggregate input shape {x.shape} does not match W {params.w.shape}")
    logits = T.matmul(x, params.w)
    weights = T.softmax(logits, axis=0 if softmax_axis == "rows" else 1)
    return T.matmul(T.transpose(weights), mlp_h(x, params.mlp))


def build_audio_hierarchy(frames, params: AudioHierarchyParams, config: HierarchyConfig) -> MultiGranularityAudio:
    """Frames -> segments -> clip. When the input projection is enabled,
    the frame level itself is the projected input."""
    frames = as_tensor(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise UsageError(f"frames must be N_f x D, got {frames.shape}")
    if config.projection:
        if params.projection is None:
            raise UsageError("projection enabled but no projection parameters given")
        frames = T.matmul(frames, params.projection)
    segments = aggregate(frames, params.segment, config.softmax_axis)
    clip = aggregate(segments, params.clip, config.softmax_axis)
    return MultiGranularityAudio(frames=frames, segments=segments, clip=clip)


def build_text_hierarchy(words, cls_vec, params: TextHierarchyParams, config: HierarchyConfig) -> MultiGranularityText:
    """Words -> phrases -> sentence. In "cls" mode the sentence level is
    exactly the encoder's [CLS] vector (untouched by the projection); in
    "aggregated" mode it is pooled from the phrase level."""
    words = as_tensor(words)
    if words.ndim != 2 or words.shape[0] < 1:
        raise UsageError(f"words must be N_w x D, got {words.shape}")
    cls_t = None if cls_vec is None else as_tensor(cls_vec)
    if config.sentence_mode == "cls" and cls_t is None:
        raise DataError("sentence_mode='cls' requires a cls vector")
    if config.projection:
        if params.projection is None:
            raise UsageError("projection enabled but no projection parameters given")
        words = T.matmul(words, params.projection)
    phrases = aggregate(words, params.phrase, config.softmax_axis)
    if config.sentence_mode == "cls":
        sentence = cls_t
    else:
        sentence = aggregate(phrases, params.sentence, config.softmax_axis)
    return MultiGranularityText(words=words, phrases=phrases, sentence=sentence, cls=cls_t)


# -- parameter factories -------------------------------------------------


def init_mlp(name: str, dim: int, rng: Xoshiro256, init: str = "random") -> MlpParams:
    """Gaussian(0, 1/sqrt(D)) weights with zero biases, or the exact
    identity parameterisation relu(x) - relu(-x)."""
    if init == "identity":
        eye = np.eye(dim)
        w1 = np.concatenate([eye, -eye], axis=1)
        w2 = np.concatenate([eye, -eye], axis=0)
    elif init == "random":
        s = 1.0 / np.sqrt(dim)
        w1 = s * rng.normals(dim, 2 * dim)
        w2 = s * rng.normals(2 * dim, dim)
    else:
        raise UsageError(f"unknown init {init!r}")
    return MlpParams(
        w1=Parameter(f"{name}.w1", w1),
        b1=Parameter(f"{name}.b1", np.zeros(2 * dim)),
        w2=Parameter(f"{name}.w2", w2),
        b2=Parameter(f"{name}.b2", np.zeros(dim)),
    )


def init_aggregator(
    name: str,
    dim: int,
    slots: int,
    rng: Xoshiro256,
    init: str = "random",
    mlp: MlpParams | None = None,
) -> AggregatorParams:
    """Aggregator with its own h unless a shared ``mlp`` is supplied.
    Identity init zeroes W, making pooling uniform."""
    if init == "identity":
        w = np.zeros((dim, slots))
    elif init == "random":
        w = (1.0 / np.sqrt(dim)) * rng.normals(dim, slots)
    else:
        raise UsageError(f"unknown init {init!r}")
    if mlp is None:
        mlp = init_mlp(f"{name}.mlp", dim, rng, init)
    return AggregatorParams(w=Parameter(f"{name}.w", w), mlp=mlp)


def init_projection(name: str, dim: int, rng: Xoshiro256, init: str = "random") -> Parameter:
    """Identity plus small Gaussian noise (exact identity under
    init="identity"), so training starts near the ingested embeddings."""
    value = np.eye(dim)
    if init == "random":
        value = value + 1e-3 * rng.normals(dim, dim)
    elif init != "identity":
        raise UsageError(f"unknown init {init!r}")
    return Parameter(name, value)
