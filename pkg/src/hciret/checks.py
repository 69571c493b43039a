"""Finite-difference verification suite over every differentiable
surface: each contrastive loss, the attention-pooling aggregator, the
feed-forward block, and the co-attention layer. Used by the `grad-check`
CLI command and the acceptance tests."""

from __future__ import annotations

import time

import numpy as np

from .caption import co_attend, co_attention_parameters, init_co_attention
from .hierarchy import (
    AudioHierarchyParams,
    HierarchyConfig,
    TextHierarchyParams,
    aggregate,
    build_audio_hierarchy,
    build_text_hierarchy,
    init_aggregator,
    init_mlp,
    init_projection,
    mlp_h,
)
from .losses import LossConfig, granular_loss, hci_loss, nt_xent, text_caption_loss, total_loss
from .rng import Xoshiro256
from .tensor import Parameter, Tensor, grad_check

TARGETS = (
    "nt_xent",
    "frame_word_loss",
    "segment_phrase_loss",
    "hci_loss",
    "text_caption_loss",
    "total_loss",
    "aggregate",
    "mlp_h",
    "co_attend",
)


def _uniform(rng: Xoshiro256, *shape):
    flat = np.array([rng.uniform(-2.0, 2.0) for _ in range(int(np.prod(shape)))])
    return flat.reshape(shape)


def _mlp_params_list(mlp):
    return [mlp.w1, mlp.b1, mlp.w2, mlp.b2]


def _hierarchy_setup(seed: int, dim: int, n_items: int, rows: int, slots: int = 2):
    rng = Xoshiro256(seed)
    cfg = HierarchyConfig(
        dim=dim, n_segments=slots, n_phrases=slots, sentence_mode="aggregated", projection=True
    )
    audio = AudioHierarchyParams(
        projection=init_projection("a.proj", dim, rng),
        segment=init_aggregator("a.seg", dim, slots, rng),
        clip=init_aggregator("a.clip", dim, 1, rng),
    )
    text = TextHierarchyParams(
        projection=init_projection("t.proj", dim, rng),
        phrase=init_aggregator("t.phr", dim, slots, rng),
        sentence=init_aggregator("t.sen", dim, 1, rng),
    )
    # Verification wants generic points in parameter space, not the
    # training init: zero biases leave ReLU blocks able to emit exact
    # zero vectors, parking the downstream norm clamp on its kink.
    for agg in (audio.segment, audio.clip, text.phrase, text.sentence):
        for p in [agg.w] + _mlp_params_list(agg.mlp):
            p.data[...] = _uniform(rng, *p.data.shape) * 0.5
    frames = [Parameter(f"frames{i}", _uniform(rng, rows, dim)) for i in range(n_items)]
    words = [Parameter(f"words{i}", _uniform(rng, rows, dim)) for i in range(n_items)]

    def hierarchies():
        audios = [build_audio_hierarchy(f, audio, cfg) for f in frames]
        texts = [build_text_hierarchy(w, None, text, cfg) for w in words]
        return audios, texts

    all_params = (
        [audio.projection, text.projection, audio.segment.w, audio.clip.w, text.phrase.w, text.sentence.w]
        + _mlp_params_list(audio.segment.mlp)
        + _mlp_params_list(audio.clip.mlp)
        + _mlp_params_list(text.phrase.mlp)
        + _mlp_params_list(text.sentence.mlp)
    )
    return hierarchies, all_params, frames, words


def _target_objective(name: str, seed: int):
    """Build (objective, parameters) for one suite target."""
    rng = Xoshiro256(seed * 1009 + 17)
    if name == "nt_xent":
        s = Parameter("s", _uniform(rng, 3, 3))
        return lambda: nt_xent(s, 0.07), [s]
    if name == "text_caption_loss":
        t = Parameter("t", _uniform(rng, 3, 3))
        c = Parameter("c", _uniform(rng, 3, 3))
        return lambda: text_caption_loss(t, c, 0.07), [t, c]
    if name == "mlp_h":
        mlp = init_mlp("m", 3, rng)
        x = Tensor(_uniform(rng, 4, 3))
        w = Tensor(_uniform(rng, 4, 3))
        return lambda: (mlp_h(x, mlp) * w).sum(), _mlp_params_list(mlp)
    if name == "aggregate":
        agg = init_aggregator("g", 3, 2, rng)
        x = Parameter("x", _uniform(rng, 4, 3))
        w = Tensor(_uniform(rng, 2, 3))
        return lambda: (aggregate(x, agg) * w).sum(), [agg.w, x] + _mlp_params_list(agg.mlp)
    if name == "co_attend":
        params = init_co_attention("ca", 4, 2, rng, zero_init_outputs=False)
        frames = Parameter("fr", _uniform(rng, 2, 4))
        kv = Tensor(_uniform(rng, 2, 4))
        w = Tensor(_uniform(rng, 2, 4))
        return lambda: (co_attend(frames, kv, params) * w).sum(), [frames] + co_attention_parameters(params)
    if name == "frame_word_loss":
        hier, params, frames, words = _hierarchy_setup(seed, dim=3, n_items=2, rows=3)

        def objective():
            audios, texts = hier()
            return granular_loss("frame_word", audios, texts, 0.07)

        # frame-word flows through the two projections and the inputs only
        return objective, params[:2] + frames + words
    if name == "segment_phrase_loss":
        hier, params, frames, words = _hierarchy_setup(seed, dim=3, n_items=2, rows=3)

        def objective():
            audios, texts = hier()
            return granular_loss("segment_phrase", audios, texts, 0.07)

        return objective, params[:6] + frames + words
    if name == "hci_loss":
        hier, params, _, _ = _hierarchy_setup(seed, dim=3, n_items=2, rows=3)
        cfg = LossConfig(tau=0.07, alpha=0.5, beta=0.1)

        def objective():
            audios, texts = hier()
            return hci_loss(audios, texts, cfg).total

        return objective, params
    if name == "total_loss":
        hier, params, _, _ = _hierarchy_setup(seed, dim=3, n_items=2, rows=2)
        t = Parameter("tcls", _uniform(rng, 2, 3))
        c = Parameter("ccls", _uniform(rng, 2, 3))
        cfg = LossConfig(tau=0.07, enable_fw=False, enable_sp=False, enable_tc=True)

        def objective():
            audios, texts = hier()
            return total_loss(audios, texts, cfg, t, c).total

        return objective, params[:2] + [t, c]
    raise ValueError(f"unknown gradient target {name!r}")


def gradient_suite(seeds: int = 20, eps: float = 1e-5, targets=TARGETS) -> dict:
    """Run grad_check for every target over the given number of seeds;
    returns per-target worst errors plus elapsed wall time."""
    started = time.perf_counter()
    results = {}
    for name in targets:
        worst = 0.0
        for seed in range(seeds):
            objective, params = _target_objective(name, seed)
            err = float(grad_check(objective, params, eps=eps))
            if err > worst:
                worst = err
        results[name] = worst
    elapsed = time.perf_counter() - started
    return {
        "targets": results,
        "max": max(results.values()) if results else 0.0,
        "seeds": seeds,
        "eps": eps,
        "elapsed_s": elapsed,
    }
