"""The trainable retrieval model behind an sklearn-style estimator API.

``HciRetriever`` owns every trainable parameter (input projections,
four attention-pooling aggregators, optional co-attention enhancement),
trains them with Adam under the configured contrastive objective, and
scores audio/text items for retrieval. It follows the scikit-learn
estimator protocol: the constructor only stores hyperparameters,
``fit`` validates and learns, fitted state lives in trailing-underscore
attributes, and ``get_params``/``set_params``/``clone`` work as usual.

Training runs a single differentiation graph per step on one logical
thread; evaluation over a fitted model is read-only and safe to run
concurrently on snapshot copies of the parameters.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator

from . import evaluation
from .caption import (
    CoAttentionParams,
    FusionConfig,
    augment_pairs,
    co_attend,
    co_attention_parameters,
    init_co_attention,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Batch, Bundle, EmbeddingSequence, batch_pairs, partition_pairs
from .errors import DataError, UsageError
from .hierarchy import (
    AudioHierarchyParams,
    HierarchyConfig,
    MultiGranularityAudio,
    MultiGranularityText,
    TextHierarchyParams,
    build_audio_hierarchy,
    build_text_hierarchy,
    init_aggregator,
    init_mlp,
    init_projection,
)
from .losses import LossBreakdown, LossConfig, total_loss
from .optim import Adam, clip_gradients
from .rng import Xoshiro256
from .similarity import ScoreConfig, eval_score
from .tensor import Parameter, Tensor, as_tensor, backward, no_grad
from .validation import check_choice

logger = logging.getLogger("hciret")

AC_MODES = ("off", "da", "da+acfi", "da+acfi+tcm")
LOSS_KINDS = ("ntxent", "hci")
LR_SCHEDULES = ("constant", "cosine")
ACFI_SCOPES = ("all", "clip")
ACFI_KV = ("cls", "tokens")
INITS = ("random", "identity")


def _caption_tokens(seq: EmbeddingSequence) -> np.ndarray | None:
    """Token rows of a caption, or None for summary-only captions
    (a single row identical to the cls vector)."""
    if seq.cls is not None and seq.rows == 1 and np.array_equal(seq.matrix, seq.cls):
        return None
    return seq.matrix


class HciRetriever(BaseEstimator):
    """Cross-modal retriever trained on hierarchical interaction losses.

    Parameters mirror the ablation surface: ``loss`` picks the plain
    clip-sentence objective or the combined one, ``enable_fw``/
    ``enable_sp`` toggle the granular terms, ``sentence_mode`` switches
    between the [CLS] vector and the aggregated sentence embedding, and
    ``ac`` enables the auxiliary-caption stages cumulatively
    (augmentation, feature interaction, text-caption matching).
    """

    def __init__(
        self,
        n_segments: int = 10,
        n_phrases: int = 10,
        sentence_mode: str = "cls",
        projection: bool = True,
        softmax_axis: str = "rows",
        shared_mlp: bool = False,
        init: str = "random",
        loss: str = "hci",
        alpha: float = 0.5,
        beta: float = 0.1,
        tau: float = 0.07,
        enable_fw: bool = True,
        enable_sp: bool = True,
        tc_weight: float = 1.0,
        ac: str = "off",
        fusion_lambda: float = 1.0,
        heads: int = 4,
        acfi_kv: str = "cls",
        acfi_scope: str = "all",
        epochs: int = 50,
        batch_size: int = 16,
        learning_rate: float = 1e-3,
        lr_schedule: str = "constant",
        grad_clip: float | None = None,
        eval_mode: str = "hci_combined",
        seed: int = 0,
    ):
        self.n_segments = n_segments
        self.n_phrases = n_phrases
        self.sentence_mode = sentence_mode
        self.projection = projection
        self.softmax_axis = softmax_axis
        self.shared_mlp = shared_mlp
        self.init = init
        self.loss = loss
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.enable_fw = enable_fw
        self.enable_sp = enable_sp
        self.tc_weight = tc_weight
        self.ac = ac
        self.fusion_lambda = fusion_lambda
        self.heads = heads
        self.acfi_kv = acfi_kv
        self.acfi_scope = acfi_scope
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.grad_clip = grad_clip
        self.eval_mode = eval_mode
        self.seed = seed

    # -- configuration ----------------------------------------------------

    def _ac_flags(self) -> tuple[bool, bool, bool]:
        check_choice(self.ac, AC_MODES, "ac")
        return (
            self.ac in ("da", "da+acfi", "da+acfi+tcm"),
            self.ac in ("da+acfi", "da+acfi+tcm"),
            self.ac == "da+acfi+tcm",
        )

    def hierarchy_config(self, dim: int) -> HierarchyConfig:
        return HierarchyConfig(
            dim=dim,
            n_segments=self.n_segments,
            n_phrases=self.n_phrases,
            sentence_mode=self.sentence_mode,
            projection=self.projection,
            softmax_axis=self.softmax_axis,
        )

    def loss_config(self) -> LossConfig:
        check_choice(self.loss, LOSS_KINDS, "loss")
        _, _, tcm = self._ac_flags()
        granular = self.loss == "hci"
        return LossConfig(
            tau=self.tau,
            alpha=self.alpha,
            beta=self.beta,
            enable_fw=granular and self.enable_fw,
            enable_sp=granular and self.enable_sp,
            enable_tc=tcm,
            tc_weight=self.tc_weight,
        )

    def score_config(self) -> ScoreConfig:
        return ScoreConfig(tau=self.tau, eval_mode=self.eval_mode, alpha=self.alpha, beta=self.beta)

    def fusion_config(self) -> FusionConfig:
        _, _, tcm = self._ac_flags()
        return FusionConfig(lam=self.fusion_lambda, enabled=tcm)

    # -- parameters ---------------------------------------------------------

    def _build_parameters(self, dim: int, with_coattn: bool):
        check_choice(self.init, INITS, "init")
        rng = Xoshiro256(self.seed)
        shared_audio = init_mlp("audio.mlp", dim, rng, self.init) if self.shared_mlp else None
        shared_text = init_mlp("text.mlp", dim, rng, self.init) if self.shared_mlp else None
        audio = AudioHierarchyParams(
            projection=init_projection("audio.proj", dim, rng, self.init) if self.projection else None,
            segment=init_aggregator("audio.segment", dim, self.n_segments, rng, self.init, shared_audio),
            clip=init_aggregator("audio.clip", dim, 1, rng, self.init, shared_audio),
        )
        text = TextHierarchyParams(
            projection=init_projection("text.proj", dim, rng, self.init) if self.projection else None,
            phrase=init_aggregator("text.phrase", dim, self.n_phrases, rng, self.init, shared_text),
            sentence=init_aggregator("text.sentence", dim, 1, rng, self.init, shared_text),
        )
        coattn = None
        if with_coattn:
            check_choice(self.acfi_kv, ACFI_KV, "acfi_kv")
            check_choice(self.acfi_scope, ACFI_SCOPES, "acfi_scope")
            coattn = init_co_attention("coattn", dim, self.heads, rng, zero_init_outputs=True)

        flat: dict[str, Parameter] = {}

        def collect(*tensors):
            for t in tensors:
                if isinstance(t, Parameter) and t.name not in flat:
                    flat[t.name] = t

        for agg_params in (audio, text):
            collect(agg_params.projection)
            for agg in (
                (agg_params.segment, agg_params.clip)
                if isinstance(agg_params, AudioHierarchyParams)
                else (agg_params.phrase, agg_params.sentence)
            ):
                collect(agg.w, agg.mlp.w1, agg.mlp.b1, agg.mlp.w2, agg.mlp.b2)
        if coattn is not None:
            collect(*co_attention_parameters(coattn))
        return audio, text, coattn, flat

    # -- per-item hierarchies ------------------------------------------------

    def _caption_map(self, bundle: Bundle) -> dict[str, str]:
        out: dict[str, str] = {}
        for pair in bundle.pairs:
            if pair.caption_id is not None and pair.audio_id not in out:
                out[pair.audio_id] = pair.caption_id
        return out

    def audio_hierarchy(self, bundle: Bundle, audio_id: str, caption_map: dict[str, str] | None = None) -> MultiGranularityAudio:
        seq = bundle.by_id[audio_id]
        frames = as_tensor(seq.matrix)
        _, acfi, _ = self._ac_flags()
        cfg = self.hierarchy_config(self.dim_)
        if not acfi or self.coattn_ is None:
            return build_audio_hierarchy(frames, self.audio_params_, cfg)
        caption_map = caption_map if caption_map is not None else self._caption_map(bundle)
        caption_id = caption_map.get(audio_id)
        if caption_id is None:
            return build_audio_hierarchy(frames, self.audio_params_, cfg)
        cap = bundle.by_id[caption_id]
        kv = cap.cls if self.acfi_kv == "cls" else cap.matrix
        if kv is None:
            kv = cap.matrix
        enhanced = co_attend(frames, as_tensor(kv), self.coattn_)
        if self.acfi_scope == "all":
            return build_audio_hierarchy(enhanced, self.audio_params_, cfg)
        raw = build_audio_hierarchy(frames, self.audio_params_, cfg)
        enhanced_h = build_audio_hierarchy(enhanced, self.audio_params_, cfg)
        return MultiGranularityAudio(frames=raw.frames, segments=raw.segments, clip=enhanced_h.clip)

    def text_hierarchy(self, bundle: Bundle, text_id: str) -> MultiGranularityText:
        seq = bundle.by_id[text_id]
        cfg = self.hierarchy_config(self.dim_)
        if seq.modality == "caption":
            tokens = _caption_tokens(seq)
            if tokens is None:
                if seq.cls is None:
                    raise DataError(f"caption {text_id} has neither tokens nor a cls vector")
                cls_t = as_tensor(seq.cls)
                return MultiGranularityText(words=None, phrases=None, sentence=cls_t, cls=cls_t)
            return build_text_hierarchy(tokens, seq.cls, self.text_params_, cfg)
        if seq.modality != "text":
            raise UsageError(f"{text_id} is {seq.modality}, not usable as the text side")
        return build_text_hierarchy(seq.matrix, seq.cls, self.text_params_, cfg)

    # -- training -------------------------------------------------------------

    def _batch_breakdown(self, bundle: Bundle, batch: Batch, loss_cfg: LossConfig, caption_map: dict[str, str]) -> LossBreakdown:
        audios, texts = [], []
        tc_text, tc_cap = [], []
        for pair in batch.pairs:
            audios.append(self.audio_hierarchy(bundle, pair.audio_id, caption_map))
            texts.append(self.text_hierarchy(bundle, pair.text_id))
            if loss_cfg.enable_tc and pair.caption_id is not None:
                text_seq = bundle.by_id[pair.text_id]
                cap_seq = bundle.by_id[pair.caption_id]
                if text_seq.cls is not None and cap_seq.cls is not None:
                    tc_text.append(text_seq.cls)
                    tc_cap.append(cap_seq.cls)
        text_cls = cap_cls = None
        if loss_cfg.enable_tc:
            # The text-caption term uses the batch's captioned original
            # pairs; a batch of augmented-only pairs contributes zero.
            if tc_text:
                text_cls = np.concatenate(tc_text, axis=0)
                cap_cls = np.concatenate(tc_cap, axis=0)
            else:
                text_cls = np.zeros((1, self.dim_))
                cap_cls = np.zeros((1, self.dim_))
        return total_loss(audios, texts, loss_cfg, text_cls, cap_cls)

    def _epoch_breakdown(self, bundle: Bundle, pairs, loss_cfg: LossConfig, caption_map: dict[str, str]) -> LossBreakdown:
        """Loss terms on a fixed, epoch-independent batching of the
        training pairs (so a zero learning rate gives a constant
        history even though training batches reshuffle per epoch)."""
        sums = {"l_cs": 0.0, "l_fw": 0.0, "l_sp": 0.0, "l_tc": 0.0}
        weight = 0
        with no_grad():
            for batch in partition_pairs(pairs, self.batch_size, self.seed)[0]:
                if batch.n < 2:
                    continue
                b = self._batch_breakdown(bundle, batch, loss_cfg, caption_map)
                for key in sums:
                    sums[key] += batch.n * getattr(b, key)
                weight += batch.n
        parts = {key: (sums[key] / weight if weight else 0.0) for key in sums}
        total = parts["l_cs"]
        if loss_cfg.enable_fw:
            total = total + loss_cfg.alpha * parts["l_fw"]
        if loss_cfg.enable_sp:
            total = total + loss_cfg.beta * parts["l_sp"]
        if loss_cfg.enable_tc:
            total = total + loss_cfg.tc_weight * parts["l_tc"]
        return LossBreakdown(
            l_cs=parts["l_cs"],
            l_fw=parts["l_fw"],
            l_sp=parts["l_sp"],
            l_tc=parts["l_tc"],
            l_total=total,
            fw_enabled=loss_cfg.enable_fw,
            sp_enabled=loss_cfg.enable_sp,
            tc_enabled=loss_cfg.enable_tc,
            total=None,
        )

    def _learning_rate(self, epoch: int) -> float:
        check_choice(self.lr_schedule, LR_SCHEDULES, "lr_schedule")
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, self.epochs)))

    def fit(self, bundle: Bundle, y=None) -> "HciRetriever":
        """Train on the bundle's train split; deterministic given seed."""
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.batch_size < 2:
            raise UsageError("contrastive training needs batch_size >= 2")
        loss_cfg = self.loss_config()
        da, acfi, tcm = self._ac_flags()
        train_pairs = bundle.pairs_for_split("train")
        if not train_pairs:
            raise DataError("bundle has no train pairs")
        if (da or acfi or tcm) and not any(s.modality == "caption" for s in bundle.sequences):
            raise DataError("auxiliary-caption mode enabled but the bundle has no captions")
        if tcm and not any(p.caption_id for p in train_pairs):
            raise DataError("text-caption matching enabled but no train pair has a caption")

        self.dim_ = bundle.dim
        audio, text, coattn, flat = self._build_parameters(bundle.dim, acfi)
        self.audio_params_ = audio
        self.text_params_ = text
        self.coattn_ = coattn
        self.params_ = flat

        caption_map = self._caption_map(bundle)
        pairs = augment_pairs(bundle, "train") if da else train_pairs
        optimizer = Adam(flat, lr=self.learning_rate)
        history: list[LossBreakdown] = []
        dropped_total = 0
        for epoch in range(self.epochs):
            lr = self._learning_rate(epoch)
            batches, dropped = partition_pairs(pairs, self.batch_size, self.seed + 1 + epoch)
            dropped_total += dropped
            for batch in batches:
                if batch.n < 2:
                    continue
                breakdown = self._batch_breakdown(bundle, batch, loss_cfg, caption_map)
                backward(breakdown.total)
                if self.grad_clip is not None:
                    clip_gradients(flat, self.grad_clip)
                optimizer.step(lr)
                optimizer.zero_grad()
            record = self._epoch_breakdown(bundle, pairs, loss_cfg, caption_map)
            history.append(record)
            logger.info("epoch %d/%d loss %.6f", epoch + 1, self.epochs, record.l_total)
        if dropped_total:
            logger.warning(
                "distinct-id batching dropped %d pair occurrence(s) across %d epochs", dropped_total, self.epochs
            )
        self.history_ = history
        self.step_ = optimizer.state.t
        self.dropped_pairs_ = dropped_total
        return self

    # -- scoring and evaluation ------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise UsageError("this estimator is not fitted yet; call fit or load first")

    def _check_bundle(self, bundle: Bundle) -> None:
        self._check_fitted()
        if bundle.dim != self.dim_:
            raise DataError(f"bundle dim {bundle.dim} does not match model dim {self.dim_}")

    def score_pair(self, bundle: Bundle, audio_id: str, text_id: str, score_config: ScoreConfig | None = None) -> dict:
        """Component scores of one audio/text pair."""
        self._check_bundle(bundle)
        cfg = score_config or self.score_config()
        with no_grad():
            audio = self.audio_hierarchy(bundle, audio_id)
            text = self.text_hierarchy(bundle, text_id)
            from .similarity import ci, cosine

            clip_sentence = cosine(audio.clip, text.sentence).item()
            frame_word = ci(audio.frames, text.words).item() if text.words is not None else None
            segment_phrase = ci(audio.segments, text.phrases).item() if text.phrases is not None else None
            score = eval_score(audio, text, cfg).item()
        return {
            "score": score,
            "clip_sentence": clip_sentence,
            "frame_word": frame_word,
            "segment_phrase": segment_phrase,
            "score_mode": cfg.eval_mode,
        }

    def evaluate(self, bundle: Bundle, split: str = "test", ks=(1, 5, 10),
                 score_config: ScoreConfig | None = None,
                 fusion_config: FusionConfig | None = None) -> "evaluation.EvalReport":
        self._check_bundle(bundle)
        return evaluation.evaluate(self, bundle, split, score_config=score_config,
                                   fusion_config=fusion_config, ks=ks)

    def predict(self, bundle: Bundle, split: str = "test", direction: str = "text_to_audio") -> dict[str, str]:
        """Top-ranked candidate id for every query in the split."""
        self._check_bundle(bundle)
        queries, candidates, scores = evaluation.score_matrix(
            self, bundle, split, direction, self.score_config(), self.fusion_config()
        )
        return {q: candidates[int(np.argmax(scores[i]))] for i, q in enumerate(queries)}

    def score(self, bundle: Bundle, split: str = "test") -> float:
        """Mean R@1 over both retrieval directions (sklearn-style
        goodness-of-fit scalar)."""
        report = self.evaluate(bundle, split, ks=(1,))
        return 0.5 * (report.text_to_audio.recalls[1] + report.audio_to_text.recalls[1])

    # -- persistence --------------------------------------------------------------

    def save(self, path: str) -> None:
        self._check_fitted()
        configs = {"estimator": self.get_params(), "dim": self.dim_}
        save_checkpoint(path, self.params_, configs, self.step_)

    @classmethod
    def load(cls, path: str) -> "HciRetriever":
        """Rebuild a fitted estimator from a checkpoint file."""
        ckpt = load_checkpoint(path)
        est_params = ckpt.configs.get("estimator")
        dim = ckpt.configs.get("dim")
        if est_params is None or dim is None:
            raise DataError(f"{path}: checkpoint lacks estimator configuration")
        model = cls(**est_params)
        model.dim_ = int(dim)
        _, acfi, _ = model._ac_flags()
        audio, text, coattn, flat = model._build_parameters(model.dim_, acfi)
        model.audio_params_ = audio
        model.text_params_ = text
        model.coattn_ = coattn
        model.params_ = flat
        model.history_ = []
        model.step_ = ckpt.step
        model._apply_checkpoint_values(ckpt.params)
        return model

    def load_params(self, path: str) -> None:
        """Load checkpoint weights into this already-fitted estimator,
        validating every shape against the current configuration."""
        self._check_fitted()
        ckpt = load_checkpoint(path)
        self._apply_checkpoint_values(ckpt.params)
        self.step_ = ckpt.step

    def _apply_checkpoint_values(self, values: dict[str, np.ndarray]) -> None:
        for name, param in self.params_.items():
            if name not in values:
                raise DataError(f"checkpoint is missing parameter {name}")
            arr = values[name]
            if arr.shape != param.data.shape:
                raise DataError(
                    f"parameter {name}: checkpoint shape {arr.shape} does not match configured shape {param.data.shape}"
                )
            param.data[...] = arr
        extra = set(values) - set(self.params_)
        if extra:
            raise DataError(f"checkpoint has unknown parameters: {sorted(extra)}")
