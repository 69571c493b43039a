"""Symmetric contrastive losses over batch score matrices.

Every loss reduces to the temperature-scaled symmetric cross entropy

    -(1/N) * sum_i [ log softmax_row(S/tau)_ii + log softmax_col(S/tau)_ii ]

applied to a different N x N score matrix: clip-sentence cosines,
frame-word or segment-phrase interaction scores, or text-caption
cosines. Both directions use log-sum-exp with max subtraction; raw
exponentials of s/tau overflow 32-bit floats at tau = 0.07 for scores
near one, which is one reason all computation is 64-bit.

Loss evaluation over a batch is a single differentiation graph and runs
on one logical thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, UsageError
from .similarity import pairwise_ci_matrix, pairwise_cosine_matrix
from .tensor import Tensor, as_tensor
from .validation import check_positive

GRANULARITIES = ("frame_word", "segment_phrase")


@dataclass
class LossConfig:
    tau: float = 0.07
    alpha: float = 0.5
    beta: float = 0.1
    enable_fw: bool = True
    enable_sp: bool = True
    enable_tc: bool = False
    tc_weight: float = 1.0

    def __post_init__(self):
        check_positive(self.tau, "tau")
        if self.alpha < 0 or self.beta < 0 or self.tc_weight < 0:
            raise UsageError("loss term weights must be >= 0")


@dataclass
class LossBreakdown:
    """Scalar value of every loss term plus the differentiable total.

    Disabled terms are reported as 0.0 with their flag off; ``l_total``
    always equals the configured combination of the enabled parts.
    """

    l_cs: float
    l_fw: float
    l_sp: float
    l_tc: float
    l_total: float
    fw_enabled: bool
    sp_enabled: bool
    tc_enabled: bool
    total: Tensor = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "l_cs": self.l_cs,
            "l_fw": self.l_fw,
            "l_sp": self.l_sp,
            "l_tc": self.l_tc,
            "l_total": self.l_total,
        }


def nt_xent(s, tau: float) -> Tensor:
    """Symmetric temperature-scaled cross entropy of a square score
    matrix whose diagonal holds the positive pairs."""
    check_positive(tau, "tau")
    s = as_tensor(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise UsageError(f"nt_xent needs a square matrix, got shape {s.shape}")
    n = s.shape[0]
    z = s * (1.0 / tau)
    diag_sum = T.tsum(T.mul(z, Tensor(np.eye(n))))
    row_lse = _logsumexp(z, axis=1)
    col_lse = _logsumexp(z, axis=0)
    return (T.tsum(row_lse) + T.tsum(col_lse) - 2.0 * diag_sum) * (1.0 / n)


def _logsumexp(z: Tensor, axis: int) -> Tensor:
    m = T.amax(z, axis=axis, keepdims=True)
    return T.log(T.tsum(T.exp(z - m), axis=axis, keepdims=True)) + m


def granular_loss(level: str, audios, texts, tau: float) -> Tensor:
    """Contrastive loss over the interaction-score matrix at one
    granularity. Items lacking that granularity (summary-only caption
    pairs) are excluded; fewer than two participating items give 0."""
    if level not in GRANULARITIES:
        raise UsageError(f"unknown granularity {level!r}")
    if len(audios) != len(texts):
        raise UsageError("audio and text batches differ in size")
    if level == "frame_word":
        sets = [(a.frames, t.words) for a, t in zip(audios, texts)]
    else:
        sets = [(a.segments, t.phrases) for a, t in zip(audios, texts)]
    sets = [(a, t) for a, t in sets if t is not None]
    if len(sets) < 2:
        return Tensor(0.0)
    matrix = pairwise_ci_matrix([a for a, _ in sets], [t for _, t in sets])
    return nt_xent(matrix, tau)


def hci_loss(audios, texts, config: LossConfig) -> LossBreakdown:
    """Clip-sentence loss plus the enabled weighted granular terms."""
    if len(audios) != len(texts) or not audios:
        raise UsageError("hci_loss needs matched non-empty batches")
    cs_matrix = pairwise_cosine_matrix([a.clip for a in audios], [t.sentence for t in texts])
    l_cs = nt_xent(cs_matrix, config.tau)
    total = l_cs
    l_fw = Tensor(0.0)
    l_sp = Tensor(0.0)
    if config.enable_fw:
        l_fw = granular_loss("frame_word", audios, texts, config.tau)
        total = total + config.alpha * l_fw
    if config.enable_sp:
        l_sp = granular_loss("segment_phrase", audios, texts, config.tau)
        total = total + config.beta * l_sp
    return LossBreakdown(
        l_cs=l_cs.item(),
        l_fw=l_fw.item(),
        l_sp=l_sp.item(),
        l_tc=0.0,
        l_total=total.item(),
        fw_enabled=config.enable_fw,
        sp_enabled=config.enable_sp,
        tc_enabled=False,
        total=total,
    )


def text_caption_loss(text_cls, caption_cls, tau: float) -> Tensor:
    """Symmetric cross entropy over the cosine matrix of matched text
    and caption summary vectors."""
    text_cls, caption_cls = as_tensor(text_cls), as_tensor(caption_cls)
    if text_cls.shape != caption_cls.shape or text_cls.ndim != 2:
        raise UsageError(
            f"text/caption cls batches must be matched N x D, got {text_cls.shape} vs {caption_cls.shape}"
        )
    matrix = T.matmul(T.l2_normalize(text_cls), T.transpose(T.l2_normalize(caption_cls)))
    return nt_xent(matrix, tau)


def total_loss(audios, texts, config: LossConfig, text_cls=None, caption_cls=None) -> LossBreakdown:
    """Audio-text loss (clip-sentence or the full granular combination,
    per config) plus the optional weighted text-caption term."""
    breakdown = hci_loss(audios, texts, config)
    if not config.enable_tc:
        return breakdown
    if text_cls is None or caption_cls is None:
        raise DataError("text-caption loss enabled but caption embeddings are missing")
    text_cls, caption_cls = as_tensor(text_cls), as_tensor(caption_cls)
    if text_cls.shape[0] < 2:
        l_tc = Tensor(0.0)
    else:
        l_tc = text_caption_loss(text_cls, caption_cls, config.tau)
    total = breakdown.total + config.tc_weight * l_tc
    return LossBreakdown(
        l_cs=breakdown.l_cs,
        l_fw=breakdown.l_fw,
        l_sp=breakdown.l_sp,
        l_tc=l_tc.item(),
        l_total=total.item(),
        fw_enabled=breakdown.fw_enabled,
        sp_enabled=breakdown.sp_enabled,
        tc_enabled=True,
        total=total,
    )
