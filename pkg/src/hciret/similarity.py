"""Cosine similarity and the symmetric max-mean interaction score.

The interaction score between two row sets A (N_a x D) and B (N_b x D)
builds the pairwise cosine matrix S[m, n] = cos(A_m, B_n) and returns

    ( mean_n max_m S[m, n] + mean_m max_n S[m, n] ) / 2,

i.e. every row of B is matched against its best row of A and vice versa.
The directional means use exactly-rounded summation, so the score is
bitwise invariant to row permutations of either argument.

All functions are pure over immutable inputs and safe to evaluate in
parallel across matrix entries.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import UsageError
from .tensor import Tensor, as_tensor
from .validation import check_choice, check_positive

EVAL_MODES = ("clip_sentence_only", "hci_combined")


@dataclass
class ScoreConfig:
    """Temperature and the inference-time score composition.

    ``hci_combined`` adds the weighted frame/word and segment/phrase
    interaction scores to the clip-sentence cosine; since the model was
    optimised under those weights it is the default. The plain cosine
    mode is kept for comparison.
    """

    tau: float = 0.07
    eval_mode: str = "hci_combined"
    alpha: float = 0.5
    beta: float = 0.1

    def __post_init__(self):
        check_positive(self.tau, "tau")
        check_choice(self.eval_mode, EVAL_MODES, "eval_mode")


@dataclass
class SimilarityMatrix:
    """N x N scores; rows index audio items, columns text items. Entries
    stay within [-1, 1] up to floating-point rounding."""

    values: Tensor
    level: str


def cosine(u, v) -> Tensor:
    """Cosine similarity of two vectors; zero vectors yield 0 via the
    1e-12 norm clamp rather than an error."""
    u, v = as_tensor(u), as_tensor(v)
    if u.size != v.size:
        raise UsageError(f"cosine operands differ in size: {u.shape} vs {v.shape}")
    un = T.l2_normalize(T.reshape(u, 1, u.size))
    vn = T.l2_normalize(T.reshape(v, 1, v.size))
    return T.reshape(T.matmul(un, T.transpose(vn)), ())


def _directional_terms(a_normed: Tensor, b_normed: Tensor) -> Tensor:
    s = T.matmul(a_normed, T.transpose(b_normed))
    best_a_for_b = T.omean(T.amax(s, axis=0))
    best_b_for_a = T.omean(T.amax(s, axis=1))
    return (best_a_for_b + best_b_for_a) * 0.5


def ci(a, b) -> Tensor:
    """Symmetric max-mean interaction score of two row sets."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] < 1 or b.shape[0] < 1:
        raise UsageError("ci expects two non-empty row sets")
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"ci operands differ in dim: {a.shape} vs {b.shape}")
    return _directional_terms(T.l2_normalize(a), T.l2_normalize(b))


def pairwise_ci_matrix(batch_a, batch_b) -> Tensor:
    """N x N matrix with entry (i, j) = ci(A_i, B_j); the diagonal holds
    the positive-pair scores. Rows are normalised once per item, and each
    entry goes through the same code path as :func:`ci`."""
    if len(batch_a) != len(batch_b):
        raise UsageError(f"batch sizes differ: {len(batch_a)} vs {len(batch_b)}")
    if not batch_a:
        raise UsageError("pairwise_ci_matrix of empty batches")
    normed_a = [T.l2_normalize(as_tensor(a)) for a in batch_a]
    normed_b = [T.l2_normalize(as_tensor(b)) for b in batch_b]
    rows = []
    for an in normed_a:
        cells = [T.reshape(_directional_terms(an, bn), 1, 1) for bn in normed_b]
        rows.append(T.concat(cells, axis=1))
    return T.concat(rows, axis=0)


def pairwise_cosine_matrix(batch_u, batch_v) -> Tensor:
    """N x N cosine matrix of two batches of single vectors (1 x D)."""
    if len(batch_u) != len(batch_v):
        raise UsageError(f"batch sizes differ: {len(batch_u)} vs {len(batch_v)}")
    if not batch_u:
        raise UsageError("pairwise_cosine_matrix of empty batches")
    stacked_u = T.concat([T.reshape(as_tensor(u), 1, as_tensor(u).size) for u in batch_u], axis=0)
    stacked_v = T.concat([T.reshape(as_tensor(v), 1, as_tensor(v).size) for v in batch_v], axis=0)
    return T.matmul(T.l2_normalize(stacked_u), T.transpose(T.l2_normalize(stacked_v)))


def eval_score(audio, text, config: ScoreConfig) -> Tensor:
    """Retrieval score of one audio hierarchy against one text hierarchy."""
    base = cosine(audio.clip, text.sentence)
    if config.eval_mode == "clip_sentence_only":
        return base
    if text.words is None or text.phrases is None:
        raise UsageError("hci_combined scoring needs word- and phrase-level text data")
    return base + config.alpha * ci(audio.frames, text.words) + config.beta * ci(audio.segments, text.phrases)
