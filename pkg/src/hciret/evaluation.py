"""Bidirectional retrieval evaluation with R@k.

Ranks are pessimistic under ties: a candidate's rank is one plus the
number of strictly better candidates plus the number of tied others, so
a constant scorer lands at the bottom instead of being handed R@1 = 1.
With several positives per query (real data pairs one audio with up to
five captions) a query counts as a hit when its best-ranked positive is
within the top k.

Evaluation is read-only over the model and bundle and may run in
parallel across queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .caption import FusionConfig
from .data import Bundle
from .errors import DataError, UsageError
from .similarity import ScoreConfig, eval_score
from .tensor import no_grad

DIRECTIONS = ("text_to_audio", "audio_to_text")


@dataclass
class DirectionReport:
    recalls: dict[int, float]
    queries: int

    def to_json(self) -> dict:
        out = {f"r{k}": v for k, v in self.recalls.items()}
        out["queries"] = self.queries
        return out


@dataclass
class EvalReport:
    text_to_audio: DirectionReport
    audio_to_text: DirectionReport
    score_mode: str
    fusion_lambda: float | None

    def to_json(self) -> dict:
        return {
            "text_to_audio": self.text_to_audio.to_json(),
            "audio_to_text": self.audio_to_text.to_json(),
            "score_mode": self.score_mode,
            "fusion_lambda": self.fusion_lambda,
        }


def recall_at_k(scores: np.ndarray, positives: list, k: int) -> float:
    """Fraction of queries whose best-ranked positive is within the top
    ``k``. ``positives[q]`` is a non-empty collection of candidate
    column indices relevant to query row ``q``."""
    if k < 1:
        raise UsageError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(positives):
        raise UsageError("scores must be Q x C with one positive set per query")
    hits = 0
    for q, pos in enumerate(positives):
        pos = list(pos)
        if not pos:
            raise UsageError(f"query {q} has no positives")
        row = scores[q]
        best = min(_pessimistic_rank(row, c) for c in pos)
        if best <= k:
            hits += 1
    return hits / scores.shape[0]


def _pessimistic_rank(row: np.ndarray, candidate: int) -> int:
    s = row[candidate]
    greater = int((row > s).sum())
    tied_others = int((row == s).sum()) - 1
    return 1 + greater + tied_others


def score_matrix(model, bundle: Bundle, split: str, direction: str,
                 score_config: ScoreConfig, fusion_config: FusionConfig | None = None):
    """(query_ids, candidate_ids, scores) for one retrieval direction.

    Hierarchies are built once per item. When fusion is enabled, the
    text-caption cosine between the text side and the audio side's
    caption summary is added with weight lambda; audio items without a
    caption contribute zero there.
    """
    if direction not in DIRECTIONS:
        raise UsageError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    pairs = bundle.pairs_for_split(split)
    if not pairs:
        raise DataError(f"split {split!r} has no pairs")
    audio_ids = list(dict.fromkeys(p.audio_id for p in pairs))
    text_ids = list(dict.fromkeys(p.text_id for p in pairs))
    caption_map = model._caption_map(bundle)

    with no_grad():
        audio_h = {a: model.audio_hierarchy(bundle, a, caption_map) for a in audio_ids}
        text_h = {t: model.text_hierarchy(bundle, t) for t in text_ids}
        base = np.empty((len(audio_ids), len(text_ids)))
        for i, a in enumerate(audio_ids):
            for j, t in enumerate(text_ids):
                base[i, j] = eval_score(audio_h[a], text_h[t], score_config).item()

    fused = base
    if fusion_config is not None and fusion_config.enabled:
        fused = base + fusion_config.lam * _caption_cosines(bundle, audio_ids, text_ids, caption_map)

    if direction == "text_to_audio":
        return text_ids, audio_ids, fused.T.copy()
    return audio_ids, text_ids, fused


def _caption_cosines(bundle: Bundle, audio_ids, text_ids, caption_map) -> np.ndarray:
    if not any(a in caption_map for a in audio_ids):
        raise DataError("fusion enabled but no audio item in the split has a caption")
    out = np.zeros((len(audio_ids), len(text_ids)))
    for i, a in enumerate(audio_ids):
        cap_id = caption_map.get(a)
        if cap_id is None:
            continue
        cap_cls = bundle.by_id[cap_id].cls
        if cap_cls is None:
            continue
        cap_vec = cap_cls.reshape(-1)
        cap_norm = max(float(np.linalg.norm(cap_vec)), 1e-12)
        for j, t in enumerate(text_ids):
            text_cls = bundle.by_id[t].cls
            if text_cls is None:
                continue
            tv = text_cls.reshape(-1)
            out[i, j] = float(cap_vec @ tv) / (cap_norm * max(float(np.linalg.norm(tv)), 1e-12))
    return out


def evaluate(model, bundle: Bundle, split: str = "test", score_config: ScoreConfig | None = None,
             fusion_config: FusionConfig | None = None, ks=(1, 5, 10)) -> EvalReport:
    """R@k in both retrieval directions over the split's items."""
    score_config = score_config or model.score_config()
    fusion_config = fusion_config if fusion_config is not None else model.fusion_config()
    pairs = bundle.pairs_for_split(split)
    if not pairs:
        raise DataError(f"split {split!r} has no pairs")

    reports = {}
    for direction in DIRECTIONS:
        queries, candidates, scores = score_matrix(model, bundle, split, direction, score_config, fusion_config)
        index = {c: i for i, c in enumerate(candidates)}
        positives_by_query: dict[str, set[int]] = {q: set() for q in queries}
        for p in pairs:
            if direction == "text_to_audio":
                positives_by_query[p.text_id].add(index[p.audio_id])
            else:
                positives_by_query[p.audio_id].add(index[p.text_id])
        positive_sets = [positives_by_query[q] for q in queries]
        recalls = {int(k): recall_at_k(scores, positive_sets, int(k)) for k in ks}
        reports[direction] = DirectionReport(recalls=recalls, queries=len(queries))

    return EvalReport(
        text_to_audio=reports["text_to_audio"],
        audio_to_text=reports["audio_to_text"],
        score_mode=score_config.eval_mode,
        fusion_lambda=fusion_config.lam if fusion_config and fusion_config.enabled else None,
    )
