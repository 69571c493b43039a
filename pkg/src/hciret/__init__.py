"""Hierarchical cross-modal interaction retrieval over precomputed
embedding sequences: trainable hierarchies, interaction scores,
contrastive losses, and a bidirectional R@k evaluation harness."""

from .caption import FusionConfig, augment_pairs, co_attend, fuse_scores, init_co_attention
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Batch,
    Bundle,
    EmbeddingSequence,
    PairRecord,
    SynthConfig,
    generate_synthetic,
    make_batches,
    read_bundle,
    write_bundle,
)
from .errors import DataError, UsageError
from .evaluation import EvalReport, evaluate, recall_at_k
from .hierarchy import (
    AggregatorParams,
    HierarchyConfig,
    MlpParams,
    MultiGranularityAudio,
    MultiGranularityText,
    aggregate,
    build_audio_hierarchy,
    build_text_hierarchy,
    mlp_h,
)
from .losses import LossBreakdown, LossConfig, granular_loss, hci_loss, nt_xent, text_caption_loss, total_loss
from .model import HciRetriever
from .optim import Adam, adam_update
from .similarity import ScoreConfig, ci, cosine, eval_score, pairwise_ci_matrix
from .tensor import Parameter, Tensor, backward, grad_check, no_grad

__all__ = [
    "Adam",
    "AggregatorParams",
    "Batch",
    "Bundle",
    "Checkpoint",
    "DataError",
    "EmbeddingSequence",
    "EvalReport",
    "FusionConfig",
    "HciRetriever",
    "HierarchyConfig",
    "LossBreakdown",
    "LossConfig",
    "MlpParams",
    "MultiGranularityAudio",
    "MultiGranularityText",
    "PairRecord",
    "Parameter",
    "ScoreConfig",
    "SynthConfig",
    "Tensor",
    "UsageError",
    "adam_update",
    "aggregate",
    "augment_pairs",
    "backward",
    "build_audio_hierarchy",
    "build_text_hierarchy",
    "ci",
    "co_attend",
    "cosine",
    "eval_score",
    "evaluate",
    "fuse_scores",
    "generate_synthetic",
    "grad_check",
    "granular_loss",
    "hci_loss",
    "init_co_attention",
    "load_checkpoint",
    "make_batches",
    "mlp_h",
    "no_grad",
    "nt_xent",
    "pairwise_ci_matrix",
    "read_bundle",
    "recall_at_k",
    "save_checkpoint",
    "text_caption_loss",
    "total_loss",
    "write_bundle",
]

__version__ = "0.1.0"
