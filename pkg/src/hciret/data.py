"""Embedding bundles: types, HEB1 serialisation, batching, and a
synthetic generator for desk-scale experiments.

A bundle holds per-item encoder outputs (audio frames, text words,
caption tokens, optional [CLS] vectors) plus the audio-text(-caption)
pairing with split labels. On disk a bundle is a directory with
``embeddings.heb`` (binary, little-endian, float32 payload) and
``pairs.json`` beside it. Values are widened to float64 on load;
computation is always 64-bit.

Bundles are immutable after load and safe to share read-only; writing
requires exclusive access to the destination directory.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .rng import Xoshiro256, fnv1a64
from .validation import check_finite

MAGIC = b"HCIEMB01"
FORMAT_VERSION = 1

MODALITIES = ("audio", "text", "caption")
_MODALITY_CODE = {"audio": 0, "text": 1, "caption": 2}
_MODALITY_NAME = {v: k for k, v in _MODALITY_CODE.items()}

SPLITS = ("train", "val", "test")

EMBEDDINGS_FILE = "embeddings.heb"
PAIRS_FILE = "pairs.json"


@dataclass
class EmbeddingSequence:
    """One item's encoder output: ``matrix`` rows are frames, words, or
    caption tokens; ``cls`` is the optional summary vector (text and
    caption only)."""

    item_id: str
    modality: str
    matrix: np.ndarray
    cls: np.ndarray | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataError(f"sequence {self.item_id}: unknown modality {self.modality!r}")
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1 or self.matrix.shape[1] < 1:
            raise DataError(f"sequence {self.item_id}: matrix must be rows x dim with rows >= 1")
        check_finite(self.matrix, f"sequence {self.item_id}")
        if self.cls is not None:
            self.cls = np.asarray(self.cls, dtype=np.float64).reshape(1, -1)
            if self.cls.shape[1] != self.matrix.shape[1]:
                raise DataError(f"sequence {self.item_id}: cls width != matrix width")
            check_finite(self.cls, f"sequence {self.item_id} cls")
        if self.modality == "audio" and self.cls is not None:
            raise DataError(f"sequence {self.item_id}: audio sequences cannot carry a cls vector")

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PairRecord:
    """An (audio, text) positive pair, optionally linked to a generated
    caption, labelled with its split."""

    audio_id: str
    text_id: str
    caption_id: str | None = None
    split: str = "train"


class Bundle:
    """Validated collection of sequences and pair records sharing one
    embedding dimension."""

    def __init__(self, sequences: list[EmbeddingSequence], pairs: list[PairRecord], dim: int | None = None):
        if not sequences:
            raise DataError("bundle has no sequences")
        if dim is None:
            dim = sequences[0].dim
        self.dim = int(dim)
        self.sequences = list(sequences)
        self.pairs = list(pairs)
        self.by_id: dict[str, EmbeddingSequence] = {}
        for seq in self.sequences:
            if seq.dim != self.dim:
                raise DataError(f"sequence {seq.item_id} has dim {seq.dim}, bundle dim is {self.dim}")
            if seq.item_id in self.by_id:
                raise DataError(f"duplicate sequence id {seq.item_id}")
            self.by_id[seq.item_id] = seq
        seen_pairs: set[tuple[str, str, str]] = set()
        for pair in self.pairs:
            if pair.split not in SPLITS:
                raise DataError(f"pair ({pair.audio_id}, {pair.text_id}): unknown split {pair.split!r}")
            self._check_ref(pair.audio_id, {"audio"})
            self._check_ref(pair.text_id, {"text", "caption"})
            if pair.caption_id is not None:
                self._check_ref(pair.caption_id, {"caption"})
            key = (pair.audio_id, pair.text_id, pair.split)
            if key in seen_pairs:
                raise DataError(
                    f"duplicate pair ({pair.audio_id}, {pair.text_id}) in split {pair.split}"
                )
            seen_pairs.add(key)

    def _check_ref(self, item_id: str, allowed: set[str]) -> None:
        seq = self.by_id.get(item_id)
        if seq is None:
            raise DataError(f"pair references missing id {item_id}")
        if seq.modality not in allowed:
            raise DataError(
                f"pair references {item_id} with modality {seq.modality}, expected {sorted(allowed)}"
            )

    def pairs_for_split(self, split: str) -> list[PairRecord]:
        if split not in SPLITS:
            raise UsageError(f"unknown split {split!r}")
        return [p for p in self.pairs if p.split == split]

    def split_sizes(self) -> dict[str, int]:
        return {s: len(self.pairs_for_split(s)) for s in SPLITS}


@dataclass
class Batch:
    """References to the pair records forming one mini-batch."""

    pairs: list[PairRecord] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.pairs)


# -- HEB1 serialisation -------------------------------------------------


def _pack_sequence(seq: EmbeddingSequence) -> bytes:
    ident = seq.item_id.encode("utf-8")
    flags = 1 if seq.cls is not None else 0
    head = struct.pack("<I", len(ident)) + ident
    head += struct.pack("<BBI", _MODALITY_CODE[seq.modality], flags, seq.rows)
    body = seq.matrix.astype("<f4").tobytes()
    if seq.cls is not None:
        body += seq.cls.astype("<f4").tobytes()
    return head + body


def _manifest_entry(pair: PairRecord) -> dict:
    return {
        "audio_id": pair.audio_id,
        "text_id": pair.text_id,
        "caption_id": pair.caption_id,
        "split": pair.split,
    }


def write_bundle(bundle: Bundle, destination: str) -> None:
    """Write ``embeddings.heb`` and ``pairs.json`` into the destination
    directory. Writes go through temporary files, so a failure leaves no
    partial output behind."""
    heb = struct.pack("<8sIII", MAGIC, FORMAT_VERSION, bundle.dim, len(bundle.sequences))
    heb += b"".join(_pack_sequence(seq) for seq in bundle.sequences)
    manifest = json.dumps([_manifest_entry(p) for p in bundle.pairs], indent=2) + "\n"

    try:
        os.makedirs(destination, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create bundle directory {destination}: {err}") from err
    for name, payload in ((EMBEDDINGS_FILE, heb), (PAIRS_FILE, manifest.encode("utf-8"))):
        target = os.path.join(destination, name)
        tmp = target + ".tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, target)
        except OSError as err:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise DataError(f"cannot write {target}: {err}") from err


class _Reader:
    def __init__(self, blob: bytes, origin: str):
        self.blob = blob
        self.pos = 0
        self.origin = origin

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise DataError(f"{self.origin}: unexpected end of file")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def done(self) -> bool:
        return self.pos == len(self.blob)


def read_bundle(source: str) -> Bundle:
    """Inverse of :func:`write_bundle`; validates magic, version, shapes
    and pair referential integrity, naming the first violation."""
    heb_path = os.path.join(source, EMBEDDINGS_FILE)
    pairs_path = os.path.join(source, PAIRS_FILE)
    if not os.path.isdir(source):
        raise DataError(f"bundle directory not found: {source}")
    try:
        with open(heb_path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"cannot read {heb_path}: {err}") from err

    rd = _Reader(blob, heb_path)
    if rd.take(8) != MAGIC:
        raise DataError(f"{heb_path}: bad magic, not a HEB1 file")
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise DataError(f"{heb_path}: unsupported version {version}")
    dim = rd.u32()
    count = rd.u32()
    if dim < 1:
        raise DataError(f"{heb_path}: dimension must be >= 1")

    sequences = []
    for _ in range(count):
        ident = rd.take(rd.u32()).decode("utf-8")
        modality_code = rd.u8()
        if modality_code not in _MODALITY_NAME:
            raise DataError(f"{heb_path}: sequence {ident}: unknown modality code {modality_code}")
        flags = rd.u8()
        rows = rd.u32()
        if rows < 1:
            raise DataError(f"{heb_path}: sequence {ident}: rows must be >= 1")
        matrix = np.frombuffer(rd.take(rows * dim * 4), dtype="<f4").astype(np.float64)
        matrix = matrix.reshape(rows, dim)
        cls = None
        if flags & 1:
            cls = np.frombuffer(rd.take(dim * 4), dtype="<f4").astype(np.float64).reshape(1, dim)
        sequences.append(EmbeddingSequence(ident, _MODALITY_NAME[modality_code], matrix, cls))
    if not rd.done():
        raise DataError(f"{heb_path}: trailing data after the last record")

    try:
        with open(pairs_path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read {pairs_path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"{pairs_path}: invalid JSON: {err}") from err
    if not isinstance(entries, list):
        raise DataError(f"{pairs_path}: manifest must be a JSON array")
    pairs = []
    for entry in entries:
        try:
            pairs.append(
                PairRecord(
                    audio_id=entry["audio_id"],
                    text_id=entry["text_id"],
                    caption_id=entry.get("caption_id"),
                    split=entry["split"],
                )
            )
        except (KeyError, TypeError) as err:
            raise DataError(f"{pairs_path}: malformed pair entry {entry!r}") from err
    return Bundle(sequences, pairs, dim)


# -- batching ------------------------------------------------------------


def partition_pairs(pairs: list[PairRecord], batch_size: int, seed: int, drop_last: bool = False) -> tuple[list[Batch], int]:
    """Seeded shuffle of ``pairs`` partitioned into consecutive batches;
    returns (batches, dropped_count).

    Within a batch all audio ids and all text ids must be distinct (the
    off-diagonal entries of a contrastive batch must be true negatives).
    Duplicates are repaired by swapping the offending pair with the next
    unused compatible pair; pairs that cannot be placed in one pass are
    dropped for this epoch and counted.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    order = list(pairs)
    Xoshiro256(seed).shuffle(order)

    batches: list[Batch] = []
    dropped = 0
    pos = 0
    while pos < len(order):
        window = order[pos : pos + batch_size]
        batch: list[PairRecord] = []
        audio_seen: set[str] = set()
        text_seen: set[str] = set()
        for local, pair in enumerate(window):
            if pair.audio_id not in audio_seen and pair.text_id not in text_seen:
                batch.append(pair)
                audio_seen.add(pair.audio_id)
                text_seen.add(pair.text_id)
                continue
            # Look past the window for the next unused compatible pair.
            swapped = False
            for probe in range(pos + batch_size, len(order)):
                cand = order[probe]
                if cand.audio_id not in audio_seen and cand.text_id not in text_seen:
                    order[pos + local], order[probe] = order[probe], order[pos + local]
                    batch.append(cand)
                    audio_seen.add(cand.audio_id)
                    text_seen.add(cand.text_id)
                    swapped = True
                    break
            if not swapped:
                dropped += 1
        pos += batch_size
        if batch:
            batches.append(Batch(batch))
    if drop_last and batches and batches[-1].n < batch_size:
        batches.pop()
    return batches, dropped


def batch_pairs(pairs: list[PairRecord], batch_size: int, seed: int, drop_last: bool = False) -> list[Batch]:
    """:func:`partition_pairs` with the dropped count recorded as a
    warning."""
    batches, dropped = partition_pairs(pairs, batch_size, seed, drop_last)
    if dropped:
        import logging

        logging.getLogger(__name__).warning(
            "batching dropped %d pair(s) that could not satisfy the distinct-id constraint", dropped
        )
    return batches


def make_batches(bundle: Bundle, split: str, batch_size: int, seed: int, drop_last: bool = False) -> list[Batch]:
    pairs = bundle.pairs_for_split(split)
    if not pairs:
        raise DataError(f"split {split!r} has no pairs")
    return batch_pairs(pairs, batch_size, seed, drop_last)


# -- synthetic generation ------------------------------------------------


@dataclass
class SynthConfig:
    """Configuration for the synthetic hierarchical bundle generator.

    Each item draws a latent near its class centre; audio frames, text
    words, and caption tokens are noisy copies of that latent. With
    ``aspects`` > 0, items additionally carry per-item aspect vectors:
    audio frames express all aspects in contiguous groups while text
    words cover only a subset, creating structure that is visible at the
    frame/word level but washed out by clip-level averaging.
    ``distractor_frames`` replaces that trailing fraction of each item's
    audio frames with content-free noise, so useful clip vectors require
    pooling that learns to ignore the distractors. ``audio_rotation``
    expresses the audio side in a fixed rotated coordinate system, the
    way two independently trained encoders disagree; retrieval then
    requires learning the alignment rather than reading it off.
    """

    items: int = 64
    classes: int = 8
    n_frames: int = 20
    n_words: int = 12
    n_caption_tokens: int = 8
    dim: int = 16
    sigma: float = 0.05
    audio_sigma: float | None = None
    aspects: int = 0
    aspect_scale: float = 0.5
    within_scale: float = 0.3
    distractor_frames: float = 0.0
    audio_rotation: bool = False
    orthogonal: bool = False
    captions: bool = True
    seed: int = 0


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def _split_for(base_id: str) -> str:
    bucket = fnv1a64(base_id) % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def generate_synthetic(config: SynthConfig) -> Bundle:
    """Build a seeded synthetic bundle; identical configs give
    bit-identical bundles. Values are rounded to float32 so that the
    in-memory bundle equals its serialised round trip."""
    c = config
    if c.items < 1 or c.classes < 1 or c.classes > c.items:
        raise UsageError("need 1 <= classes <= items")
    if c.sigma < 0 or (c.audio_sigma is not None and c.audio_sigma < 0):
        raise UsageError("sigma must be >= 0")
    if min(c.n_frames, c.n_words, c.dim) < 1 or (c.captions and c.n_caption_tokens < 1):
        raise UsageError("sequence lengths and dim must be >= 1")
    if c.orthogonal and c.classes > c.dim:
        raise UsageError("orthogonal latents need classes <= dim")
    if c.aspects < 0:
        raise UsageError("aspects must be >= 0")
    if not 0.0 <= c.distractor_frames < 1.0:
        raise UsageError("distractor_frames must lie in [0, 1)")

    rng = Xoshiro256(c.seed)
    audio_sigma = c.sigma if c.audio_sigma is None else c.audio_sigma

    centers = []
    for _ in range(c.classes):
        v = rng.normals(c.dim)
        if c.orthogonal:
            for u in centers:
                v = v - np.dot(v, u) * u
        centers.append(_unit(v))

    rotation = None
    if c.audio_rotation:
        q, r = np.linalg.qr(rng.normals(c.dim, c.dim))
        rotation = q * np.sign(np.diag(r))  # deterministic sign convention

    sequences: list[EmbeddingSequence] = []
    pairs: list[PairRecord] = []
    for i in range(c.items):
        base = f"item{i:04d}"
        center = centers[i % c.classes]
        latent = _unit(center + c.within_scale * rng.normals(c.dim))

        if c.aspects > 0:
            aspect_vecs = [c.aspect_scale * rng.normals(c.dim) for _ in range(c.aspects)]
            text_groups = list(range(c.aspects))
            rng.shuffle(text_groups)
            text_groups = sorted(text_groups[: max(1, c.aspects // 2)])
        else:
            aspect_vecs = []
            text_groups = []

        n_distractors = int(round(c.distractor_frames * c.n_frames))
        n_content = c.n_frames - n_distractors
        frames = np.empty((c.n_frames, c.dim))
        for j in range(n_content):
            row = latent.copy()
            if aspect_vecs:
                row = row + aspect_vecs[j * c.aspects // n_content]
            if rotation is not None:
                row = row @ rotation
            frames[j] = row + audio_sigma * rng.normals(c.dim)
        for j in range(n_content, c.n_frames):
            frames[j] = rng.normals(c.dim)

        words = np.empty((c.n_words, c.dim))
        for j in range(c.n_words):
            row = latent.copy()
            if aspect_vecs:
                row = row + aspect_vecs[text_groups[j * len(text_groups) // c.n_words]]
            words[j] = row + c.sigma * rng.normals(c.dim)
        text_cls = latent + c.sigma * rng.normals(c.dim)

        def f32(a):
            return np.asarray(a, dtype="<f4").astype(np.float64)

        audio_id, text_id = f"{base}.audio", f"{base}.text"
        sequences.append(EmbeddingSequence(audio_id, "audio", f32(frames)))
        sequences.append(EmbeddingSequence(text_id, "text", f32(words), f32(text_cls)))

        caption_id = None
        if c.captions:
            caption_id = f"{base}.caption"
            tokens = np.empty((c.n_caption_tokens, c.dim))
            for j in range(c.n_caption_tokens):
                tokens[j] = latent + c.sigma * rng.normals(c.dim)
            caption_cls = latent + c.sigma * rng.normals(c.dim)
            sequences.append(EmbeddingSequence(caption_id, "caption", f32(tokens), f32(caption_cls)))

        pairs.append(PairRecord(audio_id, text_id, caption_id, _split_for(base)))

    return Bundle(sequences, pairs, c.dim)
