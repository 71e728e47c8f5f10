"""Zero-shot classification over held-out classes, accuracy reporting,
embedding-alignment diagnostics, input-gradient saliency, and the
inference-time fusion baseline.

Evaluation is read-only over a fixed model. Ties in every argmax resolve to
the lowest class id so reports are deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .core import (
    ContractViolation,
    DegenerateInputError,
    SkeletonSequence,
    TextPrompt,
    VideoClip,
)
from .encoders import DualEncoderModel
from .synthdata import SplitSpec, Triplet


@dataclass
class ZeroShotReport:
    split_side: str
    class_ids: list[int]
    per_class_accuracy: dict[int, float]
    per_class_counts: dict[int, int]
    overall_top1: float
    confusion: dict[int, dict[int, int]]  # true id -> predicted id -> count
    model_fingerprint: str = ""

    @property
    def num_samples(self) -> int:
        return sum(self.per_class_counts.values())

    def to_json(self) -> str:
        payload = {
            "split_side": self.split_side,
            "class_ids": self.class_ids,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "per_class_counts": {str(k): v for k, v in self.per_class_counts.items()},
            "overall_top1": self.overall_top1,
            "confusion": {str(t): {str(p): c for p, c in row.items()}
                          for t, row in self.confusion.items()},
            "model_fingerprint": self.model_fingerprint,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _argmax_lowest_id(similarities: np.ndarray, class_ids: list[int]) -> int:
    best = None
    for sim, cid in zip(similarities, class_ids):
        if best is None or sim > best[0] or (sim == best[0] and cid < best[1]):
            best = (sim, cid)
    return best[1]


def zero_shot_classify(model, clip: VideoClip, prompts: list[TextPrompt]) -> int:
    """Argmax of cosine similarity between the clip embedding and each class
    prompt embedding. Video-only inference surface."""
    if not prompts:
        raise ContractViolation("prompt set must be non-empty")
    ids = [p.class_id for p in prompts]
    if len(set(ids)) != len(ids):
        raise ContractViolation("duplicate class ids in prompt set")
    text, ids = model.text_matrix(prompts)
    z = model.embed_sample(video=clip)
    return _argmax_lowest_id(text @ z, ids)


def evaluate_split(model, triplets: list[Triplet], split: SplitSpec, side: str,
                   model_fingerprint: str = "") -> ZeroShotReport:
    """Accuracy report over one side of the split, scoring only against that
    side's class prompts."""
    if side not in ("seen", "unseen"):
        raise ContractViolation(f"side must be seen or unseen, got {side!r}")
    wanted = split.seen_class_ids if side == "seen" else split.unseen_class_ids
    dataset_ids = {t.class_id for t in triplets}
    missing = wanted - dataset_ids
    if missing:
        raise ContractViolation(f"split references classes absent from dataset: {sorted(missing)}")
    members = [t for t in triplets if t.class_id in wanted]
    prompts_by_id = {t.class_id: t.prompt for t in members}
    prompts = [prompts_by_id[c] for c in sorted(prompts_by_id)]
    text, ids = model.text_matrix(prompts)

    counts = {c: 0 for c in sorted(wanted)}
    hits = {c: 0 for c in sorted(wanted)}
    confusion: dict[int, dict[int, int]] = {c: {} for c in sorted(wanted)}
    for t in members:
        z = model.embed_sample(video=t.video, skeleton=t.skeleton)
        pred = _argmax_lowest_id(text @ z, ids)
        counts[t.class_id] += 1
        hits[t.class_id] += int(pred == t.class_id)
        confusion[t.class_id][pred] = confusion[t.class_id].get(pred, 0) + 1
    per_class = {c: (hits[c] / counts[c]) if counts[c] else 0.0 for c in counts}
    total = sum(counts.values())
    overall = sum(hits.values()) / total if total else 0.0
    return ZeroShotReport(
        split_side=side,
        class_ids=sorted(wanted),
        per_class_accuracy=per_class,
        per_class_counts=counts,
        overall_top1=overall,
        confusion=confusion,
        model_fingerprint=model_fingerprint,
    )


def harmonic_mean(values) -> float:
    values = [float(v) for v in values]
    if not values:
        raise ContractViolation("harmonic_mean needs at least one value")
    if any(v <= 0.0 for v in values):
        raise DegenerateInputError("harmonic_mean requires strictly positive values")
    return len(values) / sum(1.0 / v for v in values)


def fusion_classify(videoclip: DualEncoderModel, skeletonclip: DualEncoderModel,
                    clip: VideoClip, skeleton: SkeletonSequence,
                    prompts: list[TextPrompt]) -> int:
    """Argmax over the elementwise mean of the video-side and skeleton-side
    similarity rows (inference-time fusion, no training recipe)."""
    if not prompts:
        raise ContractViolation("prompt set must be non-empty")
    text_v, ids_v = videoclip.text_matrix(prompts)
    text_s, ids_s = skeletonclip.text_matrix(prompts)
    if ids_v != ids_s:
        raise ContractViolation("class-id mismatch between the two prompt embeddings")
    row_v = text_v @ videoclip.embed_sample(video=clip)
    row_s = text_s @ skeletonclip.embed_sample(skeleton=skeleton)
    return _argmax_lowest_id(0.5 * (row_v + row_s), ids_v)


def saliency_map(model: DualEncoderModel, clip: VideoClip,
                 class_prompt: TextPrompt) -> np.ndarray:
    """Per-pixel L2 norm (over channels) of the gradient of the class cosine
    similarity with respect to the input pixels. Shape (T_v, H, W), >= 0."""
    if model.modality != "video":
        raise ContractViolation("saliency_map needs a video-modality model")
    text_vec, _ = model.text_matrix([class_prompt])
    pixels = Tensor(clip.frames, requires_grad=True)
    emb = model.encoder.encode_tensor(pixels)
    score = (emb * Tensor(text_vec[0])).sum()
    score.backward()
    grad = pixels.grad
    if grad is None or not np.all(np.isfinite(grad)):
        raise DegenerateInputError("non-finite input gradient")
    return np.sqrt((grad**2).sum(axis=1))


@dataclass
class AlignmentReport:
    per_class_mean: dict[int, float]
    overall_mean: float


def alignment_report(model, triplets: list[Triplet],
                     prompts: list[TextPrompt]) -> AlignmentReport:
    """Per-class mean cosine similarity between each class text embedding and
    the embeddings of that class's samples."""
    text, ids = model.text_matrix(prompts)
    sums: dict[int, float] = {c: 0.0 for c in ids}
    counts: dict[int, int] = {c: 0 for c in ids}
    id_row = {c: i for i, c in enumerate(ids)}
    for t in triplets:
        if t.class_id not in id_row:
            continue
        z = model.embed_sample(video=t.video, skeleton=t.skeleton)
        sums[t.class_id] += float(text[id_row[t.class_id]] @ z)
        counts[t.class_id] += 1
    empty = [c for c in ids if counts[c] == 0]
    if empty:
        raise ContractViolation(f"no samples for classes {empty}")
    per_class = {c: sums[c] / counts[c] for c in ids}
    overall = sum(sums.values()) / sum(counts.values())
    return AlignmentReport(per_class_mean=per_class, overall_mean=overall)


# -- harness-validation stub models -------------------------------------------------


@dataclass
class OracleEmbeddingModel:
    """Emits exactly the text embedding of the sample's true class; validates
    that the harness scores a perfect model at 100%."""

    text_encoder: object
    modality: str = "video"

    def text_matrix(self, prompts: list[TextPrompt]):
        texts = [p.text for p in prompts]
        mat = self.text_encoder.encode_batch(texts).data
        self._lookup = {p.class_id: mat[i] for i, p in enumerate(prompts)}
        return mat, [p.class_id for p in prompts]

    def embed_sample(self, video=None, skeleton=None) -> np.ndarray:
        cid = video.class_id if video is not None else skeleton.class_id
        return self._lookup[cid]


@dataclass
class ConstantEmbeddingModel:
    vector: np.ndarray
    text_encoder: object
    modality: str = "video"

    def text_matrix(self, prompts: list[TextPrompt]):
        mat = self.text_encoder.encode_batch([p.text for p in prompts]).data
        return mat, [p.class_id for p in prompts]

    def embed_sample(self, video=None, skeleton=None) -> np.ndarray:
        v = np.asarray(self.vector, dtype=np.float64)
        return v / np.linalg.norm(v)


@dataclass
class RandomEmbeddingModel:
    """Deterministic per-sample random unit embedding (hash of the pixel
    bytes), for calibrating the harness against chance level."""

    dim: int
    text_encoder: object
    seed: int = 0
    modality: str = "video"

    def text_matrix(self, prompts: list[TextPrompt]):
        mat = self.text_encoder.encode_batch([p.text for p in prompts]).data
        return mat, [p.class_id for p in prompts]

    def embed_sample(self, video=None, skeleton=None) -> np.ndarray:
        source = video.frames if video is not None else skeleton.frames
        digest = hashlib.sha256(np.ascontiguousarray(source).tobytes()
                                + self.seed.to_bytes(8, "little", signed=True)).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)


# -- saliency artifacts ----------------------------------------------------------------


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM, scaled so the map maximum is white."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ContractViolation("PGM writer expects a 2-D array")
    peak = image.max()
    scaled = np.zeros_like(image) if peak == 0.0 else image / peak
    data = (scaled * 255.0).round().astype(np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_saliency(base_path, saliency: np.ndarray):
    """One PGM per frame plus the raw float64 map as an .npy sidecar."""
    base = Path(base_path)
    np.save(base.with_suffix(".npy"), saliency)
    for t in range(saliency.shape[0]):
        write_pgm(base.parent / f"{base.name}_f{t:02d}.pgm", saliency[t])
