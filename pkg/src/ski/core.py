"""Semantic types and deterministic numeric primitives.

Everything here is a pure function over immutable float64 inputs. Degenerate
inputs raise instead of propagating NaNs so that property tests fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-6


class SkiError(Exception):
    """Base class for package errors."""


class DegenerateInputError(SkiError, ValueError):
    """Input is numerically degenerate (zero vector, empty axis, bad scale)."""


class ContractViolation(SkiError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(SkiError, ValueError):
    """Invalid configuration value; maps to CLI exit code 2."""


class DataFormatError(SkiError, ValueError):
    """A serialized artifact is malformed or inconsistent."""


# -- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class SkeletonSequence:
    """T_s frames of J joints in 3-D camera coordinates (meters)."""

    frames: np.ndarray  # (T_s, J, 3)
    subject_id: int
    class_id: int

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[2] != 3:
            raise ContractViolation(f"skeleton frames must be (T,J,3), got {f.shape}")
        if f.shape[0] < 1:
            raise ContractViolation("skeleton needs at least one frame")
        if f.shape[1] < 2:
            raise ContractViolation("skeleton needs at least two joints")
        if not np.all(np.isfinite(f)):
            raise DegenerateInputError("skeleton coordinates must be finite")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """T_v frames of C×H×W pixels, intensities in [0,1]."""

    frames: np.ndarray  # (T_v, C, H, W)
    class_id: int

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4:
            raise ContractViolation(f"video frames must be (T,C,H,W), got {f.shape}")
        if f.shape[0] < 1:
            raise ContractViolation("video needs at least one frame")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ContractViolation("pixel values must lie in [0,1]")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class TextPrompt:
    text: str
    class_id: int
    template_id: str = "default"

    def __post_init__(self):
        if not self.text:
            raise ContractViolation("prompt text must be non-empty")


@dataclass(frozen=True)
class Embedding:
    """D-dimensional vector in the shared semantic space."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ContractViolation("embedding must be a 1-D vector")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > NORM_TOL:
            raise ContractViolation("embedding flagged normalized but |v| != 1")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class LogitMatrix:
    """B×C similarity matrix between sample embeddings and class-text embeddings."""

    values: np.ndarray
    row_ids: tuple = field(default=())
    col_ids: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ContractViolation(f"logit matrix must be 2-D and non-empty, got {v.shape}")
        row_ids = tuple(self.row_ids) if self.row_ids else tuple(range(v.shape[0]))
        col_ids = tuple(self.col_ids) if self.col_ids else tuple(range(v.shape[1]))
        if len(row_ids) != v.shape[0] or len(col_ids) != v.shape[1]:
            raise ContractViolation("row/col id lengths must match matrix shape")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)

    @property
    def shape(self):
        return self.values.shape


# -- numeric primitives -------------------------------------------------------


def l2_normalize(v) -> Embedding:
    """Rescale `v` to unit L2 norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ContractViolation("l2_normalize expects a 1-D vector")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("non-finite input vector")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return Embedding(v / norm, normalized=True)


def _require_normalized_rows(m: np.ndarray, what: str):
    norms = np.linalg.norm(m, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ContractViolation(f"{what} must have unit-norm rows (worst deviation {worst:.3g})")


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    if not (a.normalized and b.normalized):
        raise ContractViolation("cosine_similarity requires normalized embeddings")
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


def similarity_matrix(Z, T, row_ids=(), col_ids=()) -> LogitMatrix:
    """Cosine-similarity matrix between two batches of unit-norm rows."""
    Z = np.asarray(Z, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if Z.ndim != 2 or T.ndim != 2:
        raise ContractViolation("similarity_matrix expects 2-D batches")
    if Z.shape[1] != T.shape[1]:
        raise ContractViolation(f"embedding dims differ: {Z.shape[1]} vs {T.shape[1]}")
    _require_normalized_rows(Z, "left batch")
    _require_normalized_rows(T, "right batch")
    return LogitMatrix(Z @ T.T, row_ids=row_ids, col_ids=col_ids)


def temporal_mean_pool(features) -> np.ndarray:
    """Elementwise arithmetic mean over the leading (time) axis."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim < 1 or f.shape[0] == 0:
        raise DegenerateInputError("temporal_mean_pool needs at least one frame")
    return f.mean(axis=0)


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax, stabilized by max subtraction."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    x = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("softmax requires finite logits")
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)
