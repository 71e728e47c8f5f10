"""Small trainable encoders for the three modalities plus the skeleton
classification head.

Every encoder is a deterministic pure function of (parameters, input) built on
the autodiff engine, so analytic gradients are available for any downstream
scalar. Freezing a parameter set is absolute: frozen arrays are never touched
by an optimizer and never receive gradients.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concatenate, l2_normalize_rows
from .core import (
    ContractViolation,
    DataFormatError,
    Embedding,
    SkeletonSequence,
    TextPrompt,
    VideoClip,
)


class ParameterSet:
    """Named flat collection of float64 parameter arrays with a trainable mask."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def trainable_items(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._tensors.items() if t.requires_grad]

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def set_all_trainable(self, flag: bool):
        for t in self._tensors.values():
            t.requires_grad = flag

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for n, t in self._tensors.items():
            if n not in state:
                raise DataFormatError(f"missing parameter {n!r} in state")
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise DataFormatError(f"shape mismatch for {n!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n, t in sorted(self._tensors.items()):
            h.update(n.encode("utf-8"))
            h.update(str(t.data.shape).encode("ascii"))
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


def _init_linear(ps: ParameterSet, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator):
    ps.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
    ps.add(f"{name}.b", np.zeros(fan_out))


def _linear(ps: ParameterSet, name: str, x: Tensor) -> Tensor:
    return x @ ps[f"{name}.w"] + ps[f"{name}.b"]


def _mlp(ps: ParameterSet, prefix: str, x: Tensor, num_layers: int) -> Tensor:
    # tanh on hidden layers, linear output
    for i in range(num_layers):
        x = _linear(ps, f"{prefix}.l{i}", x)
        if i < num_layers - 1:
            x = x.tanh()
    return x


def _init_mlp(ps: ParameterSet, prefix: str, dims: tuple[int, ...], rng: np.random.Generator):
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        _init_linear(ps, f"{prefix}.l{i}", a, b, rng)


# -- modality encoders ---------------------------------------------------------


class VideoEncoder:
    """Per-frame flatten -> MLP -> temporal mean pool -> L2 normalize.

    Each frame is standardized by removing its per-channel spatial mean before
    the stack; solid-color backgrounds would otherwise dominate every feature.
    The transform uses only the frame itself, so per-frame purity (and frame
    permutation invariance of the pooled embedding) is preserved.
    """

    def __init__(self, channels: int = 3, height: int = 32, width: int = 32,
                 hidden: tuple[int, ...] = (64, 64), d_out: int = 32, seed: int = 0):
        self.channels, self.height, self.width = channels, height, width
        self.d_out = d_out
        self.in_dim = channels * height * width
        self.dims = (self.in_dim, *hidden, d_out)
        self.ps = ParameterSet()
        rng = np.random.default_rng([seed, 0xF17])
        _init_mlp(self.ps, "stack", self.dims, rng)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def _check(self, frames: np.ndarray):
        if frames.shape[-3:] != (self.channels, self.height, self.width):
            raise ContractViolation(
                f"clip dims {frames.shape[-3:]} do not match encoder config "
                f"{(self.channels, self.height, self.width)}"
            )

    def _centered_flat(self, x: Tensor) -> Tensor:
        """(N, C, H, W) -> (N, C*H*W) with per-frame channel means removed."""
        n = x.shape[0]
        rows = x.reshape(n * self.channels, self.height * self.width)
        centered = rows - rows.mean(axis=1, keepdims=True)
        return centered.reshape(n, self.in_dim)

    def frame_features(self, frames) -> Tensor:
        """(T, D) per-frame features before pooling; `frames` may be a Tensor
        (for input-gradient saliency) or an ndarray."""
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
        self._check(x.data)
        return _mlp(self.ps, "stack", self._centered_flat(x), self.num_layers)

    def encode_batch(self, clips: np.ndarray) -> Tensor:
        """(B, T, C, H, W) -> (B, D) unit-norm rows."""
        clips = np.asarray(clips, dtype=np.float64)
        self._check(clips)
        B, T = clips.shape[0], clips.shape[1]
        x = Tensor(clips.reshape(B * T, self.channels, self.height, self.width))
        feats = _mlp(self.ps, "stack", self._centered_flat(x), self.num_layers)
        pooled = feats.reshape(B, T, self.d_out).mean(axis=1)
        return l2_normalize_rows(pooled)

    def encode_tensor(self, frames) -> Tensor:
        feats = self.frame_features(frames)
        pooled = feats.mean(axis=0).reshape(1, self.d_out)
        return l2_normalize_rows(pooled).reshape(self.d_out)


# indices into the 13-joint topology used for view normalization
_NECK, _PELVIS, _L_SHOULDER, _R_SHOULDER = 1, 2, 3, 6


def canonicalize_pose(frames: np.ndarray) -> np.ndarray:
    """Rotate each frame into its own body frame (shoulder line -> x axis,
    spine -> y axis). Uses only that frame's joints, so the transform is
    per-frame pure; it removes camera yaw/pitch up to sensor noise."""
    frames = np.asarray(frames, dtype=np.float64)
    flat = frames.reshape(-1, frames.shape[-2], 3)
    x = flat[:, _R_SHOULDER] - flat[:, _L_SHOULDER]  # (N, 3)
    up = flat[:, _NECK] - flat[:, _PELVIS]
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    ok = nx[:, 0] > 1e-9
    x = np.where(ok[:, None], x / np.where(nx > 0, nx, 1.0), x)
    y = up - (up * x).sum(axis=1, keepdims=True) * x
    ny = np.linalg.norm(y, axis=1, keepdims=True)
    ok &= ny[:, 0] > 1e-9
    y = np.where(ok[:, None], y / np.where(ny > 0, ny, 1.0), y)
    z = np.cross(x, y)
    basis = np.stack([x, y, z], axis=2)  # (N, 3, 3) columns are the body axes
    out = np.einsum("njk,nkl->njl", flat, basis)
    out[~ok] = flat[~ok]  # degenerate poses stay in camera coordinates
    return out.reshape(frames.shape)


class SkeletonEncoder:
    """Per-frame joint-coordinate MLP; the final linear layer is the designated
    penultimate feature layer (the classifier head sits on top of its mean).

    By default frames enter in raw camera coordinates, so viewpoint nuisance
    is present in both modalities; `canonicalize=True` switches to per-frame
    body-frame view normalization, which makes the skeleton modality nearly
    viewpoint-free (a much stronger teacher, useful for ablation)."""

    def __init__(self, num_joints: int = 13, hidden: tuple[int, ...] = (64, 64),
                 d_out: int = 32, seed: int = 0, canonicalize: bool = False):
        self.num_joints = num_joints
        self.d_out = d_out
        self.in_dim = num_joints * 3
        self.dims = (self.in_dim, *hidden, d_out)
        self.canonicalize = canonicalize and num_joints == 13
        self.ps = ParameterSet()
        rng = np.random.default_rng([seed, 0x5CE])
        _init_mlp(self.ps, "stack", self.dims, rng)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def _check(self, frames: np.ndarray):
        if frames.shape[-2:] != (self.num_joints, 3):
            raise ContractViolation(
                f"skeleton dims {frames.shape[-2:]} do not match encoder config "
                f"({self.num_joints}, 3)"
            )

    def _prep(self, frames: np.ndarray) -> np.ndarray:
        return canonicalize_pose(frames) if self.canonicalize else frames

    def frame_features(self, frames) -> Tensor:
        frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
        self._check(frames)
        x = Tensor(self._prep(frames))
        flat = x.reshape(x.shape[0], self.in_dim)
        return _mlp(self.ps, "stack", flat, self.num_layers)

    def pooled_features(self, frames) -> Tensor:
        """Temporal mean of penultimate features, without normalization."""
        return self.frame_features(frames).mean(axis=0)

    def encode_penultimate_batch(self, seqs: np.ndarray) -> Tensor:
        """(B, T, J, 3) -> (B, D) pooled penultimate features, unnormalized
        (classifier-head input)."""
        seqs = np.asarray(seqs, dtype=np.float64)
        self._check(seqs)
        B, T = seqs.shape[0], seqs.shape[1]
        flat = Tensor(self._prep(seqs).reshape(B * T, self.in_dim))
        feats = _mlp(self.ps, "stack", flat, self.num_layers)
        return feats.reshape(B, T, self.d_out).mean(axis=1)

    def encode_batch(self, seqs: np.ndarray) -> Tensor:
        seqs = np.asarray(seqs, dtype=np.float64)
        self._check(seqs)
        B, T = seqs.shape[0], seqs.shape[1]
        flat = Tensor(self._prep(seqs).reshape(B * T, self.in_dim))
        feats = _mlp(self.ps, "stack", flat, self.num_layers)
        pooled = feats.reshape(B, T, self.d_out).mean(axis=1)
        return l2_normalize_rows(pooled)


class TextEncoder:
    """Whitespace/lowercase tokenizer over a fixed vocabulary, a token
    embedding table with per-position affine mixing, mean pool, then an MLP."""

    MAX_TOKENS = 24

    def __init__(self, vocab: tuple[str, ...], d_emb: int = 32,
                 hidden: tuple[int, ...] = (64,), d_out: int = 32, seed: int = 0,
                 frozen: bool = False):
        self.vocab = tuple(vocab)
        self.token_to_id = {w: i for i, w in enumerate(self.vocab)}
        if len(self.token_to_id) != len(self.vocab):
            raise ContractViolation("vocabulary contains duplicate tokens")
        self.d_emb = d_emb
        self.d_out = d_out
        self.dims = (d_emb, *hidden, d_out)
        self.ps = ParameterSet()
        rng = np.random.default_rng([seed, 0x7E7])
        self.ps.add("emb", rng.normal(0.0, 1.0, size=(len(self.vocab), d_emb)))
        self.ps.add("pos_gain", 1.0 + 0.1 * rng.normal(0.0, 1.0, size=(self.MAX_TOKENS, d_emb)))
        self.ps.add("pos_bias", 0.1 * rng.normal(0.0, 1.0, size=(self.MAX_TOKENS, d_emb)))
        _init_mlp(self.ps, "stack", self.dims, rng)
        if frozen:
            self.ps.set_all_trainable(False)

    @property
    def frozen(self) -> bool:
        return not any(t.requires_grad for _, t in self.ps.items())

    def set_frozen(self, flag: bool):
        self.ps.set_all_trainable(not flag)

    def tokenize(self, text: str) -> list[int]:
        tokens = text.lower().split()
        if not tokens:
            raise ContractViolation("cannot encode empty text")
        if len(tokens) > self.MAX_TOKENS:
            raise ContractViolation(f"text longer than {self.MAX_TOKENS} tokens")
        ids = []
        for tok in tokens:
            if tok not in self.token_to_id:
                raise ContractViolation(f"token {tok!r} is not in the vocabulary")
            ids.append(self.token_to_id[tok])
        return ids

    def encode_tokens(self, ids: list[int]) -> Tensor:
        idx = np.asarray(ids, dtype=np.intp)
        e = self.ps["emb"][idx]  # (L, d_emb)
        g = self.ps["pos_gain"][: len(ids)]
        b = self.ps["pos_bias"][: len(ids)]
        mixed = (e * g + b).mean(axis=0).reshape(1, self.d_emb)
        out = _mlp(self.ps, "stack", mixed, len(self.dims) - 1)
        return l2_normalize_rows(out).reshape(self.d_out)

    def encode_batch(self, texts: list[str]) -> Tensor:
        """(C, D) unit-norm rows, one per text."""
        if not texts:
            raise ContractViolation("prompt set must be non-empty")
        rows = [self.encode_tokens(self.tokenize(t)).reshape(1, self.d_out) for t in texts]
        return concatenate(rows, axis=0)


class ClassifierHead:
    def __init__(self, d_in: int, num_classes: int, seed: int = 0):
        self.d_in = d_in
        self.num_classes = num_classes
        self.ps = ParameterSet()
        rng = np.random.default_rng([seed, 0xC1A])
        _init_linear(self.ps, "head", d_in, num_classes, rng)

    def logits(self, features: Tensor) -> Tensor:
        if features.shape[-1] != self.d_in:
            raise ContractViolation(f"head expects dim {self.d_in}, got {features.shape[-1]}")
        if features.ndim == 1:
            return (features.reshape(1, self.d_in) @ self.ps["head.w"] + self.ps["head.b"]).reshape(self.num_classes)
        return features @ self.ps["head.w"] + self.ps["head.b"]


# -- spec-level operations -------------------------------------------------------


def encode_video(f_v: VideoEncoder, clip: VideoClip) -> Embedding:
    vec = f_v.encode_batch(clip.frames[None]).data[0]
    return Embedding(vec, normalized=True)


def encode_skeleton(g_s: SkeletonEncoder, seq: SkeletonSequence) -> Embedding:
    vec = g_s.encode_batch(seq.frames[None]).data[0]
    return Embedding(vec, normalized=True)


def encode_text(t_enc: TextEncoder, prompt: TextPrompt) -> Embedding:
    vec = t_enc.encode_tokens(t_enc.tokenize(prompt.text)).data
    return Embedding(vec, normalized=True)


def classify_skeleton(head: ClassifierHead, g_s: SkeletonEncoder,
                      seq: SkeletonSequence) -> np.ndarray:
    return head.logits(g_s.pooled_features(seq.frames)).data


# -- dual-encoder inference artifact ----------------------------------------------


@dataclass
class DualEncoderModel:
    """A modality encoder paired with a text encoder in the shared space."""

    modality: str  # "video" | "skeleton"
    encoder: VideoEncoder | SkeletonEncoder
    text_encoder: TextEncoder

    def __post_init__(self):
        if self.modality not in ("video", "skeleton"):
            raise ContractViolation(f"unknown modality {self.modality!r}")

    def embed_sample(self, video: VideoClip | None = None,
                     skeleton: SkeletonSequence | None = None) -> np.ndarray:
        if self.modality == "video":
            if video is None:
                raise ContractViolation("video-modality model needs a clip")
            return self.encoder.encode_batch(video.frames[None]).data[0]
        if skeleton is None:
            raise ContractViolation("skeleton-modality model needs a skeleton")
        return self.encoder.encode_batch(skeleton.frames[None]).data[0]

    def text_matrix(self, prompts: list[TextPrompt]) -> tuple[np.ndarray, list[int]]:
        texts = [p.text for p in prompts]
        ids = [p.class_id for p in prompts]
        return self.text_encoder.encode_batch(texts).data, ids

    def parameter_sets(self) -> list[tuple[str, ParameterSet]]:
        return [(self.modality, self.encoder.ps), ("text", self.text_encoder.ps)]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for tag, ps in self.parameter_sets():
            h.update(tag.encode())
            h.update(ps.checksum().encode())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for tag, ps in self.parameter_sets():
            for n, a in ps.state().items():
                out[f"{tag}/{n}"] = a
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        for tag, ps in self.parameter_sets():
            sub = {n[len(tag) + 1:]: a for n, a in state.items() if n.startswith(tag + "/")}
            ps.load_state(sub)


# -- checkpoint container ----------------------------------------------------------
#
# Layout (little-endian):
#   magic     8 bytes  b"SKICKPT1"
#   version   u32
#   fingerprint  u32 length + UTF-8
#   config_text  u32 length + UTF-8   (flat key-value text to rebuild the model)
#   count     u32
#   per array: name (u32 len + UTF-8), ndim u32, dims u32*ndim, f64 data C-order

CKPT_MAGIC = b"SKICKPT1"
CKPT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], fingerprint: str = "",
                config_text: str = ""):
    chunks = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    for s in (fingerprint, config_text):
        raw = s.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path) -> tuple[dict[str, np.ndarray], str, str]:
    data = Path(path).read_bytes()
    if data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    pos = len(CKPT_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DataFormatError(f"{path}: truncated checkpoint")
        out = data[pos:pos + n]
        pos += n
        return out

    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    strings = []
    for _ in range(2):
        (n,) = struct.unpack("<I", take(4))
        strings.append(take(n).decode("utf-8"))
    fingerprint, config_text = strings
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(data):
        raise DataFormatError(f"{path}: trailing bytes in checkpoint")
    return arrays, fingerprint, config_text


def describe_checkpoint(path) -> list[tuple[str, tuple[int, ...], float]]:
    arrays, _, _ = load_arrays(path)
    return [(name, arr.shape, float(np.linalg.norm(arr))) for name, arr in arrays.items()]
