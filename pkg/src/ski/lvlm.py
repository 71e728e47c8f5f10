"""Toy LVLM: visual and skeleton projectors into a frozen causal language
model, prompt-template assembly, projector-only training, and skeleton-free
greedy captioning.

The language model is a small strictly-causal transformer with deterministic
random weights, frozen at construction. It is never trained: the projectors
learn to steer its conditional likelihood, which is all the caption objective
needs at desk scale.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concatenate, softmax
from .core import ConfigError, ContractViolation, VideoClip
from .encoders import ParameterSet, SkeletonEncoder, VideoEncoder
from .losses import LossValue, autoregressive_lm_loss
from .synthdata import SplitSpec, grammar_vocabulary
from .training import (
    Optimizer,
    RunRecord,
    TrainConfig,
    TrainData,
    class_balanced_batches,
    guard_seen_only,
    _phase_rng,
)

USER_TOKEN = "user:"
ASSISTANT_TOKEN = "assistant:"
EOS_TOKEN = "<eos>"
DEFAULT_QUERY = "describe the action in this video"

_EXTRA_WORDS = (
    USER_TOKEN, ASSISTANT_TOKEN, EOS_TOKEN,
    "describe", "action", "this", "video", "what", "is", "doing", "happening",
)


def lm_vocabulary() -> tuple[str, ...]:
    """Caption grammar plus template/query words and the end token."""
    return tuple(sorted(set(grammar_vocabulary()) | set(_EXTRA_WORDS)))


@dataclass(frozen=True)
class ToyLMConfig:
    width: int = 64  # model width K; also the projector target dim
    num_layers: int = 2
    num_heads: int = 2
    mlp_mult: int = 2
    max_len: int = 96
    seed: int = 0

    def __post_init__(self):
        if self.width % self.num_heads != 0:
            raise ConfigError("width must be divisible by num_heads")


@dataclass(frozen=True)
class TokenBlock:
    """A run of continuous K-dimensional tokens with a modality tag."""

    values: Tensor  # (n, K)
    modality: str  # text | visual | skeleton

    def __post_init__(self):
        if self.modality not in ("text", "visual", "skeleton"):
            raise ContractViolation(f"unknown token modality {self.modality!r}")
        if not np.all(np.isfinite(self.values.data)):
            raise ContractViolation("token block contains non-finite entries")

    @property
    def length(self) -> int:
        return self.values.shape[0]


class ToyCausalLM:
    """Frozen 2-layer causal transformer over the grammar vocabulary."""

    def __init__(self, vocab: tuple[str, ...] | None = None,
                 config: ToyLMConfig = ToyLMConfig()):
        self.vocab = lm_vocabulary() if vocab is None else tuple(vocab)
        self.token_to_id = {w: i for i, w in enumerate(self.vocab)}
        self.config = config
        self.eos_id = self.token_to_id[EOS_TOKEN]
        K = config.width
        rng = np.random.default_rng([config.seed, 0x70F])
        ps = ParameterSet()
        ps.add("emb", rng.normal(0.0, 1.0, size=(len(self.vocab), K)))
        ps.add("pos", rng.normal(0.0, 0.5, size=(config.max_len, K)))
        for layer in range(config.num_layers):
            p = f"l{layer}"
            ps.add(f"{p}.ln1.g", np.ones(K))
            ps.add(f"{p}.ln1.b", np.zeros(K))
            for name in ("wq", "wk", "wv", "wo"):
                ps.add(f"{p}.attn.{name}", rng.normal(0.0, 1.0 / np.sqrt(K), size=(K, K)))
            ps.add(f"{p}.ln2.g", np.ones(K))
            ps.add(f"{p}.ln2.b", np.zeros(K))
            ps.add(f"{p}.mlp.w1", rng.normal(0.0, 1.0 / np.sqrt(K), size=(K, K * config.mlp_mult)))
            ps.add(f"{p}.mlp.b1", np.zeros(K * config.mlp_mult))
            ps.add(f"{p}.mlp.w2", rng.normal(0.0, 1.0 / np.sqrt(K * config.mlp_mult),
                                             size=(K * config.mlp_mult, K)))
            ps.add(f"{p}.mlp.b2", np.zeros(K))
        ps.add("lnf.g", np.ones(K))
        ps.add("lnf.b", np.zeros(K))
        ps.add("unemb", rng.normal(0.0, 1.0 / np.sqrt(K), size=(K, len(self.vocab))))
        ps.set_all_trainable(False)  # frozen for the lifetime of the model
        self.ps = ps

    # -- vocabulary ------------------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for tok in text.lower().split():
            if tok not in self.token_to_id:
                raise ContractViolation(f"token {tok!r} is not in the LM vocabulary")
            ids.append(self.token_to_id[tok])
        return ids

    def detokenize(self, ids: list[int]) -> str:
        return " ".join(self.vocab[i] for i in ids)

    def embed_tokens(self, ids: list[int]) -> Tensor:
        return self.ps["emb"][np.asarray(ids, dtype=np.intp)]

    # -- forward ----------------------------------------------------------------

    def _layernorm(self, x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc * ((var + 1e-6) ** -0.5) * gain + bias

    def _attention(self, x: Tensor, layer: str, L: int) -> Tensor:
        K = self.config.width
        heads = self.config.num_heads
        dh = K // heads
        q = x @ self.ps[f"{layer}.attn.wq"]
        k = x @ self.ps[f"{layer}.attn.wk"]
        v = x @ self.ps[f"{layer}.attn.wv"]
        mask = np.triu(np.full((L, L), -1e9), k=1)  # exact zero weight after exp
        outs = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = (q[:, sl] @ k[:, sl].T) * (1.0 / np.sqrt(dh)) + Tensor(mask)
            outs.append(softmax(scores, axis=-1) @ v[:, sl])
        return concatenate(outs, axis=1) @ self.ps[f"{layer}.attn.wo"]

    def forward(self, token_vectors: Tensor) -> Tensor:
        """(L, K) continuous token sequence -> (L, V) next-token logits."""
        L = token_vectors.shape[0]
        if L > self.config.max_len:
            raise ContractViolation(f"sequence length {L} exceeds max_len {self.config.max_len}")
        if token_vectors.shape[1] != self.config.width:
            raise ContractViolation("token width does not match LM width")
        x = token_vectors + self.ps["pos"][np.arange(L)]
        for layer in range(self.config.num_layers):
            p = f"l{layer}"
            x = x + self._attention(self._layernorm(x, self.ps[f"{p}.ln1.g"], self.ps[f"{p}.ln1.b"]), p, L)
            h = self._layernorm(x, self.ps[f"{p}.ln2.g"], self.ps[f"{p}.ln2.b"])
            h = (h @ self.ps[f"{p}.mlp.w1"] + self.ps[f"{p}.mlp.b1"]).tanh()
            x = x + h @ self.ps[f"{p}.mlp.w2"] + self.ps[f"{p}.mlp.b2"]
        x = self._layernorm(x, self.ps["lnf.g"], self.ps["lnf.b"])
        return x @ self.ps["unemb"]

    def checksum(self) -> str:
        return self.ps.checksum()


# -- projectors ----------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectorConfig:
    d_source: int  # per-token source dim
    num_tokens: int
    K: int  # LM width; projector target dim

    def __post_init__(self):
        for name in ("d_source", "num_tokens", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


class Projector:
    """Per-token linear map from a modality feature space into the LM width."""

    def __init__(self, config: ProjectorConfig, seed: int = 0, tag: str = "proj"):
        self.config = config
        self.d_source = config.d_source
        self.K = config.K
        self.ps = ParameterSet()
        rng = np.random.default_rng([seed, zlib.crc32(tag.encode())])
        self.ps.add("w", rng.normal(0.0, 1.0 / np.sqrt(config.d_source),
                                    size=(config.d_source, config.K)))
        self.ps.add("b", np.zeros(config.K))

    def project(self, tokens, modality: str) -> TokenBlock:
        t = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=np.float64))
        if t.ndim != 2 or t.shape[1] != self.d_source:
            raise ContractViolation(
                f"projector expects (n, {self.d_source}) tokens, got {t.shape}"
            )
        return TokenBlock(values=t @ self.ps["w"] + self.ps["b"], modality=modality)


def project(projector: Projector, tokens, modality: str = "visual") -> TokenBlock:
    return projector.project(tokens, modality)


# -- token extraction -------------------------------------------------------------------


def _require_frozen(ps: ParameterSet, what: str):
    if any(t.requires_grad for _, t in ps.items()):
        raise ContractViolation(f"{what} must be frozen for LVLM use")


def extract_visual_tokens(f_v: VideoEncoder, clip: VideoClip) -> Tensor:
    """Per-frame (pre-pooling) features of the frozen video encoder; one token
    per frame."""
    _require_frozen(f_v.ps, "video encoder")
    return f_v.frame_features(clip.frames)


def extract_skeleton_tokens(g_s: SkeletonEncoder, frames: np.ndarray) -> Tensor:
    """Per-frame penultimate features of the trained, frozen skeleton encoder."""
    _require_frozen(g_s.ps, "skeleton encoder")
    return g_s.frame_features(frames)


# -- template assembly --------------------------------------------------------------------


@dataclass
class PromptLayout:
    sequence: Tensor  # (L, K)
    spans: list[tuple[str, int, int]]  # (tag, start, end) half-open, contiguous

    @property
    def length(self) -> int:
        return self.sequence.shape[0]


def assemble_prompt(lm: ToyCausalLM, q_text: TokenBlock, q_visual: TokenBlock,
                    q_skeleton: TokenBlock | None = None) -> PromptLayout:
    """[USER:] <query> <visual tokens> [<skeleton tokens>] [Assistant:]"""
    blocks: list[tuple[str, Tensor]] = [
        ("user", lm.embed_tokens([lm.token_to_id[USER_TOKEN]])),
        ("query", q_text.values),
        ("visual", q_visual.values),
    ]
    if q_skeleton is not None:
        blocks.append(("skeleton", q_skeleton.values))
    blocks.append(("assistant", lm.embed_tokens([lm.token_to_id[ASSISTANT_TOKEN]])))
    spans = []
    start = 0
    for tag, values in blocks:
        spans.append((tag, start, start + values.shape[0]))
        start += values.shape[0]
    return PromptLayout(sequence=concatenate([v for _, v in blocks], axis=0), spans=spans)


# -- projector training ------------------------------------------------------------------


def _caption_loss(lm: ToyCausalLM, layout: PromptLayout, caption_ids: list[int]) -> LossValue:
    """Teacher-forced NLL of the caption (plus EOS) after the prompt."""
    full_ids = caption_ids + [lm.eos_id]
    inputs = concatenate([layout.sequence, lm.embed_tokens(full_ids[:-1])], axis=0)
    L = inputs.shape[0]
    targets = np.zeros(L, dtype=np.intp)
    mask = np.zeros(L, dtype=bool)
    start = layout.length - 1  # position predicting the first caption token
    targets[start:start + len(full_ids)] = full_ids
    mask[start:start + len(full_ids)] = True
    logits = lm.forward(inputs)
    return autoregressive_lm_loss(logits, targets, mask)


def _sample_layout(lm: ToyCausalLM, f_v: VideoEncoder, g_s: SkeletonEncoder,
                   proj_v: Projector, proj_s: Projector | None,
                   data: TrainData, i: int, query_ids: list[int]) -> PromptLayout:
    q_text = TokenBlock(values=lm.embed_tokens(query_ids), modality="text")
    vis = proj_v.project(extract_visual_tokens(f_v, VideoClip(frames=data.videos[i],
                                                              class_id=int(data.class_ids[i]))),
                         "visual")
    skel = None
    if proj_s is not None:
        skel = proj_s.project(extract_skeleton_tokens(g_s, data.skeletons[i]), "skeleton")
    return assemble_prompt(lm, q_text, vis, skel)


def train_projectors(lm: ToyCausalLM, f_v: VideoEncoder, g_s: SkeletonEncoder,
                     data: TrainData, split: SplitSpec, cfg: TrainConfig,
                     use_skeleton: bool, epochs: int, query: str = DEFAULT_QUERY,
                     record: RunRecord | None = None,
                     ) -> tuple[Projector, Projector | None]:
    """Train the visual (and optionally skeleton) projector against the
    frozen LM; every other parameter set must stay byte-identical."""
    guard_seen_only(data, split)
    _require_frozen(lm.ps, "toy LM")
    _require_frozen(f_v.ps, "video encoder")
    _require_frozen(g_s.ps, "skeleton encoder")
    before = (lm.checksum(), f_v.ps.checksum(), g_s.ps.checksum())

    proj_v = Projector(ProjectorConfig(f_v.d_out, data.videos.shape[1], lm.config.width),
                       seed=cfg.seed, tag="proj_v")
    proj_s = None
    if use_skeleton:
        proj_s = Projector(ProjectorConfig(g_s.d_out, data.skeletons.shape[1], lm.config.width),
                           seed=cfg.seed, tag="proj_s")
    named = [(f"proj_v.{n}", t) for n, t in proj_v.ps.items()]
    if proj_s is not None:
        named += [(f"proj_s.{n}", t) for n, t in proj_s.ps.items()]
    opt = Optimizer(named, lr=cfg.learning_rate, momentum=cfg.momentum,
                    schedule=cfg.lr_schedule, total_epochs=epochs, kind=cfg.optimizer)

    query_ids = lm.tokenize(query)
    caption_ids = [lm.tokenize(c) for c in data.captions]
    for epoch in range(epochs):
        opt.set_epoch(epoch)
        rng = _phase_rng(cfg.seed, "lvlm", epoch)
        total, count = 0.0, 0
        for batch in class_balanced_batches(data.class_ids, cfg.batch_size, rng):
            opt.zero_grad()
            batch_loss = 0.0
            for i in batch:
                layout = _sample_layout(lm, f_v, g_s, proj_v, proj_s, data, i, query_ids)
                loss = _caption_loss(lm, layout, caption_ids[i])
                (loss.value * (1.0 / len(batch))).backward()
                batch_loss += loss.scalar / len(batch)
            opt.step()
            total += batch_loss * len(batch)
            count += len(batch)
        if record is not None:
            record.log("lvlm", epoch, nll=total / count)

    after = (lm.checksum(), f_v.ps.checksum(), g_s.ps.checksum())
    if before != after:
        raise ContractViolation("a frozen component drifted during projector training")
    return proj_v, proj_s


def evaluate_nll(lm: ToyCausalLM, f_v: VideoEncoder, g_s: SkeletonEncoder,
                 proj_v: Projector, proj_s: Projector | None,
                 data: TrainData, query: str = DEFAULT_QUERY) -> tuple[float, float]:
    """Mean teacher-forced NLL and next-token exact-match accuracy over a
    dataset's captions."""
    query_ids = lm.tokenize(query)
    total_nll, total_hits, total_tokens = 0.0, 0, 0
    for i in range(data.size):
        layout = _sample_layout(lm, f_v, g_s, proj_v, proj_s, data, i, query_ids)
        caption_ids = lm.tokenize(data.captions[i]) + [lm.eos_id]
        inputs = concatenate([layout.sequence, lm.embed_tokens(caption_ids[:-1])], axis=0)
        logits = lm.forward(inputs).data
        start = layout.length - 1
        rows = logits[start:start + len(caption_ids)]
        shifted = rows - rows.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        ids = np.asarray(caption_ids)
        total_nll += float(-logp[np.arange(len(ids)), ids].sum())
        total_hits += int((rows.argmax(axis=-1) == ids).sum())
        total_tokens += len(ids)
    return total_nll / total_tokens, total_hits / total_tokens


# -- generation -------------------------------------------------------------------------


def generate_caption(lm: ToyCausalLM, proj_v: Projector, f_v: VideoEncoder,
                     clip: VideoClip, query: str = DEFAULT_QUERY,
                     max_len: int = 16) -> str:
    """Greedy decoding from the skeleton-free prompt. This interface accepts
    no skeleton input: inference never touches skeleton components."""
    if max_len < 1:
        raise ContractViolation("max_len must be >= 1")
    q_text = TokenBlock(values=lm.embed_tokens(lm.tokenize(query)), modality="text")
    vis = proj_v.project(extract_visual_tokens(f_v, clip), "visual")
    layout = assemble_prompt(lm, q_text, vis, None)
    sequence = layout.sequence
    out_ids: list[int] = []
    for _ in range(max_len):
        logits = lm.forward(sequence).data[-1]
        next_id = int(np.argmax(logits))  # ties resolve to the lowest id
        if next_id == lm.eos_id:
            break
        out_ids.append(next_id)
        sequence = concatenate([sequence, lm.embed_tokens([next_id])], axis=0)
    return lm.detokenize(out_ids)
