"""Training objectives: contrastive cross-entropy over class prompts, logit-
and feature-level distillation in several variants, alignment baselines, and
the autoregressive caption loss.

All losses consume autodiff tensors (or plain arrays, treated as constants)
and return a `LossValue` whose scalar equals the weighted sum of its recorded
components. Reductions are means unless stated otherwise, so magnitudes are
comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, log_softmax, l2_normalize_rows
from .core import ConfigError, ContractViolation, DegenerateInputError, LogitMatrix

DISTILL_KINDS = ("mse", "kl", "contrastive")
KD_MODES = ("online", "offline", "feature_no_proj", "feature_proj")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    alpha: float = 10.0
    distill_kind: str = "mse"
    kd_mode: str = "online"
    distill_tau: float = 1.0  # used by the kl / contrastive distillation variants
    scale_distill_logits: bool = False  # divide similarity matrices by tau before L_D
    stop_teacher_grad: bool = False  # block distillation gradients into the skeleton side

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if self.distill_kind not in DISTILL_KINDS:
            raise ConfigError(f"distill_kind must be one of {DISTILL_KINDS}, got {self.distill_kind!r}")
        if self.kd_mode not in KD_MODES:
            raise ConfigError(f"kd_mode must be one of {KD_MODES}, got {self.kd_mode!r}")
        if self.distill_tau <= 0.0:
            raise ConfigError(f"distill_tau must be positive, got {self.distill_tau}")


@dataclass
class LossValue:
    value: Tensor  # scalar graph node
    components: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    @property
    def scalar(self) -> float:
        return float(self.value.data)

    def weighted_sum(self) -> float:
        return sum(self.weights.get(k, 1.0) * v for k, v in self.components.items())


def _single(value: Tensor, name: str) -> LossValue:
    return LossValue(value=value, components={name: float(value.data)}, weights={name: 1.0})


def _as_matrix(x, name: str) -> Tensor:
    if isinstance(x, LogitMatrix):
        x = Tensor(x.values)
    t = as_tensor(x)
    if t.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {t.shape}")
    return t


def _check_aligned(a, b):
    if isinstance(a, LogitMatrix) and isinstance(b, LogitMatrix):
        if a.row_ids != b.row_ids or a.col_ids != b.col_ids:
            raise ContractViolation("logit matrices carry misaligned row/col ids")


def _require_unit_rows(t: Tensor, name: str):
    norms = np.linalg.norm(t.data, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ContractViolation(f"{name} rows must be unit-norm")


def language_contextualized(z_mod: Tensor, z_text: Tensor) -> Tensor:
    """B x C cosine-similarity matrix between sample and class-text embeddings."""
    _require_unit_rows(z_mod, "modality batch")
    _require_unit_rows(z_text, "text batch")
    return z_mod @ z_text.T


# -- classification-style contrastive loss ------------------------------------


def contrastive_ce(z_mod, z_text, targets, tau: float) -> LossValue:
    """Mean cross-entropy of each sample against all class prompts.

    The denominator runs over every class prompt for the sample's row, i.e.
    the standard softmax-classification form of the alignment objective.
    """
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    z_mod = as_tensor(z_mod)
    z_text = as_tensor(z_text)
    targets = np.asarray(targets, dtype=np.intp)
    sims = language_contextualized(z_mod, z_text)
    B, C = sims.shape
    if targets.shape != (B,):
        raise ContractViolation(f"targets must have shape ({B},), got {targets.shape}")
    if targets.min() < 0 or targets.max() >= C:
        raise ContractViolation("target index out of range")
    logp = log_softmax(sims * (1.0 / tau), axis=-1)
    picked = logp[np.arange(B), targets]
    loss = -picked.mean()
    return _single(loss, "contrastive_ce")


# -- distillation losses --------------------------------------------------------


def distill_mse(f_lv, f_ls) -> LossValue:
    """Mean squared difference over all entries of the two similarity matrices."""
    _check_aligned(f_lv, f_ls)
    a = _as_matrix(f_lv, "F_LV")
    b = _as_matrix(f_ls, "F_LS")
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return _single((d * d).mean(), "distill_mse")


def distill_kl(f_lv, f_ls, distill_tau: float = 1.0) -> LossValue:
    """Row-wise KL from the skeleton-side (reference) rows to the video-side rows."""
    if distill_tau <= 0.0:
        raise ConfigError(f"distill_tau must be positive, got {distill_tau}")
    _check_aligned(f_lv, f_ls)
    student = _as_matrix(f_lv, "F_LV")
    teacher = _as_matrix(f_ls, "F_LS")
    if student.shape != teacher.shape:
        raise ContractViolation(f"shape mismatch: {student.shape} vs {teacher.shape}")
    inv = 1.0 / distill_tau
    log_p = log_softmax(teacher * inv, axis=-1)
    log_q = log_softmax(student * inv, axis=-1)
    p = log_p.exp()
    kl_rows = (p * (log_p - log_q)).sum(axis=-1)
    return _single(kl_rows.mean(), "distill_kl")


def symmetric_infonce(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """InfoNCE with matched rows as positives, averaged over both directions.

    Inputs must already have unit-norm rows; callers normalize because the
    degenerate-row policy differs per call site.
    """
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    B = a.shape[0]
    if B < 2:
        raise ContractViolation("InfoNCE needs a batch of at least 2 (no negatives otherwise)")
    if a.shape != b.shape:
        raise ContractViolation(f"batch shapes differ: {a.shape} vs {b.shape}")
    logits = (a @ b.T) * (1.0 / tau)
    idx = np.arange(B)
    fwd = -log_softmax(logits, axis=-1)[idx, idx].mean()
    bwd = -log_softmax(logits.T, axis=-1)[idx, idx].mean()
    return (fwd + bwd) * 0.5


def _normalized_rows_checked(t: Tensor, name: str) -> Tensor:
    norms = np.linalg.norm(t.data, axis=-1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"{name} contains an all-zero row")
    return l2_normalize_rows(t)


def distill_contrastive(f_lv, f_ls, distill_tau: float = 1.0) -> LossValue:
    """Symmetric InfoNCE over the row vectors of the two similarity matrices:
    matched rows are positives, other rows in the batch are negatives."""
    _check_aligned(f_lv, f_ls)
    a = _as_matrix(f_lv, "F_LV")
    b = _as_matrix(f_ls, "F_LS")
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch: {a.shape} vs {b.shape}")
    loss = symmetric_infonce(
        _normalized_rows_checked(a, "F_LV"),
        _normalized_rows_checked(b, "F_LS"),
        distill_tau,
    )
    return _single(loss, "distill_contrastive")


def feature_kd(z_v, z_s, projection: Tensor | None = None) -> LossValue:
    """MSE between video embeddings and (optionally projected) skeleton embeddings."""
    z_v = as_tensor(z_v)
    z_s = as_tensor(z_s)
    if projection is None:
        if z_v.shape != z_s.shape:
            raise ContractViolation(
                f"feature KD without projection needs matching dims, got {z_v.shape} vs {z_s.shape}"
            )
        target = z_s
    else:
        projection = as_tensor(projection)
        if projection.shape != (z_s.shape[1], z_v.shape[1]):
            raise ContractViolation(
                f"projection must map {z_s.shape[1]} -> {z_v.shape[1]}, got {projection.shape}"
            )
        target = z_s @ projection
    d = z_v - target
    return _single((d * d).mean(), "feature_kd")


def scd_total(ce_video: LossValue, ce_skeleton: LossValue, distill: LossValue,
              alpha: float) -> LossValue:
    """Joint objective: both alignment cross-entropies plus weighted distillation."""
    if alpha < 0.0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    for lv in (ce_video, ce_skeleton, distill):
        if not np.isfinite(lv.scalar):
            raise DegenerateInputError("scd_total requires finite component losses")
    value = ce_video.value + ce_skeleton.value + alpha * distill.value
    return LossValue(
        value=value,
        components={
            "ce_video": ce_video.scalar,
            "ce_skeleton": ce_skeleton.scalar,
            "distill": distill.scalar,
        },
        weights={"ce_video": 1.0, "ce_skeleton": 1.0, "distill": alpha},
    )


# -- alignment baselines -----------------------------------------------------------


def trimodal_contrastive(z_v, z_s, z_t, tau: float) -> LossValue:
    """Sum of symmetric InfoNCE over the (video,text), (skeleton,text) and
    (video,skeleton) pairs of an aligned batch."""
    z_v, z_s, z_t = as_tensor(z_v), as_tensor(z_s), as_tensor(z_t)
    for name, z in (("video", z_v), ("skeleton", z_s), ("text", z_t)):
        _require_unit_rows(z, f"{name} batch")
    vt = symmetric_infonce(z_v, z_t, tau)
    st = symmetric_infonce(z_s, z_t, tau)
    vs = symmetric_infonce(z_v, z_s, tau)
    return LossValue(
        value=vt + st + vs,
        components={"video_text": float(vt.data), "skeleton_text": float(st.data),
                    "video_skeleton": float(vs.data)},
        weights={"video_text": 1.0, "skeleton_text": 1.0, "video_skeleton": 1.0},
    )


def crossproj_align(z_s, z_v_frozen, tau: float) -> LossValue:
    """Symmetric InfoNCE pulling skeleton embeddings onto matched embeddings
    from a frozen video encoder. The frozen side must not require gradients."""
    z_s = as_tensor(z_s)
    z_v = as_tensor(z_v_frozen)
    if z_v.requires_grad:
        raise ContractViolation("cross-projection target must come from a frozen encoder")
    _require_unit_rows(z_s, "skeleton batch")
    _require_unit_rows(z_v, "frozen video batch")
    return _single(symmetric_infonce(z_s, z_v, tau), "crossproj_align")


# -- autoregressive language-model loss ----------------------------------------------


def autoregressive_lm_loss(logit_sequence, target_tokens, response_mask) -> LossValue:
    """Mean negative log-likelihood of target tokens at masked positions."""
    logits = as_tensor(logit_sequence)
    if logits.ndim != 2:
        raise ContractViolation(f"logit sequence must be (L, V), got {logits.shape}")
    targets = np.asarray(target_tokens, dtype=np.intp)
    mask = np.asarray(response_mask, dtype=bool)
    L, V = logits.shape
    if targets.shape != (L,) or mask.shape != (L,):
        raise ContractViolation("targets and mask must match sequence length")
    if not mask.any():
        raise ContractViolation("response mask selects no positions")
    if targets[mask].min() < 0 or targets[mask].max() >= V:
        raise ContractViolation("target token id out of vocabulary range")
    positions = np.flatnonzero(mask)
    logp = log_softmax(logits, axis=-1)
    picked = logp[positions, targets[positions]]
    return _single(-picked.mean(), "lm_nll")
