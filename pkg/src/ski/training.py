"""Training procedures: skeleton pretraining, dual-encoder alignment, video
fine-tuning, the joint distillation phase in its four KD modes, and the two
alignment baselines.

Reproducibility rules: every random draw derives from (seed, phase, epoch);
batch reduction order is fixed; frozen parameters are never touched by the
optimizer and never receive gradients. A run with a fixed seed and config is
bit-reproducible end to end.
"""

from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, log_softmax
from .configfile import flatten_dataclass, fingerprint
from .core import ConfigError, ContractViolation, DegenerateInputError, TextPrompt
from .encoders import (
    ClassifierHead,
    DualEncoderModel,
    SkeletonEncoder,
    TextEncoder,
    VideoEncoder,
)
from .losses import (
    LossConfig,
    LossValue,
    contrastive_ce,
    crossproj_align,
    distill_contrastive,
    distill_kl,
    distill_mse,
    feature_kd,
    language_contextualized,
    scd_total,
    trimodal_contrastive,
)
from .synthdata import SplitSpec, Triplet, grammar_vocabulary

BASELINE_KINDS = ("trimodal", "crossproj")


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 120
    align_epochs: int = 80
    finetune_epochs: int = 120
    scd_epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 0.005
    lr_schedule: str = "cosine"  # constant | cosine
    optimizer: str = "adam"  # adam | sgd; adam is far better conditioned at this scale
    momentum: float = 0.9  # used by the sgd kind
    seed: int = 0
    loss: LossConfig = LossConfig()
    freeze_skeleton_text: bool = True
    freeze_video_text: bool = True
    pretrain_skeletonclip: bool = True
    pretrain_videoclip: bool = True
    lvlm_epochs: int = 15
    lvlm_use_skeleton: bool = True
    lvlm_holdout_per_class: int = 8  # seen-class samples held out for caption NLL

    def __post_init__(self):
        for name in ("pretrain_epochs", "align_epochs", "finetune_epochs", "scd_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (contrastive objectives need negatives)")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0,1), got {self.momentum}")

    def fingerprint(self) -> str:
        return fingerprint(flatten_dataclass(self, prefix="train."))


# -- run records -----------------------------------------------------------------


@dataclass
class RunRecord:
    """Append-only per-epoch log plus final metrics. Wall-clock time is kept
    in memory only; the serialized record stays byte-stable across reruns."""

    name: str
    seed: int
    fingerprint: str = ""
    rows: list[dict] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def log(self, phase: str, epoch: int, **fields: float):
        row = {"phase": phase, "epoch": epoch}
        row.update({k: float(v) for k, v in fields.items()})
        self.rows.append(row)


def record_to_text(record: RunRecord) -> str:
    lines = [f"# run name={record.name} seed={record.seed} fingerprint={record.fingerprint}"]
    for row in record.rows:
        parts = [f"phase={row['phase']}", f"epoch={row['epoch']}"]
        parts += [f"{k}={row[k]!r}" for k in row if k not in ("phase", "epoch")]
        lines.append(" ".join(parts))
    for key in record.metrics:
        lines.append(f"metric {key}={record.metrics[key]!r}")
    return "\n".join(lines) + "\n"


def record_from_text(text: str) -> RunRecord:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# run "):
        raise ContractViolation("not a run record: missing header line")
    header = dict(kv.split("=", 1) for kv in lines[0][len("# run "):].split())
    record = RunRecord(name=header["name"], seed=int(header["seed"]),
                       fingerprint=header.get("fingerprint", ""))
    for line in lines[1:]:
        if line.startswith("metric "):
            key, value = line[len("metric "):].split("=", 1)
            record.metrics[key] = float(value)
            continue
        fields = dict(kv.split("=", 1) for kv in line.split())
        record.rows.append(
            {"phase": fields.pop("phase"), "epoch": int(fields.pop("epoch")),
             **{k: float(v) for k, v in fields.items()}}
        )
    return record


# -- optimizer ----------------------------------------------------------------------


def lr_factor(schedule: str, progress: float) -> float:
    """Learning-rate multiplier at `progress` in [0,1]."""
    if schedule == "constant":
        return 1.0
    if schedule == "cosine":
        return 0.5 * (1.0 + np.cos(np.pi * min(max(progress, 0.0), 1.0)))
    raise ConfigError(f"unknown lr schedule {schedule!r}")


class Optimizer:
    """SGD-with-momentum or Adam over named parameter tensors. Iteration order
    is the construction order, which keeps runs bit-reproducible."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float,
                 momentum: float = 0.9, schedule: str = "constant", total_epochs: int = 1,
                 kind: str = "adam"):
        if kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {kind!r}")
        self.named_params = [(n, t) for n, t in named_params if t.requires_grad]
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.schedule = schedule
        self.total_epochs = max(total_epochs, 1)
        self.velocity = {n: np.zeros_like(t.data) for n, t in self.named_params}
        self.second = {n: np.zeros_like(t.data) for n, t in self.named_params}
        self.steps = 0
        self._factor = 1.0

    def set_epoch(self, epoch: int):
        self._factor = lr_factor(self.schedule, epoch / self.total_epochs)

    def zero_grad(self):
        for _, t in self.named_params:
            t.zero_grad()

    def step(self):
        lr = self.lr * self._factor
        self.steps += 1
        for name, t in self.named_params:
            if t.grad is None:
                continue
            g = t.grad
            if not np.all(np.isfinite(g)):
                raise DegenerateInputError(f"non-finite gradient for parameter {name!r}")
            if self.kind == "sgd":
                v = self.velocity[name]
                v *= self.momentum
                v += g
                t.data = t.data - lr * v
            else:
                m = self.velocity[name]
                v = self.second[name]
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                m_hat = m / (1.0 - 0.9**self.steps)
                v_hat = v / (1.0 - 0.999**self.steps)
                t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def step_optimizer(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   cfg: TrainConfig, epoch: int, total_epochs: int,
                   velocity: dict[str, np.ndarray] | None = None,
                   ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Functional single update over plain arrays (same rule as `SGD`)."""
    velocity = {n: np.zeros_like(a) for n, a in params.items()} if velocity is None else velocity
    factor = lr_factor(cfg.lr_schedule, epoch / max(total_epochs, 1))
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise DegenerateInputError(f"non-finite gradient for parameter {name!r}")
        v = cfg.momentum * velocity[name] + g
        velocity[name] = v
        out[name] = p - cfg.learning_rate * factor * v
    return out, velocity


# -- data plumbing --------------------------------------------------------------------


@dataclass
class TrainData:
    videos: np.ndarray  # (N, T_v, C, H, W)
    skeletons: np.ndarray  # (N, T_s, J, 3)
    class_ids: np.ndarray  # (N,)
    captions: list[str]
    prompts: list[TextPrompt]  # one per class present, sorted by class_id

    @property
    def size(self) -> int:
        return len(self.class_ids)

    @property
    def prompt_texts(self) -> list[str]:
        return [p.text for p in self.prompts]

    @property
    def prompt_class_ids(self) -> list[int]:
        return [p.class_id for p in self.prompts]

    def local_targets(self) -> np.ndarray:
        index = {cid: i for i, cid in enumerate(self.prompt_class_ids)}
        return np.array([index[c] for c in self.class_ids], dtype=np.intp)


def make_train_data(triplets: list[Triplet]) -> TrainData:
    if not triplets:
        raise ContractViolation("empty triplet list")
    prompts: dict[int, TextPrompt] = {}
    for t in triplets:
        prompts.setdefault(t.class_id, t.prompt)
    return TrainData(
        videos=np.stack([t.video.frames for t in triplets]),
        skeletons=np.stack([t.skeleton.frames for t in triplets]),
        class_ids=np.array([t.class_id for t in triplets], dtype=np.intp),
        captions=[t.caption for t in triplets],
        prompts=[prompts[c] for c in sorted(prompts)],
    )


def seen_subset(triplets: list[Triplet], split: SplitSpec) -> list[Triplet]:
    return [t for t in triplets if t.class_id in split.seen_class_ids]


def guard_seen_only(data: TrainData, split: SplitSpec):
    """Split-leakage guard: training must never visit an unseen-class sample."""
    bad = sorted(set(int(c) for c in data.class_ids) & set(split.unseen_class_ids))
    if bad:
        raise ContractViolation(f"unseen classes {bad} present in training data")


def _phase_rng(seed: int, phase: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(phase.encode()), epoch])


def class_balanced_batches(class_ids: np.ndarray, batch_size: int,
                           rng: np.random.Generator) -> list[np.ndarray]:
    """Interleave per-class shuffled sample streams, then chunk. Every batch
    mixes classes as evenly as the counts allow; tail batches of size < 2 are
    dropped (contrastive terms need negatives)."""
    classes = sorted(set(int(c) for c in class_ids))
    order = [classes[i] for i in rng.permutation(len(classes))]
    streams = {c: rng.permutation(np.flatnonzero(class_ids == c)) for c in order}
    depth = max(len(s) for s in streams.values())
    interleaved = [int(streams[c][k]) for k in range(depth) for c in order if k < len(streams[c])]
    batches = [np.array(interleaved[i:i + batch_size], dtype=np.intp)
               for i in range(0, len(interleaved), batch_size)]
    return [b for b in batches if len(b) >= 2]


# -- model factories ---------------------------------------------------------------


def default_vocab() -> tuple[str, ...]:
    return grammar_vocabulary()


def build_videoclip(channels: int, height: int, width: int, cfg: TrainConfig,
                    d_out: int = 32, vocab: tuple[str, ...] | None = None) -> DualEncoderModel:
    vocab = default_vocab() if vocab is None else vocab
    enc = VideoEncoder(channels=channels, height=height, width=width, d_out=d_out, seed=cfg.seed)
    text = TextEncoder(vocab, d_out=d_out, seed=cfg.seed, frozen=cfg.freeze_video_text)
    return DualEncoderModel(modality="video", encoder=enc, text_encoder=text)


def build_skeletonclip(num_joints: int, cfg: TrainConfig, d_out: int = 32,
                       vocab: tuple[str, ...] | None = None) -> DualEncoderModel:
    vocab = default_vocab() if vocab is None else vocab
    enc = SkeletonEncoder(num_joints=num_joints, d_out=d_out, seed=cfg.seed)
    text = TextEncoder(vocab, d_out=d_out, seed=cfg.seed, frozen=cfg.freeze_skeleton_text)
    return DualEncoderModel(modality="skeleton", encoder=enc, text_encoder=text)


def clone_model(model: DualEncoderModel) -> DualEncoderModel:
    return copy.deepcopy(model)


def _named_params(model: DualEncoderModel, prefix: str) -> list[tuple[str, Tensor]]:
    out = []
    for tag, ps in model.parameter_sets():
        out += [(f"{prefix}.{tag}.{n}", t) for n, t in ps.items()]
    return out


def _softmax_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    logp = log_softmax(logits, axis=-1)
    return -logp[np.arange(logits.shape[0]), targets].mean()


# -- phase: skeleton classifier pretraining -----------------------------------------


def pretrain_skeleton(g_s: SkeletonEncoder, head: ClassifierHead, data: TrainData,
                      split: SplitSpec, cfg: TrainConfig,
                      record: RunRecord | None = None) -> SkeletonEncoder:
    """Supervised action-classification pretraining on seen classes only."""
    guard_seen_only(data, split)
    targets = data.local_targets()
    if head.num_classes != len(data.prompts):
        raise ContractViolation(
            f"head has {head.num_classes} outputs but data carries {len(data.prompts)} classes"
        )
    opt = Optimizer([(f"g_s.{n}", t) for n, t in g_s.ps.items()]
              + [(f"head.{n}", t) for n, t in head.ps.items()],
              lr=cfg.learning_rate, momentum=cfg.momentum, schedule=cfg.lr_schedule,
              total_epochs=cfg.pretrain_epochs, kind=cfg.optimizer)
    B, T = data.skeletons.shape[0], data.skeletons.shape[1]
    for epoch in range(cfg.pretrain_epochs):
        opt.set_epoch(epoch)
        rng = _phase_rng(cfg.seed, "pretrain", epoch)
        total, correct, count = 0.0, 0, 0
        for batch in class_balanced_batches(data.class_ids, cfg.batch_size, rng):
            feats = g_s.encode_penultimate_batch(data.skeletons[batch])
            logits = head.logits(feats)
            loss = _softmax_ce(logits, targets[batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(batch)
            correct += int((np.argmax(logits.data, axis=1) == targets[batch]).sum())
            count += len(batch)
        if record is not None:
            record.log("pretrain", epoch, loss=total / count, train_acc=correct / count)
    return g_s


def classifier_accuracy(g_s: SkeletonEncoder, head: ClassifierHead, data: TrainData) -> float:
    feats = g_s.encode_penultimate_batch(data.skeletons)
    pred = np.argmax(head.logits(feats).data, axis=1)
    return float((pred == data.local_targets()).mean())


# -- phase: dual-encoder alignment (shared by align / finetune / SCD sides) ----------


def _encode_side(model: DualEncoderModel, data: TrainData, batch: np.ndarray) -> Tensor:
    if model.modality == "video":
        return model.encoder.encode_batch(data.videos[batch])
    return model.encoder.encode_batch(data.skeletons[batch])


def _train_dual_ce(model: DualEncoderModel, data: TrainData, split: SplitSpec,
                   cfg: TrainConfig, phase: str, epochs: int,
                   record: RunRecord | None = None) -> DualEncoderModel:
    guard_seen_only(data, split)
    targets = data.local_targets()
    opt = Optimizer(_named_params(model, model.modality), lr=cfg.learning_rate,
              momentum=cfg.momentum, schedule=cfg.lr_schedule, total_epochs=epochs,
                    kind=cfg.optimizer)
    for epoch in range(epochs):
        opt.set_epoch(epoch)
        rng = _phase_rng(cfg.seed, phase, epoch)
        total, count = 0.0, 0
        for batch in class_balanced_batches(data.class_ids, cfg.batch_size, rng):
            z_mod = _encode_side(model, data, batch)
            z_text = model.text_encoder.encode_batch(data.prompt_texts)
            loss = contrastive_ce(z_mod, z_text, targets[batch], cfg.loss.tau)
            opt.zero_grad()
            loss.value.backward()
            opt.step()
            total += loss.scalar * len(batch)
            count += len(batch)
        if record is not None:
            record.log(phase, epoch, loss=total / count)
    return model


def align_skeletonclip(skeletonclip: DualEncoderModel, data: TrainData, split: SplitSpec,
                       cfg: TrainConfig, record: RunRecord | None = None) -> DualEncoderModel:
    """Skeleton-language alignment; the text encoder stays frozen unless the
    trainable-text ablation is switched on."""
    if skeletonclip.modality != "skeleton":
        raise ContractViolation("align_skeletonclip needs a skeleton-modality model")
    skeletonclip.text_encoder.set_frozen(cfg.freeze_skeleton_text)
    return _train_dual_ce(skeletonclip, data, split, cfg, "align", cfg.align_epochs, record)


def finetune_videoclip(videoclip: DualEncoderModel, data: TrainData, split: SplitSpec,
                       cfg: TrainConfig, record: RunRecord | None = None) -> DualEncoderModel:
    """Full fine-tuning of the video-language dual encoder on seen classes."""
    if videoclip.modality != "video":
        raise ContractViolation("finetune_videoclip needs a video-modality model")
    videoclip.text_encoder.set_frozen(cfg.freeze_video_text)
    return _train_dual_ce(videoclip, data, split, cfg, "finetune", cfg.finetune_epochs, record)


# -- phase: joint distillation ---------------------------------------------------------


def _distill_term(cfg: LossConfig, f_lv: Tensor, f_ls: Tensor,
                  z_v: Tensor, z_s: Tensor, projection: Tensor | None) -> LossValue:
    if cfg.kd_mode in ("feature_no_proj", "feature_proj"):
        return feature_kd(z_v, z_s, projection)
    if cfg.scale_distill_logits:
        f_lv = f_lv * (1.0 / cfg.tau)
        f_ls = f_ls * (1.0 / cfg.tau)
    if cfg.distill_kind == "mse":
        return distill_mse(f_lv, f_ls)
    if cfg.distill_kind == "kl":
        return distill_kl(f_lv, f_ls, cfg.distill_tau)
    return distill_contrastive(f_lv, f_ls, cfg.distill_tau)


def train_scd(videoclip: DualEncoderModel, skeletonclip: DualEncoderModel,
              data: TrainData, split: SplitSpec, cfg: TrainConfig,
              record: RunRecord | None = None,
              sides: tuple[str, ...] = ("video", "skeleton")) -> DualEncoderModel:
    """Joint training of both dual encoders with a distillation penalty
    between their similarity matrices.

    `sides` restricts which cross-entropy terms (and parameter groups) are
    active; with a single side and alpha=0 this degenerates to plain
    alignment, which is the decoupling property tests rely on. Returns the
    video-side dual encoder: the inference artifact carries no skeleton
    components.
    """
    guard_seen_only(data, split)
    for side in sides:
        if side not in ("video", "skeleton"):
            raise ConfigError(f"unknown side {side!r}")
    lcfg = cfg.loss
    use_video = "video" in sides
    use_skel = "skeleton" in sides
    distill_active = lcfg.alpha != 0.0 and use_video and use_skel

    if lcfg.kd_mode == "feature_no_proj" and videoclip.encoder.d_out != skeletonclip.encoder.d_out:
        raise ConfigError(
            "feature_no_proj needs matching embedding dims "
            f"({videoclip.encoder.d_out} vs {skeletonclip.encoder.d_out})"
        )
    projection = None
    if lcfg.kd_mode == "feature_proj":
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, zlib.crc32(b"kd_proj")])
        d_s, d_v = skeletonclip.encoder.d_out, videoclip.encoder.d_out
        projection = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_s), size=(d_s, d_v)),
                            requires_grad=True)
    if lcfg.kd_mode == "offline":
        # the teacher is completely frozen; only the student trains
        for _, ps in skeletonclip.parameter_sets():
            ps.set_all_trainable(False)

    named: list[tuple[str, Tensor]] = []
    if use_video:
        named += _named_params(videoclip, "video")
    if use_skel:
        named += _named_params(skeletonclip, "skeleton")
    if projection is not None and distill_active:
        named.append(("kd_projection", projection))
    opt = Optimizer(named, lr=cfg.learning_rate, momentum=cfg.momentum,
                    schedule=cfg.lr_schedule, total_epochs=cfg.scd_epochs, kind=cfg.optimizer)

    targets = data.local_targets()
    zero = LossValue(value=Tensor(0.0), components={"zero": 0.0}, weights={"zero": 1.0})
    for epoch in range(cfg.scd_epochs):
        opt.set_epoch(epoch)
        rng = _phase_rng(cfg.seed, "scd", epoch)
        sums: dict[str, float] = {}
        count = 0
        for batch in class_balanced_batches(data.class_ids, cfg.batch_size, rng):
            ce_v = ce_s = zero
            z_v = z_s = None
            f_lv = f_ls = None
            if use_video:
                z_v = videoclip.encoder.encode_batch(data.videos[batch])
                z_tv = videoclip.text_encoder.encode_batch(data.prompt_texts)
                f_lv = language_contextualized(z_v, z_tv)
                ce_v = contrastive_ce(z_v, z_tv, targets[batch], lcfg.tau)
            if use_skel:
                z_s = skeletonclip.encoder.encode_batch(data.skeletons[batch])
                z_ts = skeletonclip.text_encoder.encode_batch(data.prompt_texts)
                f_ls = language_contextualized(z_s, z_ts)
                ce_s = contrastive_ce(z_s, z_ts, targets[batch], lcfg.tau)
            if distill_active:
                t_ls = f_ls.detach() if lcfg.stop_teacher_grad else f_ls
                t_zs = z_s.detach() if lcfg.stop_teacher_grad else z_s
                distill = _distill_term(lcfg, f_lv, t_ls, z_v, t_zs, projection)
                loss = scd_total(ce_v, ce_s, distill, lcfg.alpha)
            elif use_video and use_skel:
                loss = scd_total(ce_v, ce_s, zero, 0.0)
            else:
                loss = ce_v if use_video else ce_s
            opt.zero_grad()
            loss.value.backward()
            opt.step()
            count += len(batch)
            sums["loss"] = sums.get("loss", 0.0) + loss.scalar * len(batch)
            for k, v in loss.components.items():
                if k != "zero":
                    sums[k] = sums.get(k, 0.0) + v * len(batch)
        if record is not None:
            record.log("scd", epoch, **{k: v / count for k, v in sums.items()})
    return videoclip


# -- phase: alignment baselines ----------------------------------------------------------


def train_baseline(kind: str, data: TrainData, split: SplitSpec, cfg: TrainConfig,
                   num_joints: int, videoclip: DualEncoderModel | None = None,
                   channels: int = 3, height: int = 32, width: int = 32,
                   record: RunRecord | None = None) -> DualEncoderModel:
    """Tri-modal in-batch alignment, or alignment of the skeleton encoder to a
    frozen pretrained video encoder. Both artifacts classify skeleton-vs-text
    at zero-shot time."""
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"baseline kind must be one of {BASELINE_KINDS}, got {kind!r}")
    guard_seen_only(data, split)
    # in-batch InfoNCE over matched pairs; same-class rows inside a batch act
    # as false negatives, which is the intrinsic weakness of these alignment
    # strategies on few-class data
    batch_size = cfg.batch_size
    targets = data.local_targets()
    epochs = cfg.align_epochs

    if kind == "trimodal":
        f_v = VideoEncoder(channels=channels, height=height, width=width, seed=cfg.seed)
        g_s = SkeletonEncoder(num_joints=num_joints, seed=cfg.seed)
        t_enc = TextEncoder(default_vocab(), seed=cfg.seed)
        named = ([(f"f_v.{n}", t) for n, t in f_v.ps.items()]
                 + [(f"g_s.{n}", t) for n, t in g_s.ps.items()]
                 + [(f"t.{n}", t) for n, t in t_enc.ps.items()])
        result = DualEncoderModel(modality="skeleton", encoder=g_s, text_encoder=t_enc)
    else:
        if videoclip is None:
            raise ContractViolation("crossproj baseline needs a pretrained videoclip")
        frozen_video = clone_model(videoclip)
        for _, ps in frozen_video.parameter_sets():
            ps.set_all_trainable(False)
        g_s = SkeletonEncoder(num_joints=num_joints, seed=cfg.seed)
        named = [(f"g_s.{n}", t) for n, t in g_s.ps.items()]
        result = DualEncoderModel(modality="skeleton", encoder=g_s,
                                  text_encoder=frozen_video.text_encoder)

    opt = Optimizer(named, lr=cfg.learning_rate, momentum=cfg.momentum,
                    schedule=cfg.lr_schedule, total_epochs=epochs, kind=cfg.optimizer)
    for epoch in range(epochs):
        opt.set_epoch(epoch)
        rng = _phase_rng(cfg.seed, f"baseline_{kind}", epoch)
        total, count = 0.0, 0
        for batch in class_balanced_batches(data.class_ids, batch_size, rng):
            if kind == "trimodal":
                z_v = f_v.encode_batch(data.videos[batch])
                z_s = g_s.encode_batch(data.skeletons[batch])
                z_t_all = t_enc.encode_batch(data.prompt_texts)
                z_t = z_t_all[targets[batch]]
                loss = trimodal_contrastive(z_v, z_s, z_t, cfg.loss.tau)
            else:
                z_s = g_s.encode_batch(data.skeletons[batch])
                z_v = frozen_video.encoder.encode_batch(data.videos[batch])
                loss = crossproj_align(z_s, z_v, cfg.loss.tau)
            opt.zero_grad()
            loss.value.backward()
            opt.step()
            total += loss.scalar * len(batch)
            count += len(batch)
        if record is not None:
            record.log(f"baseline_{kind}", epoch, loss=total / count)
    return result


# -- model checkpoints ----------------------------------------------------------------


def model_config_flat(model: DualEncoderModel) -> dict[str, str]:
    enc = model.encoder
    flat = {"modality": model.modality, "d_out": str(enc.d_out)}
    if model.modality == "video":
        flat.update(channels=str(enc.channels), height=str(enc.height), width=str(enc.width))
    else:
        flat.update(num_joints=str(enc.num_joints),
                    canonicalize="true" if enc.canonicalize else "false")
    return flat


def save_dual_encoder(path, model: DualEncoderModel, fingerprint: str = ""):
    from .configfile import format_flat
    from .encoders import save_arrays

    save_arrays(path, model.state(), fingerprint=fingerprint,
                config_text=format_flat(model_config_flat(model)))


def load_dual_encoder(path) -> tuple[DualEncoderModel, str]:
    from .configfile import parse_flat_text
    from .encoders import load_arrays

    arrays, fingerprint, config_text = load_arrays(path)
    flat = parse_flat_text(config_text)
    d_out = int(flat.get("d_out", "32"))
    base = TrainConfig()
    if flat.get("modality") == "video":
        model = build_videoclip(int(flat.get("channels", "3")), int(flat.get("height", "32")),
                                int(flat.get("width", "32")), base, d_out=d_out)
    elif flat.get("modality") == "skeleton":
        model = build_skeletonclip(int(flat.get("num_joints", "13")), base, d_out=d_out)
        model.encoder.canonicalize = flat.get("canonicalize", "false") == "true"
    else:
        raise ContractViolation(f"{path}: checkpoint has unknown modality {flat.get('modality')!r}")
    model.load_state(arrays)
    return model, fingerprint
