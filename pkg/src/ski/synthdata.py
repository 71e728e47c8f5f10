"""Procedural generator for paired skeleton/video/text triplets.

The benchmark replaces real RGB+D corpora with stick-figure clips rendered
from parametric joint trajectories. Class semantics are compositional
(verb × limb, plus a tempo axis for large class counts) so that held-out
classes share vocabulary and motion components with seen classes. ADL-like
classes share one appearance distribution and differ only in kinematics;
web-like classes get a class-correlated background color.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DegenerateInputError,
    SkeletonSequence,
    TextPrompt,
    VideoClip,
)

# -- skeleton topology (fixed): 13 joints, legs attach at the pelvis ---------

JOINT_NAMES = (
    "head", "neck", "pelvis",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_knee", "l_ankle",
    "r_knee", "r_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)
_J = {name: i for i, name in enumerate(JOINT_NAMES)}

# (child, parent) pairs; drawn as line segments by the renderer
BONES = (
    ("head", "neck"), ("neck", "pelvis"),
    ("l_shoulder", "neck"), ("l_elbow", "l_shoulder"), ("l_wrist", "l_elbow"),
    ("r_shoulder", "neck"), ("r_elbow", "r_shoulder"), ("r_wrist", "r_elbow"),
    ("l_knee", "pelvis"), ("l_ankle", "l_knee"),
    ("r_knee", "pelvis"), ("r_ankle", "r_knee"),
)

# Rest pose centered on the pelvis, x lateral / y up / z toward camera.
BASE_POSE = np.array(
    [
        [0.00, 0.78, 0.0],    # head
        [0.00, 0.58, 0.0],    # neck
        [0.00, 0.00, 0.0],    # pelvis
        [-0.22, 0.52, 0.0],   # l_shoulder
        [-0.30, 0.22, 0.0],   # l_elbow
        [-0.32, -0.05, 0.0],  # l_wrist
        [0.22, 0.52, 0.0],    # r_shoulder
        [0.30, 0.22, 0.0],    # r_elbow
        [0.32, -0.05, 0.0],   # r_wrist
        [-0.13, -0.48, 0.0],  # l_knee
        [-0.15, -0.92, 0.0],  # l_ankle
        [0.13, -0.48, 0.0],   # r_knee
        [0.15, -0.92, 0.0],   # r_ankle
    ]
)

WORLD_EXTENT = 1.1  # orthographic window is [-E, E] in both axes

# -- motion grammar -----------------------------------------------------------


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# verb -> (waveform kind, base frequency, displacement direction)
VERB_MOTIONS = {
    "waves": ("sin", 2.0, _unit((1.0, 0.0, 0.0))),
    "raises": ("ramp", 1.2, _unit((0.0, 1.0, 0.0))),
    "swings": ("sin", 1.0, _unit((0.0, 0.0, 1.0))),
    "kicks": ("pulse", 1.4, _unit((0.25, 0.1, 1.0))),
    "nods": ("sin", 2.2, _unit((0.0, -0.35, 1.0))),
    "sways": ("sin", 0.7, _unit((1.0, 0.0, 0.25))),
    "stretches": ("ramp", 0.8, _unit((0.5, 0.85, 0.0))),
    "bends": ("sin", 1.1, _unit((0.0, -1.0, 0.25))),
    "shakes": ("sin", 3.5, _unit((0.8, 0.0, 0.6))),
    "lifts": ("ramp", 1.5, _unit((0.0, 0.9, 0.45))),
}
VERBS = tuple(VERB_MOTIONS)

# limb phrase -> [(joint, weight)], weight grows toward the extremity
LIMB_JOINTS = {
    "left arm": (("l_shoulder", 0.25), ("l_elbow", 0.65), ("l_wrist", 1.0)),
    "right arm": (("r_shoulder", 0.25), ("r_elbow", 0.65), ("r_wrist", 1.0)),
    "left leg": (("l_knee", 0.55), ("l_ankle", 1.0)),
    "right leg": (("r_knee", 0.55), ("r_ankle", 1.0)),
    "head": (("head", 1.0), ("neck", 0.3)),
    "torso": (("head", 0.9), ("neck", 0.7), ("l_shoulder", 0.7), ("r_shoulder", 0.7), ("pelvis", 0.2)),
}
LIMBS = tuple(LIMB_JOINTS)

TEMPO_WORDS = ("", "quickly", "slowly")  # third class axis, engaged only for large catalogs
TEMPO_FACTORS = {"": 1.0, "quickly": 1.7, "slowly": 0.55}

AMPLITUDE_ADVERBS = ("slightly", "gently", "steadily", "vigorously")

BASE_AMPLITUDE = 0.30  # meters at motion_subtlety 1.0, before per-sample scaling

# named anchors used both for class-correlated backgrounds and color naming
COLOR_PALETTE = (
    ("red", (0.75, 0.15, 0.15)),
    ("green", (0.15, 0.65, 0.20)),
    ("blue", (0.15, 0.25, 0.75)),
    ("yellow", (0.85, 0.80, 0.20)),
    ("purple", (0.55, 0.20, 0.65)),
    ("orange", (0.90, 0.55, 0.15)),
    ("teal", (0.15, 0.60, 0.60)),
    ("pink", (0.90, 0.55, 0.70)),
    ("brown", (0.45, 0.30, 0.15)),
    ("gray", (0.45, 0.45, 0.45)),
    ("olive", (0.45, 0.45, 0.15)),
    ("navy", (0.10, 0.15, 0.40)),
)

_CAPTION_TEMPLATE_WORDS = ("a", "person", "the", "in", "front", "of", "background")


def color_name(rgb) -> str:
    rgb = np.asarray(rgb, dtype=np.float64)
    dists = [np.linalg.norm(rgb - np.asarray(c)) for _, c in COLOR_PALETTE]
    return COLOR_PALETTE[int(np.argmin(dists))][0]


def grammar_vocabulary() -> tuple[str, ...]:
    """Every word the caption/prompt grammar can emit (lowercase tokens)."""
    words = set(_CAPTION_TEMPLATE_WORDS)
    words.update(VERBS)
    for limb in LIMBS:
        words.update(limb.split())
    words.update(AMPLITUDE_ADVERBS)
    words.update(w for w in TEMPO_WORDS if w)
    words.update(name for name, _ in COLOR_PALETTE)
    return tuple(sorted(words))


# -- domain types -------------------------------------------------------------


@dataclass(frozen=True)
class ActionSpec:
    class_id: int
    label: str
    verb: str
    limb: str
    tempo: str
    adl_like: bool

    @property
    def moving_joints(self) -> tuple[str, ...]:
        return tuple(j for j, _ in LIMB_JOINTS[self.limb])

    def prompt_text(self) -> str:
        text = f"a person {self.verb} the {self.limb}"
        if self.tempo:
            text += f" {self.tempo}"
        return text


@dataclass(frozen=True)
class Appearance:
    background: tuple[float, float, float]
    figure: tuple[float, float, float]


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 10
    samples_per_class: int = 24
    T_s: int = 16
    T_v: int = 8
    J: int = NUM_JOINTS
    H: int = 32
    W: int = 32
    adl_fraction: float = 1.0
    viewpoint_spread: float = 0.9  # radians of total azimuth range
    motion_subtlety: float = 0.5
    seed: int = 0
    seen_ratio: float = 0.8
    eps_appearance: float = 0.10  # max pairwise mean-frame distance for ADL classes
    eps_motion: float = 0.001  # min pairwise joint-speed-profile distance

    def validate(self):
        for name in ("num_classes", "samples_per_class", "T_s", "T_v", "J", "H", "W"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.J != NUM_JOINTS:
            raise ConfigError(f"J is fixed at {NUM_JOINTS} by the skeleton topology, got {self.J}")
        if not 0.0 <= self.adl_fraction <= 1.0:
            raise ConfigError(f"adl_fraction must lie in [0,1], got {self.adl_fraction}")
        if not 0.0 <= self.viewpoint_spread <= math.pi:
            raise ConfigError(f"viewpoint_spread must lie in [0, pi], got {self.viewpoint_spread}")
        if not 0.0 < self.motion_subtlety <= 1.0:
            raise ConfigError(f"motion_subtlety must lie in (0,1], got {self.motion_subtlety}")
        if not 0.0 < self.seen_ratio < 1.0:
            raise ConfigError(f"seen_ratio must lie in (0,1), got {self.seen_ratio}")
        if self.H < 16 or self.W < 16:
            raise ConfigError("frames must be at least 16x16")
        if self.num_classes > len(VERBS) * len(LIMBS) * len(TEMPO_WORDS):
            raise ConfigError(f"num_classes beyond the {len(VERBS) * len(LIMBS) * len(TEMPO_WORDS)}-combination grammar")


@dataclass(frozen=True)
class SplitSpec:
    seen_class_ids: frozenset[int]
    unseen_class_ids: frozenset[int]

    def __post_init__(self):
        seen = frozenset(self.seen_class_ids)
        unseen = frozenset(self.unseen_class_ids)
        if not seen or not unseen:
            raise ConfigError("both split sides must be non-empty")
        if seen & unseen:
            raise ConfigError(f"split sides overlap: {sorted(seen & unseen)}")
        object.__setattr__(self, "seen_class_ids", seen)
        object.__setattr__(self, "unseen_class_ids", unseen)

    @property
    def all_class_ids(self) -> frozenset[int]:
        return self.seen_class_ids | self.unseen_class_ids


@dataclass(frozen=True)
class Triplet:
    video: VideoClip
    skeleton: SkeletonSequence
    prompt: TextPrompt
    caption: str
    appearance: Appearance
    # camera that reproduces `video` from `skeleton`; identity because the
    # stored joints are already in camera coordinates
    camera: tuple[float, float] = (0.0, 0.0)
    source_camera: tuple[float, float] = (0.0, 0.0)

    @property
    def class_id(self) -> int:
        return self.prompt.class_id


# -- class catalog -------------------------------------------------------------


def action_specs(num_classes: int, adl_fraction: float = 1.0) -> list[ActionSpec]:
    """Deterministic compositional class catalog.

    Factor counts are chosen so each verb and limb recurs across classes,
    which is what makes zero-shot transfer to held-out classes possible.
    """
    if num_classes < 1:
        raise ConfigError("num_classes must be >= 1")
    nv = min(len(VERBS), max(2, math.ceil(math.sqrt(num_classes))))
    nl = min(len(LIMBS), max(2, math.ceil(num_classes / nv)))
    while nv * nl < num_classes and nv < len(VERBS):
        nv += 1
    nt = math.ceil(num_classes / (nv * nl))
    if nt > len(TEMPO_WORDS):
        raise ConfigError(f"cannot enumerate {num_classes} classes from the grammar")
    num_adl = round(adl_fraction * num_classes)
    specs = []
    for i in range(num_classes):
        verb = VERBS[i % nv]
        limb = LIMBS[(i // nv) % nl]
        tempo = TEMPO_WORDS[(i // (nv * nl)) % len(TEMPO_WORDS)] if nt > 1 else ""
        label = f"{verb} {limb}" + (f" {tempo}" if tempo else "")
        specs.append(
            ActionSpec(class_id=i, label=label, verb=verb, limb=limb, tempo=tempo,
                       adl_like=i < num_adl)
        )
    return specs


# -- trajectory and camera ------------------------------------------------------


def _waveform(kind: str, u: np.ndarray, freq: float, phase: float) -> np.ndarray:
    if kind == "sin":
        return np.sin(2.0 * math.pi * freq * u + phase)
    if kind == "pulse":
        s = np.sin(2.0 * math.pi * freq * u + phase)
        return np.clip(s, 0.0, None) ** 3
    if kind == "ramp":
        v = np.clip(u * freq - phase, 0.0, 1.0)
        return 0.5 - 0.5 * np.cos(math.pi * v)
    raise ConfigError(f"unknown waveform kind {kind!r}")


def sample_trajectory(spec: ActionSpec, T_s: int, motion_subtlety: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """World-coordinate joint trajectory for one sample of `spec`.

    Returns (frames (T_s,J,3), amplitude multiplier used for the caption).
    """
    kind, freq, direction = VERB_MOTIONS[spec.verb]
    freq = freq * TEMPO_FACTORS[spec.tempo] * rng.uniform(0.85, 1.15)
    amp_mult = rng.uniform(0.6, 1.4)
    amplitude = BASE_AMPLITUDE * motion_subtlety * amp_mult
    phase = rng.uniform(0.0, 2.0 * math.pi) if kind != "ramp" else rng.uniform(0.0, 0.25)
    scale = rng.uniform(0.9, 1.1)

    u = np.linspace(0.0, 1.0, T_s) if T_s > 1 else np.zeros(1)
    wave = _waveform(kind, u, freq, phase)  # (T_s,)
    frames = np.tile(BASE_POSE * scale, (T_s, 1, 1))
    for joint, weight in LIMB_JOINTS[spec.limb]:
        frames[:, _J[joint], :] += amplitude * weight * wave[:, None] * direction[None, :]
    frames += rng.normal(0.0, 0.008, size=frames.shape)
    return frames, amp_mult


def camera_rotation(azimuth: float, elevation: float) -> np.ndarray:
    """World-to-camera rotation: yaw about +y, then pitch about +x."""
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return rx @ ry


# -- rendering -------------------------------------------------------------------


def _to_pixel(points: np.ndarray, H: int, W: int) -> np.ndarray:
    """Orthographic projection into fractional (row, col) coordinates."""
    cols = (points[:, 0] + WORLD_EXTENT) / (2.0 * WORLD_EXTENT) * (W - 1)
    rows = (WORLD_EXTENT - points[:, 1]) / (2.0 * WORLD_EXTENT) * (H - 1)
    return np.stack([rows, cols], axis=-1)


def _draw_segment(canvas: np.ndarray, p0, p1, color: np.ndarray):
    H, W = canvas.shape[1], canvas.shape[2]
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) * 2 + 1
    ts = np.linspace(0.0, 1.0, n + 1)
    rows = np.rint(p0[0] + (p1[0] - p0[0]) * ts).astype(int)
    cols = np.rint(p0[1] + (p1[1] - p0[1]) * ts).astype(int)
    ok = (rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
    canvas[:, rows[ok], cols[ok]] = color[:, None]


def render_skeleton_to_frames(
    skeleton: SkeletonSequence,
    camera: tuple[float, float],
    appearance: Appearance,
    T_v: int | None = None,
    H: int = 32,
    W: int = 32,
) -> VideoClip:
    """Rasterize bone segments over a solid background.

    `camera` is (azimuth, elevation) applied to the stored joints before the
    orthographic projection. Raises if every joint of a rendered frame falls
    outside the image window.
    """
    if H < 16 or W < 16:
        raise ConfigError("frames must be at least 16x16")
    T_s = skeleton.num_frames
    T_v = T_s if T_v is None else T_v
    if T_v < 1:
        raise ConfigError("T_v must be >= 1")
    rot = camera_rotation(*camera)
    bg = np.asarray(appearance.background, dtype=np.float64)
    fg = np.asarray(appearance.figure, dtype=np.float64)
    indices = [(i * T_s) // T_v for i in range(T_v)]
    frames = np.empty((T_v, 3, H, W), dtype=np.float64)
    bone_idx = [(_J[a], _J[b]) for a, b in BONES if _J[a] < skeleton.num_joints and _J[b] < skeleton.num_joints]
    for out_t, t in enumerate(indices):
        joints = skeleton.frames[t] @ rot.T
        pix = _to_pixel(joints, H, W)
        rounded = np.rint(pix)
        visible = (
            (rounded[:, 0] >= 0) & (rounded[:, 0] < H) & (rounded[:, 1] >= 0) & (rounded[:, 1] < W)
        )
        if not visible.any():
            raise DegenerateInputError(f"all joints project outside the {H}x{W} frame at t={t}")
        canvas = np.tile(bg[:, None, None], (1, H, W))
        if skeleton.num_joints == NUM_JOINTS:
            for a, b in bone_idx:
                _draw_segment(canvas, pix[a], pix[b], fg)
        else:
            # non-standard joint counts: draw the points themselves
            for p in pix:
                _draw_segment(canvas, p, p, fg)
        frames[out_t] = np.clip(canvas, 0.0, 1.0)
    return VideoClip(frames=frames, class_id=skeleton.class_id)


def limb_pixel_mask(triplet: Triplet) -> np.ndarray:
    """Boolean (T_v,H,W) mask of the pixels covered by rendered bones."""
    probe = render_skeleton_to_frames(
        triplet.skeleton,
        triplet.camera,
        Appearance(background=(0.0, 0.0, 0.0), figure=(1.0, 1.0, 1.0)),
        T_v=triplet.video.num_frames,
        H=triplet.video.frames.shape[2],
        W=triplet.video.frames.shape[3],
    )
    return probe.frames[:, 0] > 0.5


# -- captions ---------------------------------------------------------------------


def amplitude_adverb(amp_mult: float) -> str:
    if amp_mult < 0.8:
        return AMPLITUDE_ADVERBS[0]
    if amp_mult < 1.0:
        return AMPLITUDE_ADVERBS[1]
    if amp_mult < 1.2:
        return AMPLITUDE_ADVERBS[2]
    return AMPLITUDE_ADVERBS[3]


def make_caption(spec: ActionSpec, amp_mult: float, background_rgb) -> str:
    adverb = amplitude_adverb(amp_mult)
    tempo = f" {spec.tempo}" if spec.tempo else ""
    return (
        f"a person {spec.verb} the {spec.limb}{tempo} {adverb} "
        f"in front of a {color_name(background_rgb)} background"
    )


# -- splits -----------------------------------------------------------------------


def make_splits(class_ids, seen_ratio: float, seed: int) -> SplitSpec:
    """Random seen/unseen partition; sizes are round-to-nearest with both
    sides clamped non-empty."""
    ids = sorted(int(c) for c in class_ids)
    if len(ids) != len(set(ids)):
        raise ConfigError("class ids must be unique")
    if len(ids) < 2:
        raise ConfigError("need at least 2 classes to split")
    if not 0.0 < seen_ratio < 1.0:
        raise ConfigError(f"seen_ratio must lie in (0,1), got {seen_ratio}")
    n_seen = int(round(seen_ratio * len(ids)))
    n_seen = min(max(n_seen, 1), len(ids) - 1)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    order = rng.permutation(len(ids))
    seen = frozenset(ids[i] for i in order[:n_seen])
    unseen = frozenset(ids[i] for i in order[n_seen:])
    return SplitSpec(seen_class_ids=seen, unseen_class_ids=unseen)


# -- dataset generation -------------------------------------------------------------


def _sample_rng(seed: int, class_id: int, sample_idx: int) -> np.random.Generator:
    # counter-hash seed splitting: per-sample streams are independent of
    # generation order, so samples may be produced in parallel
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, class_id, sample_idx])


def _sample_appearance(spec: ActionSpec, rng: np.random.Generator) -> Appearance:
    if spec.adl_like:
        bg = rng.uniform(0.15, 0.45, size=3)
    else:
        anchor = np.asarray(COLOR_PALETTE[spec.class_id % len(COLOR_PALETTE)][1])
        bg = np.clip(anchor + rng.uniform(-0.06, 0.06, size=3), 0.05, 0.95)
    fg = rng.uniform(0.75, 0.95, size=3)
    return Appearance(background=tuple(bg), figure=tuple(fg))


def generate_triplet(spec: ActionSpec, config: DatasetConfig, sample_idx: int) -> Triplet:
    rng = _sample_rng(config.seed, spec.class_id, sample_idx)
    world_frames, amp_mult = sample_trajectory(spec, config.T_s, config.motion_subtlety, rng)
    azimuth = rng.uniform(-config.viewpoint_spread / 2.0, config.viewpoint_spread / 2.0)
    elevation = rng.uniform(-config.viewpoint_spread / 4.0, config.viewpoint_spread / 4.0)
    rot = camera_rotation(azimuth, elevation)
    camera_frames = world_frames @ rot.T  # stored in camera coordinates
    skeleton = SkeletonSequence(frames=camera_frames, subject_id=sample_idx, class_id=spec.class_id)
    appearance = _sample_appearance(spec, rng)
    video = render_skeleton_to_frames(
        skeleton, (0.0, 0.0), appearance, T_v=config.T_v, H=config.H, W=config.W
    )
    caption = make_caption(spec, amp_mult, appearance.background)
    prompt = TextPrompt(text=spec.prompt_text(), class_id=spec.class_id, template_id="verb-limb-v1")
    return Triplet(
        video=video,
        skeleton=skeleton,
        prompt=prompt,
        caption=caption,
        appearance=appearance,
        camera=(0.0, 0.0),
        source_camera=(azimuth, elevation),
    )


def generate_dataset(config: DatasetConfig) -> tuple[list[Triplet], SplitSpec]:
    """All triplets (class-major, sample-minor order) plus the seen/unseen split."""
    config.validate()
    specs = action_specs(config.num_classes, config.adl_fraction)
    triplets = [
        generate_triplet(spec, config, s)
        for spec in specs
        for s in range(config.samples_per_class)
    ]
    split = make_splits([s.class_id for s in specs], config.seen_ratio, config.seed)
    return triplets, split


def class_prompts(triplets: list[Triplet]) -> list[TextPrompt]:
    """One prompt per class, ordered by class_id."""
    by_id: dict[int, TextPrompt] = {}
    for t in triplets:
        by_id.setdefault(t.prompt.class_id, t.prompt)
    return [by_id[c] for c in sorted(by_id)]


# -- ADL contract -------------------------------------------------------------------


@dataclass(frozen=True)
class AdlContractReport:
    max_appearance_distance: float
    min_motion_distance: float
    eps_appearance: float
    eps_motion: float

    @property
    def holds(self) -> bool:
        return (
            self.max_appearance_distance < self.eps_appearance
            and self.min_motion_distance > self.eps_motion
        )


def adl_contract_report(triplets: list[Triplet], config: DatasetConfig) -> AdlContractReport:
    """Quantify the ADL premise: appearance indistinguishable across classes,
    kinematics distinguishable. Considers ADL-like classes only."""
    adl_ids = sorted({t.class_id for t in triplets}) if config.adl_fraction >= 1.0 else sorted(
        {t.class_id for t in triplets if t.class_id < round(config.adl_fraction * config.num_classes)}
    )
    if len(adl_ids) < 2:
        raise ConfigError("ADL contract needs at least two ADL-like classes")
    mean_frames = {}
    speed_profiles = {}
    for cid in adl_ids:
        members = [t for t in triplets if t.class_id == cid]
        mean_frames[cid] = np.mean([t.video.frames.mean(axis=0) for t in members], axis=0)
        profiles = [
            np.abs(np.diff(t.skeleton.frames, axis=0)).mean(axis=(0, 2)) for t in members
        ]
        speed_profiles[cid] = np.mean(profiles, axis=0)
    max_app = 0.0
    min_motion = math.inf
    for i, a in enumerate(adl_ids):
        for b in adl_ids[i + 1:]:
            max_app = max(max_app, float(np.abs(mean_frames[a] - mean_frames[b]).mean()))
            min_motion = min(min_motion, float(np.linalg.norm(speed_profiles[a] - speed_profiles[b])))
    return AdlContractReport(
        max_appearance_distance=max_app,
        min_motion_distance=min_motion,
        eps_appearance=config.eps_appearance,
        eps_motion=config.eps_motion,
    )
