"""Top-level `ski` command dispatching all module verbs.

Exit codes: 0 on success, 2 for configuration errors (bad flags, malformed
config files), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import lvlm
from .configfile import parse_flat_text
from .core import ConfigError, SkiError
from .dataio import read_dataset, read_split, write_dataset, write_split
from .encoders import ClassifierHead, VideoEncoder, describe_checkpoint
from .experiments import (
    OUT_ROOT_ENV,
    emit_summary,
    parse_plan,
    run_plan,
    sweep_alpha,
)
from .losses import LossConfig
from .synthdata import DatasetConfig, generate_dataset
from .training import (
    TrainConfig,
    align_skeletonclip,
    build_skeletonclip,
    build_videoclip,
    finetune_videoclip,
    load_dual_encoder,
    make_train_data,
    pretrain_skeleton,
    save_dual_encoder,
    seen_subset,
    train_baseline,
    train_scd,
)
from .zseval import evaluate_split, saliency_map, write_saliency


def _dataset_config_from_file(path: str) -> DatasetConfig:
    from .configfile import dataset_config_from_flat

    flat = parse_flat_text(Path(path).read_text(encoding="utf-8"))
    return dataset_config_from_flat(flat)


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    overrides = {}
    for field in ("seed", "batch_size"):
        if getattr(args, field, None) is not None:
            overrides[field] = getattr(args, field)
    if getattr(args, "learning_rate", None) is not None:
        overrides["learning_rate"] = args.learning_rate
    if getattr(args, "epochs", None) is not None:
        overrides.update(pretrain_epochs=args.epochs, align_epochs=args.epochs,
                         finetune_epochs=args.epochs, scd_epochs=args.epochs,
                         lvlm_epochs=args.epochs)
    return replace(cfg, **overrides)


def _load_data(args):
    triplets = read_dataset(args.data)
    split = read_split(args.split)
    return triplets, split


def cmd_gen_data(args) -> int:
    config = _dataset_config_from_file(args.config) if args.config else DatasetConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    triplets, split = generate_dataset(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, triplets)
    write_split(out.with_suffix(out.suffix + ".split"), split)
    print(f"wrote {len(triplets)} triplets to {out} "
          f"(seen {sorted(split.seen_class_ids)}, unseen {sorted(split.unseen_class_ids)})")
    return 0


def cmd_inspect_ckpt(args) -> int:
    for name, shape, norm in describe_checkpoint(args.ckpt):
        print(f"{name}\t{'x'.join(map(str, shape)) or 'scalar'}\t{norm:.6g}")
    return 0


def cmd_pretrain_skeleton(args) -> int:
    triplets, split = _load_data(args)
    cfg = _train_config(args)
    seen = make_train_data(seen_subset(triplets, split))
    model = build_skeletonclip(triplets[0].skeleton.num_joints, cfg)
    head = ClassifierHead(model.encoder.d_out, len(seen.prompts), seed=cfg.seed)
    pretrain_skeleton(model.encoder, head, seen, split, cfg)
    save_dual_encoder(args.out, model)
    print(f"saved pretrained skeleton encoder to {args.out}")
    return 0


def cmd_align_skeletonclip(args) -> int:
    triplets, split = _load_data(args)
    cfg = _train_config(args)
    seen = make_train_data(seen_subset(triplets, split))
    if args.init:
        model, _ = load_dual_encoder(args.init)
    else:
        model = build_skeletonclip(triplets[0].skeleton.num_joints, cfg)
        head = ClassifierHead(model.encoder.d_out, len(seen.prompts), seed=cfg.seed)
        pretrain_skeleton(model.encoder, head, seen, split, cfg)
    align_skeletonclip(model, seen, split, cfg)
    save_dual_encoder(args.out, model)
    print(f"saved aligned SkeletonCLIP to {args.out}")
    return 0


def cmd_finetune_videoclip(args) -> int:
    triplets, split = _load_data(args)
    cfg = _train_config(args)
    seen = make_train_data(seen_subset(triplets, split))
    shape = triplets[0].video.frames.shape
    model = build_videoclip(shape[1], shape[2], shape[3], cfg)
    finetune_videoclip(model, seen, split, cfg)
    save_dual_encoder(args.out, model)
    print(f"saved fine-tuned VideoCLIP to {args.out}")
    return 0


def cmd_train_scd(args) -> int:
    triplets, split = _load_data(args)
    kd_mode = {"feature": "feature_no_proj", "feature-proj": "feature_proj"}.get(
        args.kd_mode, args.kd_mode)
    loss = LossConfig(alpha=args.alpha, distill_kind=args.distill, kd_mode=kd_mode)
    cfg = replace(_train_config(args), loss=loss)
    seen = make_train_data(seen_subset(triplets, split))
    videoclip, _ = load_dual_encoder(args.videoclip)
    skeletonclip, _ = load_dual_encoder(args.skeletonclip)
    student = train_scd(videoclip, skeletonclip, seen, split, cfg)
    save_dual_encoder(args.out, student)
    print(f"saved skeleton-induced VideoCLIP to {args.out}")
    return 0


def cmd_train_baseline(args) -> int:
    triplets, split = _load_data(args)
    cfg = _train_config(args)
    seen = make_train_data(seen_subset(triplets, split))
    videoclip = None
    if args.kind == "crossproj":
        if not args.videoclip:
            raise ConfigError("crossproj baseline needs --videoclip")
        videoclip, _ = load_dual_encoder(args.videoclip)
    shape = triplets[0].video.frames.shape
    model = train_baseline(args.kind, seen, split, cfg,
                           num_joints=triplets[0].skeleton.num_joints,
                           videoclip=videoclip, channels=shape[1], height=shape[2],
                           width=shape[3])
    save_dual_encoder(args.out, model)
    print(f"saved {args.kind} baseline to {args.out}")
    return 0


def cmd_eval(args) -> int:
    triplets = read_dataset(args.data)
    split_file = args.split_file or f"{args.data}.split"
    split = read_split(split_file)
    model, fingerprint = load_dual_encoder(args.ckpt)
    report = evaluate_split(model, triplets, split, args.split, model_fingerprint=fingerprint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{args.split} top-1: {report.overall_top1:.4f} over {report.num_samples} samples "
          f"-> {out}")
    if args.saliency_out:
        sample = next(t for t in triplets if t.class_id in report.class_ids)
        sal = saliency_map(model, sample.video, sample.prompt)
        write_saliency(args.saliency_out, sal)
        print(f"saliency maps written to {args.saliency_out}*.pgm/.npy")
    return 0


def cmd_train_lvlm(args) -> int:
    triplets, split = _load_data(args)
    cfg = replace(_train_config(args), lvlm_use_skeleton=args.use_skeleton == "true")
    from .experiments import _caption_holdout
    from .training import RunRecord

    seen_trips = seen_subset(triplets, split)
    counts: dict[int, int] = {}
    for t in seen_trips:
        counts[t.class_id] = counts.get(t.class_id, 0) + 1
    holdout = min(cfg.lvlm_holdout_per_class, max(1, min(counts.values()) // 2))
    train_trips, held_trips = _caption_holdout(seen_trips, holdout)
    train_data = make_train_data(train_trips)
    held_data = make_train_data(held_trips)
    skc = build_skeletonclip(triplets[0].skeleton.num_joints, cfg)
    if args.skeletonclip:
        skc, _ = load_dual_encoder(args.skeletonclip)
    else:
        head = ClassifierHead(skc.encoder.d_out, len(train_data.prompts), seed=cfg.seed)
        pretrain_skeleton(skc.encoder, head, train_data, split, cfg)
        align_skeletonclip(skc, train_data, split, cfg)
    skc.encoder.ps.set_all_trainable(False)
    shape = triplets[0].video.frames.shape
    f_v = VideoEncoder(channels=shape[1], height=shape[2], width=shape[3], seed=cfg.seed)
    f_v.ps.set_all_trainable(False)
    lm = lvlm.ToyCausalLM()
    record = RunRecord(name=args.name, seed=cfg.seed)
    proj_v, proj_s = lvlm.train_projectors(lm, f_v, skc.encoder, train_data, split, cfg,
                                           use_skeleton=cfg.lvlm_use_skeleton,
                                           epochs=cfg.lvlm_epochs, record=record)
    held_nll, held_acc = lvlm.evaluate_nll(lm, f_v, skc.encoder, proj_v, proj_s, held_data)
    arrays = {f"proj_v.{n}": t.data.copy() for n, t in proj_v.ps.items()}
    if proj_s is not None:
        arrays.update({f"proj_s.{n}": t.data.copy() for n, t in proj_s.ps.items()})
    from .encoders import save_arrays

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_arrays(out, arrays, config_text=f"use_skeleton = {args.use_skeleton}\nseed = {cfg.seed}\n")
    print(f"held-out caption NLL {held_nll:.4f}, next-token acc {held_acc:.4f}; "
          f"projectors saved to {out}")
    return 0


def cmd_caption(args) -> int:
    triplets = read_dataset(args.data)
    if not 0 <= args.video < len(triplets):
        raise ConfigError(f"--video index out of range (dataset has {len(triplets)} clips)")
    from .encoders import load_arrays

    arrays, _, _ = load_arrays(args.ckpt)
    lm = lvlm.ToyCausalLM()
    f_v = VideoEncoder(seed=args.seed if args.seed is not None else 0)
    f_v.ps.set_all_trainable(False)
    proj_v = lvlm.Projector(lvlm.ProjectorConfig(f_v.d_out, triplets[args.video].video.num_frames,
                                                 lm.config.width), seed=0, tag="proj_v")
    proj_v.ps.load_state({n[len("proj_v."):]: a for n, a in arrays.items()
                          if n.startswith("proj_v.")})
    text = lvlm.generate_caption(lm, proj_v, f_v, triplets[args.video].video,
                                 query=args.query, max_len=args.max_len)
    print(text)
    return 0


def cmd_run_plan(args) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"),
                      out_root_override=args.out_root)
    summary = run_plan(plan, workers=args.workers)
    print(f"summary written to {summary}")
    return 0


def cmd_sweep_alpha(args) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"),
                      out_root_override=args.out_root)
    if len(plan.cells) != 1:
        raise ConfigError("sweep-alpha expects a plan with exactly one base cell")
    alphas = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
    summary, chart = sweep_alpha(plan.cells[0], alphas, plan.seeds, plan.out_root,
                                 workers=args.workers)
    print(f"summary written to {summary}; chart written to {chart}")
    return 0


def cmd_emit_summary(args) -> int:
    out = emit_summary([Path(d) for d in args.run_dirs], Path(args.out))
    print(f"summary written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ski", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_train_flags(p, with_split=True):
        p.add_argument("--data", required=True, help="dataset container file")
        if with_split:
            p.add_argument("--split", required=True, help="seen/unseen split file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None,
                       help="override every phase's epoch count")
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", help="flat key-value dataset config (data.* keys)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inspect-ckpt", help="print checkpoint array names/shapes/norms")
    p.add_argument("ckpt")
    p.set_defaults(func=cmd_inspect_ckpt)

    p = sub.add_parser("pretrain-skeleton", help="supervised skeleton pretraining")
    add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain_skeleton)

    p = sub.add_parser("align-skeletonclip", help="skeleton-language alignment")
    add_train_flags(p)
    p.add_argument("--init", help="pretrained skeleton checkpoint to start from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align_skeletonclip)

    p = sub.add_parser("finetune-videoclip", help="video-language fine-tuning")
    add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune_videoclip)

    p = sub.add_parser("train-scd", help="joint distillation between the dual encoders")
    add_train_flags(p)
    p.add_argument("--videoclip", required=True, help="fine-tuned VideoCLIP checkpoint")
    p.add_argument("--skeletonclip", required=True, help="aligned SkeletonCLIP checkpoint")
    p.add_argument("--kd-mode", dest="kd_mode", default="online",
                   choices=["online", "offline", "feature", "feature-proj"])
    p.add_argument("--distill", default="mse", choices=["mse", "kl", "contrastive"])
    p.add_argument("--alpha", type=float, default=LossConfig().alpha)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_scd)

    p = sub.add_parser("train-baseline", help="alignment baselines")
    add_train_flags(p)
    p.add_argument("--kind", required=True, choices=["trimodal", "crossproj"])
    p.add_argument("--videoclip", help="frozen VideoCLIP checkpoint (crossproj)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="unseen", choices=["seen", "unseen"],
                   help="which side of the split to score")
    p.add_argument("--split-file", dest="split_file",
                   help="split file (defaults to <data>.split)")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--saliency-out", dest="saliency_out",
                   help="base path for saliency PGM/NPY artifacts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-lvlm", help="projector-only LVLM training")
    add_train_flags(p)
    p.add_argument("--use-skeleton", dest="use_skeleton", default="true",
                   choices=["true", "false"])
    p.add_argument("--skeletonclip", help="aligned SkeletonCLIP checkpoint "
                                          "(trained in-process when omitted)")
    p.add_argument("--name", default="lvlm")
    p.add_argument("--out", required=True, help="projector checkpoint path")
    p.set_defaults(func=cmd_train_lvlm)

    p = sub.add_parser("caption", help="greedy caption generation (video only)")
    p.add_argument("--ckpt", required=True, help="projector checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--video", type=int, required=True, help="clip index in the dataset")
    p.add_argument("--query", default=lvlm.DEFAULT_QUERY)
    p.add_argument("--max-len", dest="max_len", type=int, default=16)
    p.add_argument("--seed", type=int, default=0, help="seed of the frozen video encoder")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("run-plan", help="execute an experiment plan")
    p.add_argument("plan")
    p.add_argument("--out-root", dest="out_root",
                   help=f"output root (also via ${OUT_ROOT_ENV})")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run_plan)

    p = sub.add_parser("sweep-alpha", help="sweep the distillation weight of a base cell")
    p.add_argument("plan", help="plan file with exactly one cell")
    p.add_argument("--alphas", required=True, help="comma-separated weights, 0 allowed")
    p.add_argument("--out-root", dest="out_root")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("emit-summary", help="aggregate run records into a table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_summary)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SkiError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
