"""Experiment cells, plan execution, alpha sweeps, and summary emission.

A cell fully specifies one experiment (kind + dataset + training config); a
plan is a list of cells crossed with a seed list. Each (cell, seed) run leaves
a byte-stable record plus a checkpoint in its own directory and is skipped on
re-run when its fingerprint matches.
"""

from __future__ import annotations

import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import lvlm
from .charts import line_chart_svg
from .configfile import build_dataclass, fingerprint, flatten_dataclass, parse_flat_text
from .core import ConfigError, ContractViolation, DataFormatError
from .encoders import ClassifierHead, VideoEncoder
from .synthdata import DatasetConfig, SplitSpec, Triplet, generate_dataset
from .training import (
    RunRecord,
    TrainConfig,
    align_skeletonclip,
    build_skeletonclip,
    build_videoclip,
    clone_model,
    finetune_videoclip,
    make_train_data,
    pretrain_skeleton,
    record_from_text,
    record_to_text,
    save_dual_encoder,
    seen_subset,
    train_baseline,
    train_scd,
)
from .zseval import alignment_report, evaluate_split

CELL_KINDS = ("scd", "videoclip", "skeletonclip", "baseline_trimodal",
              "baseline_crossproj", "lvlm")

OUT_ROOT_ENV = "SKI_OUT_ROOT"


@dataclass(frozen=True)
class ExperimentCell:
    name: str
    kind: str
    data: DatasetConfig
    train: TrainConfig
    benchmark: str = "main"

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ConfigError(f"cell kind must be one of {CELL_KINDS}, got {self.kind!r}")
        if not self.name or any(c in self.name for c in "/\\ \t"):
            raise ConfigError(f"invalid cell name {self.name!r}")

    def flat(self) -> dict[str, str]:
        out = {"kind": self.kind, "benchmark": self.benchmark}
        out.update(flatten_dataclass(self.data, prefix="data."))
        out.update(flatten_dataclass(self.train, prefix="train."))
        return out

    def fingerprint(self) -> str:
        return fingerprint(self.flat())


@dataclass(frozen=True)
class ExperimentPlan:
    cells: tuple[ExperimentCell, ...]
    seeds: tuple[int, ...]
    out_root: Path

    def __post_init__(self):
        names = [c.name for c in self.cells]
        if len(names) != len(set(names)):
            raise ConfigError("cell names must be unique")
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")


def parse_plan(text: str, out_root_override: str | None = None) -> ExperimentPlan:
    """Plan file format: `plan.seeds = 0,1,2`, `plan.out_root = runs`, then
    `cell.<name>.kind = scd` plus per-cell `data.*` / `train.*` overrides."""
    flat = parse_flat_text(text)
    seeds = tuple(int(s) for s in flat.pop("plan.seeds", "0").split(",") if s.strip())
    out_root = flat.pop("plan.out_root", "runs")
    cell_names: list[str] = []
    cell_keys: dict[str, dict[str, str]] = {}
    for key, value in flat.items():
        if not key.startswith("cell."):
            raise ConfigError(f"unknown plan key {key!r}")
        rest = key[len("cell."):]
        if "." not in rest:
            raise ConfigError(f"malformed cell key {key!r}")
        name, sub = rest.split(".", 1)
        if name not in cell_keys:
            cell_keys[name] = {}
            cell_names.append(name)
        cell_keys[name][sub] = value
    if not cell_keys:
        raise ConfigError("plan defines no cells")
    cells = []
    for name in cell_names:
        sub = cell_keys[name]
        kind = sub.pop("kind", None)
        if kind is None:
            raise ConfigError(f"cell {name!r} is missing its kind")
        benchmark = sub.pop("benchmark", "main")
        data = build_dataclass(DatasetConfig, {k: v for k, v in sub.items() if k.startswith("data.")},
                               prefix="data.")
        train = build_dataclass(TrainConfig, {k: v for k, v in sub.items() if k.startswith("train.")},
                                prefix="train.")
        unknown = [k for k in sub if not (k.startswith("data.") or k.startswith("train."))]
        if unknown:
            raise ConfigError(f"cell {name!r}: unknown keys {unknown}")
        cells.append(ExperimentCell(name=name, kind=kind, data=data, train=train,
                                    benchmark=benchmark))
    root = Path(out_root_override or os.environ.get(OUT_ROOT_ENV) or out_root)
    return ExperimentPlan(cells=tuple(cells), seeds=seeds, out_root=root)


# -- dataset cache -------------------------------------------------------------------

_dataset_cache: dict[str, tuple[list[Triplet], SplitSpec]] = {}


def dataset_for(config: DatasetConfig) -> tuple[list[Triplet], SplitSpec]:
    key = fingerprint(flatten_dataclass(config))
    if key not in _dataset_cache:
        _dataset_cache[key] = generate_dataset(config)
    return _dataset_cache[key]


def _caption_holdout(seen: list[Triplet], holdout_per_class: int
                     ) -> tuple[list[Triplet], list[Triplet]]:
    counts: dict[int, int] = {}
    per_class: dict[int, int] = {}
    for t in seen:
        per_class[t.class_id] = per_class.get(t.class_id, 0) + 1
    train, held = [], []
    for t in seen:
        k = counts.get(t.class_id, 0)
        keep = per_class[t.class_id] - holdout_per_class
        (train if k < keep else held).append(t)
        counts[t.class_id] = k + 1
    if not held or not train:
        raise ConfigError("caption holdout leaves an empty side; lower lvlm_holdout_per_class")
    return train, held


# -- cell execution -------------------------------------------------------------------


def run_cell(cell: ExperimentCell, seed: int, out_dir: Path) -> RunRecord:
    """Execute one (cell, seed) run and persist its record and checkpoint.

    `seed` is the training seed; the benchmark dataset (and its split) is
    pinned by the cell's DatasetConfig, mirroring fixed evaluation splits.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = replace(cell.train, seed=seed)
    record = RunRecord(name=cell.name, seed=seed, fingerprint=cell.fingerprint())
    triplets, split = dataset_for(cell.data)
    seen = make_train_data(seen_subset(triplets, split))
    dims = dict(channels=triplets[0].video.frames.shape[1],
                height=cell.data.H, width=cell.data.W)

    def eval_into(model, prefix: str):
        unseen_rep = evaluate_split(model, triplets, split, "unseen")
        seen_rep = evaluate_split(model, triplets, split, "seen")
        record.metrics[f"{prefix}unseen_top1"] = unseen_rep.overall_top1
        record.metrics[f"{prefix}seen_top1"] = seen_rep.overall_top1

    checkpoint = out_dir / "model.ckpt"
    if cell.kind in ("scd", "skeletonclip", "videoclip", "baseline_crossproj"):
        videoclip = build_videoclip(dims["channels"], dims["height"], dims["width"], cfg)
        skeletonclip = build_skeletonclip(cell.data.J, cfg)
        head = ClassifierHead(skeletonclip.encoder.d_out, len(seen.prompts), seed=cfg.seed)
        if cell.kind in ("scd", "skeletonclip") and cfg.pretrain_skeletonclip:
            pretrain_skeleton(skeletonclip.encoder, head, seen, split, cfg, record=record)
            align_skeletonclip(skeletonclip, seen, split, cfg, record=record)
        if cell.kind in ("scd", "videoclip", "baseline_crossproj") and cfg.pretrain_videoclip:
            finetune_videoclip(videoclip, seen, split, cfg, record=record)
        if cell.kind == "skeletonclip":
            eval_into(skeletonclip, "")
            save_dual_encoder(checkpoint, skeletonclip, record.fingerprint)
        elif cell.kind == "videoclip":
            eval_into(videoclip, "")
            save_dual_encoder(checkpoint, videoclip, record.fingerprint)
        elif cell.kind == "baseline_crossproj":
            model = train_baseline("crossproj", seen, split, cfg, num_joints=cell.data.J,
                                   videoclip=videoclip, record=record)
            eval_into(model, "")
            save_dual_encoder(checkpoint, model, record.fingerprint)
        else:
            eval_into(videoclip, "videoclip_")
            eval_into(skeletonclip, "skeletonclip_")
            student = clone_model(videoclip)
            teacher = clone_model(skeletonclip)
            train_scd(student, teacher, seen, split, cfg, record=record)
            eval_into(student, "")
            unseen_trips = [t for t in triplets if t.class_id in split.unseen_class_ids]
            prompts = [dict({t.class_id: t.prompt for t in unseen_trips})[c]
                       for c in sorted(split.unseen_class_ids)]
            record.metrics["alignment_unseen_mean"] = alignment_report(
                student, unseen_trips, prompts).overall_mean
            record.metrics["alignment_unseen_mean_baseline"] = alignment_report(
                videoclip, unseen_trips, prompts).overall_mean
            save_dual_encoder(checkpoint, student, record.fingerprint)
    elif cell.kind == "baseline_trimodal":
        model = train_baseline("trimodal", seen, split, cfg, num_joints=cell.data.J,
                               channels=dims["channels"], height=dims["height"],
                               width=dims["width"], record=record)
        eval_into(model, "")
        save_dual_encoder(checkpoint, model, record.fingerprint)
    elif cell.kind == "lvlm":
        skeletonclip = build_skeletonclip(cell.data.J, cfg)
        head = ClassifierHead(skeletonclip.encoder.d_out, len(seen.prompts), seed=cfg.seed)
        pretrain_skeleton(skeletonclip.encoder, head, seen, split, cfg, record=record)
        align_skeletonclip(skeletonclip, seen, split, cfg, record=record)
        g_s = skeletonclip.encoder
        g_s.ps.set_all_trainable(False)
        f_v = VideoEncoder(channels=dims["channels"], height=dims["height"],
                           width=dims["width"], seed=cfg.seed)
        f_v.ps.set_all_trainable(False)
        lm = lvlm.ToyCausalLM()
        train_trips, held_trips = _caption_holdout(seen_subset(triplets, split),
                                                   cfg.lvlm_holdout_per_class)
        train_data = make_train_data(train_trips)
        held_data = make_train_data(held_trips)
        proj_v, proj_s = lvlm.train_projectors(lm, f_v, g_s, train_data, split, cfg,
                                               use_skeleton=cfg.lvlm_use_skeleton,
                                               epochs=cfg.lvlm_epochs, record=record)
        train_nll, train_acc = lvlm.evaluate_nll(lm, f_v, g_s, proj_v, proj_s, train_data)
        held_nll, held_acc = lvlm.evaluate_nll(lm, f_v, g_s, proj_v, proj_s, held_data)
        record.metrics.update(train_nll=train_nll, train_next_token_acc=train_acc,
                              held_nll=held_nll, held_next_token_acc=held_acc)
        arrays = {f"proj_v.{n}": t.data.copy() for n, t in proj_v.ps.items()}
        if proj_s is not None:
            arrays.update({f"proj_s.{n}": t.data.copy() for n, t in proj_s.ps.items()})
        from .encoders import save_arrays
        save_arrays(checkpoint, arrays, fingerprint=record.fingerprint)
    (out_dir / "record.txt").write_text(record_to_text(record), encoding="utf-8")
    return record


def _run_cell_entry(args):
    cell_flat, name, benchmark, seed, out_dir = args
    data = build_dataclass(DatasetConfig, cell_flat, prefix="data.")
    train = build_dataclass(TrainConfig, cell_flat, prefix="train.")
    cell = ExperimentCell(name=name, kind=cell_flat["kind"], data=data, train=train,
                          benchmark=benchmark)
    run_cell(cell, seed, Path(out_dir))
    return str(out_dir)


def run_plan(plan: ExperimentPlan, workers: int = 1) -> Path:
    """Execute every (cell, seed) not already completed; emit the summary.

    Completed runs are detected by a record.txt carrying the cell fingerprint;
    a record with the same name but a different fingerprint is an error.
    """
    plan.out_root.mkdir(parents=True, exist_ok=True)
    pending = []
    for cell in plan.cells:
        for seed in plan.seeds:
            out_dir = plan.out_root / cell.name / f"seed{seed}"
            record_path = out_dir / "record.txt"
            if record_path.exists():
                existing = record_from_text(record_path.read_text(encoding="utf-8"))
                if existing.fingerprint != cell.fingerprint():
                    raise ConfigError(
                        f"{record_path}: fingerprint {existing.fingerprint[:12]}... does not "
                        f"match cell config {cell.fingerprint()[:12]}...; refusing to resume"
                    )
                continue
            pending.append((cell, seed, out_dir))
    if workers > 1 and len(pending) > 1:
        jobs = [({**c.flat()}, c.name, c.benchmark, s, str(d)) for c, s, d in pending]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_cell_entry, jobs))
    else:
        for cell, seed, out_dir in pending:
            run_cell(cell, seed, out_dir)
    run_dirs = [plan.out_root / cell.name / f"seed{seed}"
                for cell in plan.cells for seed in plan.seeds]
    return emit_summary(run_dirs, plan.out_root / "summary.tsv")


def sweep_alpha(base_cell: ExperimentCell, alphas: list[float], seeds: tuple[int, ...],
                out_root: Path, workers: int = 1) -> tuple[Path, Path]:
    """Clone the base cell across distillation weights, run, and chart
    accuracy vs alpha with a log-scaled x axis (alpha=0 pinned left)."""
    if not alphas:
        raise ConfigError("alpha list must be non-empty")
    if any(a < 0 for a in alphas):
        raise ConfigError("alpha values must be >= 0")
    cells = []
    for alpha in alphas:
        loss = replace(base_cell.train.loss, alpha=float(alpha))
        cells.append(replace(base_cell, name=f"{base_cell.name}_alpha{alpha:g}",
                             train=replace(base_cell.train, loss=loss)))
    plan = ExperimentPlan(cells=tuple(cells), seeds=seeds, out_root=out_root)
    summary = run_plan(plan, workers=workers)
    points = []
    for cell, alpha in zip(cells, alphas):
        vals = []
        for seed in seeds:
            rec = record_from_text((out_root / cell.name / f"seed{seed}" / "record.txt")
                                   .read_text(encoding="utf-8"))
            vals.append(rec.metrics["unseen_top1"])
        points.append((float(alpha), float(np.mean(vals))))
    chart = out_root / "alpha_sweep.svg"
    line_chart_svg(chart, points, title="unseen top-1 vs distillation weight",
                   xlabel="alpha", ylabel="unseen top-1",
                   log_x=any(a > 0 for a in alphas))
    return summary, chart


# -- summaries -------------------------------------------------------------------------


def emit_summary(run_dirs: list[Path], out_path: Path) -> Path:
    """Aggregate records into a deterministic TSV: one row per cell with
    mean/std per metric and a provenance column. When a metric appears for the
    same method under exactly two benchmarks, a harmonic-mean column is added."""
    from .zseval import harmonic_mean

    by_cell: dict[str, list[tuple[Path, RunRecord]]] = {}
    for d in sorted(set(Path(d) for d in run_dirs)):
        record_path = d / "record.txt"
        if not record_path.exists():
            raise DataFormatError(f"missing run record: {record_path}")
        try:
            rec = record_from_text(record_path.read_text(encoding="utf-8"))
        except (ValueError, KeyError, ContractViolation) as e:
            raise DataFormatError(f"corrupt run record {record_path}: {e}") from e
        by_cell.setdefault(rec.name, []).append((d, rec))

    metric_names = sorted({m for runs in by_cell.values() for _, r in runs for m in r.metrics})
    lines = ["\t".join(["cell", "seeds"]
                       + [f"{m}_{s}" for m in metric_names for s in ("mean", "std")]
                       + ["runs"])]
    rows: dict[str, dict[str, float]] = {}
    for name in sorted(by_cell):
        runs = sorted(by_cell[name], key=lambda dr: dr[1].seed)
        cols = [name, ",".join(str(r.seed) for _, r in runs)]
        rows[name] = {}
        for m in metric_names:
            vals = [r.metrics[m] for _, r in runs if m in r.metrics]
            if vals:
                mean = float(np.mean(vals))
                std = float(statistics.pstdev(vals)) if len(vals) > 1 else 0.0
                rows[name][m] = mean
                cols += [repr(round(mean, 10)), repr(round(std, 10))]
            else:
                cols += ["-", "-"]
        cols.append(";".join(str(d) for d, _ in runs))
        lines.append("\t".join(cols))

    # harmonic mean across exactly two benchmarks of the same method, for
    # every cell named <method>@<benchmark>
    groups: dict[str, list[str]] = {}
    for name in rows:
        if "@" in name:
            groups.setdefault(name.split("@", 1)[0], []).append(name)
    hm_lines = []
    for method in sorted(groups):
        members = sorted(groups[method])
        if len(members) != 2:
            continue
        vals = [rows[m].get("unseen_top1") for m in members]
        if any(v is None or v <= 0 for v in vals):
            continue
        hm_lines.append(f"{method}\tharmonic_mean_unseen_top1\t{harmonic_mean(vals)!r}\t{';'.join(members)}")
    if hm_lines:
        lines.append("")
        lines.append("\t".join(["method", "metric", "value", "cells"]))
        lines.extend(hm_lines)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_path
