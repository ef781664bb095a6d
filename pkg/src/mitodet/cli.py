"""Command-line front end for the detection pipeline.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .config import (PipelineConfig, apply_overrides, config_to_dict, load_config)
from .dataio import (load_manifest, patch_bank_load, patch_bank_save,
                     parse_detections, serialize_detections)
from .errors import ConfigError, DataError, NumericalError
from .infer import save_probability_png16, plan_tiles, run_tiled
from .metrics import write_pr_csv
from .mine import save_report, scan_wsi
from .model import ScorerConfig
from .synth import SynthConfig, generate_corpus
from . import report


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config snapshot to start from")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override rng seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")


def _resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    config = apply_overrides(config, overrides)
    if args.seed is not None:
        config = config.replace(rng_seed=args.seed)
    return config


def _scorer_for(args, config: PipelineConfig) -> ScorerConfig:
    scorer = ScorerConfig.desk_scale() if args.scorer == "desk" else ScorerConfig.reference()
    if scorer.patch_size != config.patch_size:
        raise ConfigError(
            f"pipeline patch_size {config.patch_size} does not match the "
            f"{args.scorer} scorer ({scorer.patch_size}); pass "
            f"--set patch_size={scorer.patch_size}")
    return scorer


def _snapshot(args, config: PipelineConfig, extra: dict) -> None:
    payload = {"pipeline": config_to_dict(config)}
    payload.update(extra)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    overrides = {}
    for item in args.synth_set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--synth-set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    base = SynthConfig(seed=args.seed if args.seed is not None else 0)
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(SynthConfig)}
    updates = {}
    for key, raw in overrides.items():
        if key not in fields:
            raise ConfigError(f"unknown synth config key {key!r}")
        current = fields[key]
        if isinstance(current, tuple):
            updates[key] = tuple(type(current[0])(v) for v in raw.split(","))
        else:
            updates[key] = type(current)(raw)
    cfg = dataclasses.replace(base, **updates)
    summary = generate_corpus(args.out, cfg,
                              train_cases=args.train_cases,
                              hpfs_per_case=args.hpfs_per_case,
                              val_cases=args.val_cases,
                              val_hpfs_per_case=args.val_hpfs_per_case,
                              wsis=args.wsis)
    del summary["wsi_gt"]
    (args.out / "synth_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"corpus written to {args.out}: {summary}")
    return 0


def _write_trace(trace, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "loss"])
        for row in trace:
            writer.writerow([row.iteration, f"{row.lr:.8g}", f"{row.loss:.8f}"])


def cmd_train(args) -> int:
    config = _resolve_config(args)
    scorer = _scorer_for(args, config)
    manifest = load_manifest(args.manifest)
    data = pipeline.load_labeled(manifest)
    fg_wsi = patch_bank_load(args.fg_wsi_bank) if args.fg_wsi_bank else None
    if args.mode == "semi_supervised" and not fg_wsi:
        raise DataError("semi_supervised mode needs --fg-wsi-bank with mined patches")
    result = pipeline.run_training(data, config, scorer, args.mode, fg_wsi)
    _snapshot(args, config, {"scorer": scorer.to_dict(), "mode": args.mode})
    checkpoint_save(args.out / "checkpoint_boundary.ckpt", result.boundary_params,
                    scorer, config.hnm_iteration, result.boundary_opt)
    checkpoint_save(args.out / "checkpoint_final.ckpt", result.params,
                    scorer, config.total_iterations, result.opt)
    _write_trace(result.trace, args.out / "trace.csv")
    report.render_training_trace(result.trace, args.out / "trace.svg")
    print(f"trained {config.total_iterations} iterations; final loss "
          f"{result.trace[-1].loss:.4f}; checkpoints in {args.out}")
    return 0


def cmd_mine(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    if not manifest.unlabeled:
        raise DataError(f"{args.manifest}: manifest lists no wsis to mine")
    ckpt: Checkpoint = checkpoint_load(args.checkpoint)
    if ckpt.scorer.patch_size != config.patch_size:
        raise ConfigError(f"checkpoint patch size {ckpt.scorer.patch_size} != "
                          f"pipeline patch_size {config.patch_size}")
    _snapshot(args, config, {"scorer": ckpt.scorer.to_dict()})
    all_records = []
    reports = []
    for entry in manifest.unlabeled:
        source = manifest.open_wsi(entry)
        records, rep = scan_wsi(ckpt.params, ckpt.scorer, source, config)
        all_records.extend(records)
        reports.append(rep)
        save_report(rep, args.out / f"report_{entry.wsi_id}.json")
    patch_bank_save(all_records, args.out / "fg_wsi_bank")
    kept = sum(r.patches_kept for r in reports)
    cand = sum(r.candidates_before_consensus for r in reports)
    print(f"mined {kept} patches from {len(reports)} slides "
          f"({cand} candidates before consensus)")
    return 0


def cmd_infer(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    ckpt = checkpoint_load(args.checkpoint)
    if ckpt.scorer.patch_size != config.patch_size:
        raise ConfigError(f"checkpoint patch size {ckpt.scorer.patch_size} != "
                          f"pipeline patch_size {config.patch_size}")
    _snapshot(args, config, {"scorer": ckpt.scorer.to_dict()})
    data = pipeline.load_labeled(manifest)
    for image in data.images:
        if args.dump_maps:
            plan = plan_tiles(image.shape[0], image.shape[1],
                              config.window_size, config.window_overlap)
            prob = run_tiled(ckpt.params, image.pixels, plan, config, ckpt.scorer)
            save_probability_png16(prob, args.out / "maps" / f"{image.image_id}.png")
        dets = pipeline.detect_image(ckpt.params, ckpt.scorer, image.pixels, config)
        serialize_detections(dets, args.out / f"{image.image_id}.csv")
    print(f"wrote detections for {len(data.images)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    data = pipeline.load_labeled(manifest)
    detections = {}
    for image in data.images:
        det_path = args.detections / f"{image.image_id}.csv"
        detections[image.image_id] = parse_detections(det_path)
    summary = pipeline.evaluate(detections, data, config)
    _snapshot(args, config, {})
    write_pr_csv(summary.sweep.points, args.out / "pr_curve.csv")
    report.render_pr_curve(summary.sweep.points, args.out / "pr_curve.svg")
    (args.out / "summary.txt").write_text(pipeline.summary_text(summary))
    (args.out / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    print(pipeline.summary_text(summary), end="")
    return 0


def cmd_experiment_datasize(args) -> int:
    config = _resolve_config(args)
    scorer = _scorer_for(args, config)
    train_manifest = load_manifest(args.manifest)
    val_manifest = load_manifest(args.val_manifest)
    train_data = pipeline.load_labeled(train_manifest)
    val_data = pipeline.load_labeled(val_manifest)
    fractions = sorted(float(f) for f in args.fractions.split(","))
    cases = sorted({img.case_id for img in train_data.images})
    if len(cases) < len(fractions):
        raise DataError(f"need at least {len(fractions)} cases to partition, "
                        f"have {len(cases)}")
    _snapshot(args, config, {"scorer": scorer.to_dict(),
                             "fractions": fractions})
    rows = []
    for fraction in fractions:
        n_cases = max(1, round(fraction * len(cases)))
        subset = pipeline.restrict_cases(train_data, cases[:n_cases])
        result = pipeline.run_training(subset, config, scorer, "supervised")
        detections = pipeline.infer_manifest(result.params, scorer, val_data,
                                             config, min_score=args.min_score)
        summary = pipeline.evaluate(detections, val_data, config)
        run_dir = args.out / f"fraction_{fraction:.2f}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_pr_csv(summary.sweep.points, run_dir / "pr_curve.csv")
        (run_dir / "summary.json").write_text(
            json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
        rows.append((fraction, n_cases, summary.sweep.best_f1))
        print(f"fraction {fraction:.2f}: {n_cases} cases, "
              f"max F1 {summary.sweep.best_f1:.4f}")
    with open(args.out / "datasize.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "cases", "max_f1"])
        for fraction, n_cases, best in rows:
            writer.writerow([f"{fraction:.4f}", n_cases, f"{best:.6f}"])
    report.render_datasize([(f, b) for f, _, b in rows], args.out / "datasize.svg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        "mitodet", description="Self-training mitosis detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/val corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-cases", type=int, default=10)
    p.add_argument("--hpfs-per-case", type=int, default=4)
    p.add_argument("--val-cases", type=int, default=5)
    p.add_argument("--val-hpfs-per-case", type=int, default=2)
    p.add_argument("--wsis", type=int, default=5)
    p.add_argument("--synth-set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the detector on labeled fields")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--mode", choices=["supervised", "semi_supervised"],
                   default="supervised")
    p.add_argument("--scorer", choices=["reference", "desk"], default="reference")
    p.add_argument("--fg-wsi-bank", type=Path, default=None,
                   help="patch bank directory from 'mine'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("mine", help="mine mitosis patches from unlabeled slides")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("infer", help="detect mitoses on a manifest's images")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dump-maps", action="store_true",
                   help="also dump 16-bit probability maps")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score detection CSVs against a manifest")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True,
                   help="directory with <image_id>.csv files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment-datasize",
                       help="train at increasing training-set fractions")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--val-manifest", type=Path, required=True)
    p.add_argument("--fractions", default="0.25,0.5,1.0")
    p.add_argument("--scorer", choices=["reference", "desk"], default="desk")
    p.add_argument("--min-score", type=float, default=0.1,
                   help="extraction threshold for sweep-friendly curves")
    p.set_defaults(func=cmd_experiment_datasize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
