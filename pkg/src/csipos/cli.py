"""Command-line entry points.

Subcommands: generate | pretrain | train | evaluate | gradcheck | experiment.
Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 data/file
error, 4 numeric failure (training divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio, experiment, training
from .config import ConfigError, ExperimentConfig, load_config, scene_hash, with_seed
from .labels import AngularGrid
from .nn import gradcheck
from .nn.models import (CheckpointError, load_checkpoint, save_checkpoint)
from .training import TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for config problems
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csipos",
                     description="Camera-assisted semi-supervised CSI positioning")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, dataset=False, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the scene seed")
        p.add_argument("--out", default=None, help="output directory")
        if dataset:
            p.add_argument("--dataset", required=True,
                           help="directory holding the generated splits")
            p.add_argument("--no-strict", action="store_true",
                           help="skip the dataset/config hash check")
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="model checkpoint path")

    p = sub.add_parser("generate", help="write the pretrain/labeled/validation splits")
    common(p)

    p = sub.add_parser("pretrain", help="pretrain encoder + occupancy head")
    common(p, dataset=True)
    p.add_argument("--k", type=int, default=None, help="override the angular bin count")

    p = sub.add_parser("train", help="downstream fine-tuning on labeled pairs")
    common(p, dataset=True, checkpoint=True)
    p.add_argument("--method", choices=training.METHODS, default="proposed")
    p.add_argument("--nt", type=int, default=None,
                   help="number of labeled samples (default: all in the split)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the validation split")
    common(p, dataset=True, checkpoint=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=100, help="number of seeds")

    p = sub.add_parser("experiment", help="run the full method/N_T grid")
    common(p)
    p.add_argument("--jobs", type=int, default=None, help="parallel seed workers")
    p.add_argument("--no-loss-curves", action="store_true",
                   help="skip the per-K pretraining loss curves")
    return parser


def _out_dir(args, cfg: ExperimentConfig) -> str:
    out = args.out or cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    return out


def _magnitude_scale(cfg, data_dir, strict, checkpoint_meta=None) -> float:
    if checkpoint_meta is not None and "meta.magnitude_scale" in checkpoint_meta:
        return float(checkpoint_meta["meta.magnitude_scale"])
    if not cfg.scene.normalize_magnitude:
        return 1.0
    pre, _, _ = (None, None, None)
    path = experiment.dataset_paths(data_dir)["pretrain"]
    _, records, _ = dataio.load_dataset(path, cfg.scene if strict else None)
    from .preprocess import magnitude_scale
    return magnitude_scale([h for s in records for h in s.csi])


def cmd_generate(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    out = _out_dir(args, cfg)
    paths = experiment.generate_and_save(cfg, out)
    for kind, path in paths.items():
        print(f"wrote {kind}: {path}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    if args.k is not None:
        cfg = replace(cfg, pretrain=replace(cfg.pretrain, bins=args.k))
    out = _out_dir(args, cfg)
    strict = not args.no_strict
    _, snapshots, _ = dataio.load_dataset(
        experiment.dataset_paths(args.dataset)["pretrain"], cfg.scene if strict else None)
    grid = AngularGrid(cfg.scene.df_range_deg, cfg.pretrain.bins)
    data = training.prepare_pretrain(snapshots, grid,
                                     normalize=cfg.scene.normalize_magnitude)
    seed = cfg.scene.seed
    encoder, fn1, _ = training.build_models(cfg.model, cfg.scene, cfg.pretrain.bins, seed)
    curve = training.pretrain(encoder, fn1, data, cfg.pretrain, training.init_rng(seed, 10))
    tensors = list(encoder.state_items()) + list(fn1.state_items())
    tensors.append(("meta.steps", np.array(float(cfg.pretrain.iterations))))
    tensors.append(("meta.magnitude_scale", np.array(data.scale)))
    ckpt = os.path.join(out, f"pretrained_k{cfg.pretrain.bins}.ckpt")
    save_checkpoint(ckpt, tensors, scene_hash(cfg.scene))
    dataio.write_loss_curve(os.path.join(out, f"pretrain_loss_k{cfg.pretrain.bins}.csv"), curve)
    print(f"wrote {ckpt} (final loss {curve.loss[-1]:.6f})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    out = _out_dir(args, cfg)
    strict = not args.no_strict
    paths = experiment.dataset_paths(args.dataset)
    expect = cfg.scene if strict else None
    _, labeled_records, _ = dataio.load_dataset(paths["labeled"], expect)
    _, val_records, _ = dataio.load_dataset(paths["validation"], expect)
    labeled_pool = dataio.records_to_labeled(labeled_records)
    if args.nt is not None:
        if args.nt > len(labeled_pool):
            raise dataio.DataFormatError(
                f"requested {args.nt} labeled samples, split holds {len(labeled_pool)}")
        labeled_pool = labeled_pool[:args.nt]

    seed = cfg.scene.seed
    ckpt_meta = None
    if args.method == "proposed":
        if not args.checkpoint:
            raise dataio.DataFormatError("--method proposed needs a pretraining --checkpoint")
        ckpt_meta, _ = load_checkpoint(
            args.checkpoint, scene_hash(cfg.scene) if strict else None)
    scale = _magnitude_scale(cfg, args.dataset, strict, ckpt_meta)
    labeled = training.prepare_labeled(labeled_pool, scale)
    validation = training.prepare_labeled(dataio.records_to_labeled(val_records), scale)

    init_seed = seed if args.method == "proposed" else seed + 7919
    encoder, _, fn2 = training.build_models(cfg.model, cfg.scene, cfg.pretrain.bins, init_seed)
    if ckpt_meta is not None:
        encoder.load_state(ckpt_meta)
    down_cfg = replace(cfg.downstream, pretrained=args.method == "proposed")
    result = training.downstream_train(encoder, fn2, labeled, down_cfg,
                                       training.init_rng(seed, 20 + len(labeled_pool)),
                                       val=validation)
    tag = f"{args.method}_nt{len(labeled_pool)}"
    tensors = list(encoder.state_items()) + list(fn2.state_items())
    tensors.append(("meta.steps", np.array(float(cfg.downstream.epochs))))
    tensors.append(("meta.magnitude_scale", np.array(scale)))
    ckpt = os.path.join(out, f"model_{tag}.ckpt")
    save_checkpoint(ckpt, tensors, scene_hash(cfg.scene))
    dataio.write_loss_curve(os.path.join(out, f"train_loss_{tag}.csv"), result.loss_curve)
    dataio.write_val_curve(os.path.join(out, f"val_curve_{tag}.csv"), result.val_curve)
    report = result.final_report
    dataio.write_eval_report(os.path.join(out, f"report_{tag}.csv"), report,
                             extra={"best_positioning_error_m":
                                    result.best_report.mean_positioning_error_m,
                                    "best_epoch": result.best_epoch})
    print(f"wrote {ckpt} (validation positioning error "
          f"{report.mean_positioning_error_m:.4f} m)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    out = _out_dir(args, cfg)
    strict = not args.no_strict
    if not args.checkpoint:
        raise dataio.DataFormatError("evaluate needs a --checkpoint")
    tensors, _ = load_checkpoint(args.checkpoint, scene_hash(cfg.scene) if strict else None)
    _, val_records, _ = dataio.load_dataset(
        experiment.dataset_paths(args.dataset)["validation"], cfg.scene if strict else None)
    scale = _magnitude_scale(cfg, args.dataset, strict, tensors)
    validation = training.prepare_labeled(dataio.records_to_labeled(val_records), scale)
    seed = cfg.scene.seed

    if any(name.startswith("fn2.") for name in tensors):
        encoder, _, fn2 = training.build_models(cfg.model, cfg.scene, cfg.pretrain.bins, seed)
        encoder.load_state(tensors)
        fn2.load_state(tensors)
        report = training.evaluate_downstream(encoder, fn2, validation)
        dataio.write_eval_report(os.path.join(out, "eval_report.csv"), report)
        dataio.write_cdf(os.path.join(out, "eval_azimuth_cdf.csv"), report.azimuth_error_cdf)
        print(f"positioning error {report.mean_positioning_error_m:.4f} m; "
              f"azimuth MAE {report.mae_azimuth_deg:.3f} deg; "
              f"distance MAE {report.mae_distance_m:.4f} m")
        return EXIT_OK

    bins = len(tensors["fn1.fc2.b"])
    grid = AngularGrid(cfg.scene.df_range_deg, bins)
    encoder, fn1, _ = training.build_models(cfg.model, cfg.scene, bins, seed)
    encoder.load_state(tensors)
    fn1.load_state(tensors)
    errors = training.evaluate_pretrain(encoder, fn1, validation, grid)
    dataio.write_cdf(os.path.join(out, "eval_azimuth_cdf.csv"), errors)
    rows = [("mean_azimuth_error_deg", float(errors.mean())),
            ("frac_within_1_bin", float(np.mean(errors <= grid.bin_width))),
            ("frac_within_2_bins", float(np.mean(errors <= 2 * grid.bin_width))),
            ("bins", bins), ("n_samples", len(errors))]
    dataio.write_csv(os.path.join(out, "eval_report.csv"), ("metric", "value"), rows)
    print(f"mean azimuth error {errors.mean():.3f} deg over {len(errors)} samples "
          f"({np.mean(errors <= 2 * grid.bin_width) * 100:.1f}% within 2 bins)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = False
    for result in gradcheck.run_all(seeds=args.seeds):
        status = "pass" if result.passed else "FAIL"
        print(f"{result.name:18s} seeds={result.seeds:4d} "
              f"max_rel_error={result.max_rel_error:.3e}  {status}")
        failed |= not result.passed
    if failed:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("all gradient checks passed")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    out = _out_dir(args, cfg)
    cells, summary = experiment.run_experiment(cfg, out, jobs=args.jobs, verbose=True,
                                               loss_curves=not args.no_loss_curves)
    print(f"\n{'method':12s} {'n_t':>5s} {'mean pos err (m)':>18s} {'std':>8s}")
    for row in summary:
        print(f"{row['method']:12s} {row['n_labeled']:5d} "
              f"{row['mean_positioning_error_m']:18.4f} {row['std_positioning_error_m']:8.4f}")
    print(f"\nwrote {os.path.join(out, 'experiment_cells.csv')} and experiment_summary.csv")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dataio.DataFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
