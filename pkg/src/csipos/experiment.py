"""Config-driven experiment runner: datasets, the method/N_T grid, CSVs.

One experiment = for each seed, generate (or load) the three splits,
pretrain once, then fine-tune the proposed and non-pretrained models for
every N_T in the grid, evaluating on the shared validation split. Per-cell
results, a per-(method, N_T) summary, and per-K pretraining loss curves (on
the first seed) are written as CSVs. Seeds are independent, so they can fan
out over worker processes.
"""

from __future__ import annotations

import multiprocessing
import os
from dataclasses import replace
from typing import Optional

from . import dataio, training
from .config import ExperimentConfig
from .labels import AngularGrid
from .nn.models import ModelConfig
from .simulate import DatasetSizes, SceneConfig, generate_datasets


def dataset_paths(out_dir: str) -> dict[str, str]:
    return {kind: os.path.join(out_dir, f"{kind}.csip")
            for kind in ("pretrain", "labeled", "validation")}


def generate_and_save(cfg: ExperimentConfig, out_dir: str) -> dict[str, str]:
    """Write the three splits for cfg's scene seed; labeled split covers the
    largest N_T in the grid."""
    sizes = DatasetSizes(cfg.grid.n_pretrain, max(cfg.grid.nt_grid), cfg.grid.n_validation)
    pretrain, labeled, validation = generate_datasets(cfg.scene, sizes)
    os.makedirs(out_dir, exist_ok=True)
    paths = dataset_paths(out_dir)
    dataio.save_dataset(paths["pretrain"], "pretrain", pretrain, cfg.scene)
    dataio.save_dataset(paths["labeled"], "labeled", labeled, cfg.scene)
    dataio.save_dataset(paths["validation"], "validation", validation, cfg.scene)
    return paths


def load_splits(cfg: ExperimentConfig, data_dir: str, strict: bool = True):
    paths = dataset_paths(data_dir)
    expect = cfg.scene if strict else None
    _, pretrain, _ = dataio.load_dataset(paths["pretrain"], expect)
    _, labeled_records, _ = dataio.load_dataset(paths["labeled"], expect)
    _, validation_records, _ = dataio.load_dataset(paths["validation"], expect)
    return (pretrain, dataio.records_to_labeled(labeled_records),
            dataio.records_to_labeled(validation_records))


def _seed_worker(args):
    cfg, seed, verbose = args
    scene = replace(cfg.scene, seed=seed)
    sizes = DatasetSizes(cfg.grid.n_pretrain, max(cfg.grid.nt_grid), cfg.grid.n_validation)
    pretrain_split, labeled_pool, validation = generate_datasets(scene, sizes)

    def progress(method, nt, s, err):
        if verbose:
            print(f"  seed {s} {method} n_t={nt}: positioning error {err:.3f} m", flush=True)

    return training.run_seed_cells(scene, cfg.model, cfg.pretrain, cfg.downstream,
                                   cfg.grid.nt_grid, seed, pretrain_split,
                                   labeled_pool, validation, progress=progress)


def pretrain_loss_curves_by_k(cfg: ExperimentConfig, seed: int) -> dict[int, training.LossCurve]:
    """Pretraining loss per K on one seed's data (difficulty comparison)."""
    scene = replace(cfg.scene, seed=seed)
    sizes = DatasetSizes(cfg.grid.n_pretrain, 1, 1)
    snapshots, _, _ = generate_datasets(scene, sizes)
    curves = {}
    for k in cfg.grid.k_grid:
        pre_cfg = replace(cfg.pretrain, bins=k)
        grid = AngularGrid(scene.df_range_deg, k)
        data = training.prepare_pretrain(snapshots, grid,
                                         normalize=scene.normalize_magnitude)
        encoder, fn1, _ = training.build_models(cfg.model, scene, k, seed)
        curves[k] = training.pretrain(encoder, fn1, data, pre_cfg,
                                      training.init_rng(seed, 10))
    return curves


def run_experiment(cfg: ExperimentConfig, out_dir: str, jobs: Optional[int] = None,
                   verbose: bool = False, loss_curves: bool = True):
    """Full grid; returns (cells, summary rows) and writes the CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    jobs = jobs or cfg.grid.jobs
    worker_args = [(cfg, seed, verbose) for seed in cfg.grid.seeds]
    if jobs > 1 and len(worker_args) > 1:
        with multiprocessing.get_context("fork").Pool(min(jobs, len(worker_args))) as pool:
            per_seed = pool.map(_seed_worker, worker_args)
    else:
        per_seed = [_seed_worker(a) for a in worker_args]
    cells = [cell for seed_cells in per_seed for cell in seed_cells]
    cells.sort(key=lambda c: (c.method, c.n_labeled, c.seed))
    summary = training.summarize_cells(cells)
    dataio.write_experiment_cells(os.path.join(out_dir, "experiment_cells.csv"), cells)
    dataio.write_experiment_summary(os.path.join(out_dir, "experiment_summary.csv"), summary)
    if loss_curves:
        for k, curve in pretrain_loss_curves_by_k(cfg, cfg.grid.seeds[0]).items():
            dataio.write_loss_curve(os.path.join(out_dir, f"pretrain_loss_k{k}.csv"), curve)
    return cells, summary
