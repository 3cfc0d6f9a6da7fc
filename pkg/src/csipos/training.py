"""Pretraining, downstream fine-tuning, evaluation, and the method grid.

Pretraining teaches encoder + head I to reproduce each snapshot's fused
angular label from its unlabeled CSI set: per-vehicle predicted occupancy
vectors are noisy-or fused into one snapshot prediction and pulled toward
the image-derived label with a per-bin MSE. Downstream training fine-tunes
encoder + head II on labeled (CSI, position) pairs with a rectangular
coordinate MSE; the non-pretrained baseline trains the same architecture
from scratch on the labeled set alone.

Both stages are plain mini-batch gradient descent with stepped lr decay,
counted in iterations (pretraining) or epochs (downstream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .labels import AngularGrid, label_snapshot
from .nn.models import Encoder, FnNetworkI, FnNetworkII, ModelConfig
from .nn.optim import lr_schedule, sgd_step
from .preprocess import apply_magnitude_scale, magnitude_scale, stack_snapshot, to_tensor
from .simulate import LabeledSample, SceneConfig, Snapshot

_TAG_INIT = 0x171

EVAL_BATCH = 256


class TrainingDivergedError(RuntimeError):
    """Loss or parameters went non-finite; carries the failing step index."""

    def __init__(self, stage: str, step: int):
        super().__init__(f"{stage} diverged (non-finite values) at step {step}")
        self.stage = stage
        self.step = step


@dataclass(frozen=True)
class PretrainConfig:
    iterations: int = 3000
    batch_size: int = 64
    lr_encoder: float = 1e-3
    lr_fn1: float = 1e-3
    bins: int = 30
    decay_every: int = 100
    decay_factor: float = 0.9

    def __post_init__(self):
        if min(self.iterations, self.batch_size, self.bins, self.decay_every) < 1:
            raise ValueError(f"pretrain config fields must be positive: {self}")
        if self.lr_encoder <= 0 or self.lr_fn1 <= 0:
            raise ValueError("pretrain learning rates must be positive")


@dataclass(frozen=True)
class DownstreamConfig:
    epochs: int = 3000
    batch_size: int = 32
    lr_encoder: float = 1e-3 / 20
    lr_fn2: float = 1e-3
    pretrained: bool = True
    decay_every: int = 100
    decay_factor: float = 0.9
    eval_every: int = 50

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.decay_every, self.eval_every) < 1:
            raise ValueError(f"downstream config fields must be positive: {self}")
        if self.lr_encoder <= 0 or self.lr_fn2 <= 0:
            raise ValueError("downstream learning rates must be positive")

    @property
    def effective_lr_encoder(self) -> float:
        # without a pretrained encoder both networks start at the head lr
        return self.lr_encoder if self.pretrained else self.lr_fn2


def polar_to_rect(azimuth_deg: np.ndarray, distance_m: np.ndarray) -> np.ndarray:
    """[d*cos(az*pi/180), d*sin(az*pi/180)] rows."""
    rad = np.radians(np.asarray(azimuth_deg, dtype=float))
    d = np.asarray(distance_m, dtype=float)
    return np.stack([d * np.cos(rad), d * np.sin(rad)], axis=-1)


# ---------------------------------------------------------------------------
# data preparation (cached once before the training loops)
# ---------------------------------------------------------------------------

@dataclass
class PretrainData:
    tensors: list[np.ndarray]  # per snapshot: [V, 3, N_B, N_C]
    labels: np.ndarray         # [N, K]
    scale: float


@dataclass
class LabeledData:
    x: np.ndarray           # [N, 3, N_B, N_C]
    polar: np.ndarray       # [N, 2] (azimuth_deg, distance_m)
    rect: np.ndarray        # [N, 2]
    scale: float


def prepare_pretrain(snapshots: Sequence[Snapshot], grid: AngularGrid,
                     normalize: bool = True, scale: Optional[float] = None) -> PretrainData:
    if scale is None:
        scale = magnitude_scale([h for s in snapshots for h in s.csi]) if normalize else 1.0
    tensors = [apply_magnitude_scale(stack_snapshot(s.csi), scale) for s in snapshots]
    labels = np.stack([label_snapshot(grid, s.detected_azimuths) for s in snapshots])
    return PretrainData(tensors, labels, scale)


def prepare_labeled(samples: Sequence[LabeledSample], scale: float = 1.0) -> LabeledData:
    x = np.stack([apply_magnitude_scale(to_tensor(s.csi), scale) for s in samples])
    polar = np.stack([s.position for s in samples])
    return LabeledData(x, polar, polar_to_rect(polar[:, 0], polar[:, 1]), scale)


# ---------------------------------------------------------------------------
# pretraining (encoder + head I)
# ---------------------------------------------------------------------------

def nor_fuse_batch(g: np.ndarray, counts: Sequence[int]):
    """Noisy-or fuse per-snapshot rows of g, with leave-one-out factors.

    g stacks each snapshot's per-vehicle occupancy rows; `counts` gives the
    rows per snapshot. Returns (fused [len(counts), K], exclusive [same as g])
    where exclusive[i] = prod over the snapshot's other rows of (1 - g), i.e.
    d fused / d g_i. Cumulative products keep this stable when entries
    approach 1 (no division).
    """
    q = 1.0 - g
    fused = np.empty((len(counts), g.shape[1]))
    exclusive = np.empty_like(g)
    start = 0
    for i, v in enumerate(counts):
        block = q[start:start + v]
        left = np.ones_like(block)
        if v > 1:
            np.cumprod(block[:-1], axis=0, out=left[1:])
        right = np.ones_like(block)
        if v > 1:
            right[:-1] = np.cumprod(block[:0:-1], axis=0)[::-1]
        exclusive[start:start + v] = left * right
        fused[i] = 1.0 - left[-1] * block[-1]
        start += v
    return fused, exclusive


def occupancy_head_loss(fn1: FnNetworkI, z: np.ndarray, counts: Sequence[int],
                        labels: np.ndarray, train: bool = True,
                        backward: bool = True):
    """Head-I loss on feature vectors: noisy-or fuse per-snapshot occupancy
    predictions, then mean over snapshots of ||label - fused||^2 / K.
    Returns (loss, dloss/dz or None)."""
    g = fn1.forward(z, train)
    fused, exclusive = nor_fuse_batch(g, counts)
    diff = fused - labels
    k = g.shape[1]
    loss = float(np.mean(np.sum(diff * diff, axis=1) / k))
    if not backward:
        return loss, None
    dfused = 2.0 * diff / (len(counts) * k)
    dg = np.repeat(dfused, counts, axis=0) * exclusive
    return loss, fn1.backward(dg)


def pretrain_batch_loss(encoder: Encoder, fn1: FnNetworkI,
                        tensors: Sequence[np.ndarray], labels: np.ndarray,
                        train: bool = True, backward: bool = True) -> float:
    """One forward (and optional backward) pass over a snapshot batch.
    Gradients accumulate into the models' grad buffers."""
    counts = [t.shape[0] for t in tensors]
    flat = np.concatenate(tensors, axis=0)
    z = encoder.forward(flat, train)
    loss, dz = occupancy_head_loss(fn1, z, counts, labels, train, backward)
    if backward:
        encoder.backward(dz)
    return loss


@dataclass
class LossCurve:
    steps: list[int] = field(default_factory=list)
    lr_encoder: list[float] = field(default_factory=list)
    lr_head: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def append(self, step: int, lr_e: float, lr_h: float, loss: float):
        self.steps.append(step)
        self.lr_encoder.append(lr_e)
        self.lr_head.append(lr_h)
        self.loss.append(loss)


def _check_finite(stage: str, step: int, loss: float, models) -> None:
    if not math.isfinite(loss):
        raise TrainingDivergedError(stage, step)
    for model in models:
        for _, param, _ in model.named_parameters():
            if not np.all(np.isfinite(param)):
                raise TrainingDivergedError(stage, step)


def pretrain(encoder: Encoder, fn1: FnNetworkI, data: PretrainData,
             cfg: PretrainConfig, rng: np.random.Generator) -> LossCurve:
    """Mini-batch gradient descent over snapshot batches (with replacement;
    a batch size >= the dataset collapses to full-batch GD)."""
    n = len(data.tensors)
    curve = LossCurve()
    for it in range(cfg.iterations):
        lr_e = lr_schedule(cfg.lr_encoder, it, cfg.decay_every, cfg.decay_factor)
        lr_f = lr_schedule(cfg.lr_fn1, it, cfg.decay_every, cfg.decay_factor)
        if cfg.batch_size >= n:
            idx = np.arange(n)
        else:
            idx = rng.integers(0, n, size=cfg.batch_size)
        encoder.zero_grads()
        fn1.zero_grads()
        loss = pretrain_batch_loss(encoder, fn1, [data.tensors[i] for i in idx],
                                   data.labels[idx], train=True)
        sgd_step(encoder.named_parameters(), lr_e)
        sgd_step(fn1.named_parameters(), lr_f)
        _check_finite("pretraining", it, loss, (encoder, fn1))
        curve.append(it, lr_e, lr_f, loss)
    return curve


def predict_occupancy(encoder: Encoder, fn1: FnNetworkI, x: np.ndarray) -> np.ndarray:
    """Inference-mode per-sample occupancy vectors, chunked."""
    outs = []
    for start in range(0, x.shape[0], EVAL_BATCH):
        chunk = x[start:start + EVAL_BATCH]
        outs.append(fn1.forward(encoder.forward(chunk, train=False), train=False))
    return np.concatenate(outs, axis=0)


def evaluate_pretrain(encoder: Encoder, fn1: FnNetworkI, data: LabeledData,
                      grid: AngularGrid) -> np.ndarray:
    """Per-sample azimuth errors, bin width * |true bin - argmax bin|."""
    g = predict_occupancy(encoder, fn1, data.x)
    predicted_bin = np.argmax(g, axis=1) + 1
    true_bin = np.array([grid.peak_bin(a) for a in data.polar[:, 0]])
    return grid.bin_width * np.abs(true_bin - predicted_bin).astype(float)


# ---------------------------------------------------------------------------
# downstream training (encoder + head II) and evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Validation metrics; the CDF is the sorted per-sample azimuth error."""

    azimuth_error_cdf: np.ndarray
    mae_azimuth_deg: float
    mae_distance_m: float
    mean_positioning_error_m: float


def predict_positions(encoder: Encoder, fn2: FnNetworkII, x: np.ndarray):
    az, dist = [], []
    for start in range(0, x.shape[0], EVAL_BATCH):
        chunk = x[start:start + EVAL_BATCH]
        a, d = fn2.forward(encoder.forward(chunk, train=False), train=False)
        az.append(a)
        dist.append(d)
    return np.concatenate(az), np.concatenate(dist)


def evaluate_downstream(encoder: Encoder, fn2: FnNetworkII, data: LabeledData) -> EvalReport:
    az_hat, d_hat = predict_positions(encoder, fn2, data.x)
    rect_hat = polar_to_rect(az_hat, d_hat)
    az_err = np.abs(data.polar[:, 0] - az_hat)
    d_err = np.abs(data.polar[:, 1] - d_hat)
    pos_err = np.linalg.norm(data.rect - rect_hat, axis=1)
    return EvalReport(
        azimuth_error_cdf=np.sort(az_err),
        mae_azimuth_deg=float(az_err.mean()),
        mae_distance_m=float(d_err.mean()),
        mean_positioning_error_m=float(pos_err.mean()),
    )


def position_head_loss(fn2: FnNetworkII, z: np.ndarray, rect: np.ndarray,
                       train: bool = True, backward: bool = True):
    """Head-II loss on feature vectors: polar prediction to rectangular
    coordinates, then mean over the batch of ||p - p_hat||^2 / 2.
    Returns (loss, dloss/dz or None)."""
    az_hat, d_hat = fn2.forward(z, train)
    rect_hat = polar_to_rect(az_hat, d_hat)
    diff = rect_hat - rect
    loss = float(np.mean(np.sum(diff * diff, axis=1) / 2.0))
    if not backward:
        return loss, None
    dp = diff / z.shape[0]
    rad = np.radians(az_hat)
    cos, sin = np.cos(rad), np.sin(rad)
    g_az = (np.pi / 180.0) * d_hat * (-sin * dp[:, 0] + cos * dp[:, 1])
    g_d = cos * dp[:, 0] + sin * dp[:, 1]
    return loss, fn2.backward(g_az, g_d)


def downstream_batch_loss(encoder: Encoder, fn2: FnNetworkII, x: np.ndarray,
                          rect: np.ndarray, train: bool = True,
                          backward: bool = True) -> float:
    """Position-regression loss over a labeled batch; gradients accumulate
    into the models' grad buffers."""
    z = encoder.forward(x, train)
    loss, dz = position_head_loss(fn2, z, rect, train, backward)
    if backward:
        encoder.backward(dz)
    return loss


@dataclass
class ValCurve:
    epochs: list[int] = field(default_factory=list)
    mae_azimuth_deg: list[float] = field(default_factory=list)
    mae_distance_m: list[float] = field(default_factory=list)
    positioning_error_m: list[float] = field(default_factory=list)


@dataclass
class DownstreamResult:
    loss_curve: LossCurve
    val_curve: ValCurve
    final_report: Optional[EvalReport]
    best_report: Optional[EvalReport]
    best_epoch: int
    best_state: Optional[dict[str, np.ndarray]]


def _model_state(encoder: Encoder, head) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in
            list(encoder.state_items()) + list(head.state_items())}


def downstream_train(encoder: Encoder, fn2: FnNetworkII, data: LabeledData,
                     cfg: DownstreamConfig, rng: np.random.Generator,
                     val: Optional[LabeledData] = None) -> DownstreamResult:
    """Epoch-based fine-tuning; one epoch covers the labeled set once
    (shuffled, without replacement). Validation runs every `eval_every`
    epochs; the best epoch by positioning error is tracked alongside the
    final model."""
    n = data.x.shape[0]
    loss_curve = LossCurve()
    val_curve = ValCurve()
    best_err, best_epoch, best_state, best_report = math.inf, -1, None, None
    for epoch in range(cfg.epochs):
        lr_e = lr_schedule(cfg.effective_lr_encoder, epoch, cfg.decay_every, cfg.decay_factor)
        lr_f = lr_schedule(cfg.lr_fn2, epoch, cfg.decay_every, cfg.decay_factor)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            encoder.zero_grads()
            fn2.zero_grads()
            loss = downstream_batch_loss(encoder, fn2, data.x[idx], data.rect[idx], train=True)
            sgd_step(encoder.named_parameters(), lr_e)
            sgd_step(fn2.named_parameters(), lr_f)
            epoch_loss += loss
            batches += 1
        epoch_loss /= batches
        _check_finite("downstream training", epoch, epoch_loss, (encoder, fn2))
        loss_curve.append(epoch, lr_e, lr_f, epoch_loss)
        if val is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            report = evaluate_downstream(encoder, fn2, val)
            val_curve.epochs.append(epoch)
            val_curve.mae_azimuth_deg.append(report.mae_azimuth_deg)
            val_curve.mae_distance_m.append(report.mae_distance_m)
            val_curve.positioning_error_m.append(report.mean_positioning_error_m)
            if report.mean_positioning_error_m < best_err:
                best_err = report.mean_positioning_error_m
                best_epoch = epoch
                best_state = _model_state(encoder, fn2)
                best_report = report
    final_report = evaluate_downstream(encoder, fn2, val) if val is not None else None
    return DownstreamResult(loss_curve, val_curve, final_report, best_report,
                            best_epoch, best_state)


# ---------------------------------------------------------------------------
# the method grid (proposed vs. non-pretrained baseline over N_T)
# ---------------------------------------------------------------------------

METHODS = ("proposed", "baseline-a")
# reserved identifiers, intentionally unimplemented here
RESERVED_METHODS = ("baseline-b-sscl", "hard-em-hungarian")


def init_rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _TAG_INIT, role]))


def build_models(model_cfg: ModelConfig, scene_cfg: SceneConfig, bins: int, seed: int):
    encoder = Encoder(model_cfg, init_rng(seed, 0))
    fn1 = FnNetworkI(model_cfg, bins, init_rng(seed, 1))
    fn2 = FnNetworkII(model_cfg, scene_cfg.df_range_deg, scene_cfg.max_range_m,
                      init_rng(seed, 2))
    return encoder, fn1, fn2


@dataclass
class ExperimentCell:
    method: str
    n_labeled: int
    seed: int
    bins: int
    report: EvalReport
    best_report: Optional[EvalReport]
    best_epoch: int


def run_seed_cells(scene_cfg: SceneConfig, model_cfg: ModelConfig,
                   pre_cfg: PretrainConfig, down_cfg: DownstreamConfig,
                   nt_grid: Sequence[int], seed: int,
                   pretrain_snapshots, labeled_pool, validation,
                   progress=None) -> list[ExperimentCell]:
    """All (method, N_T) cells for one seed on pre-generated splits.

    The labeled pool holds max(nt_grid) pairs; each N_T uses its prefix.
    The proposed method pretrains once and re-loads that state per cell.
    """
    grid = AngularGrid(scene_cfg.df_range_deg, pre_cfg.bins)
    pre_data = prepare_pretrain(pretrain_snapshots, grid,
                                normalize=scene_cfg.normalize_magnitude)
    scale = pre_data.scale
    val_data = prepare_labeled(validation, scale)

    encoder, fn1, _ = build_models(model_cfg, scene_cfg, pre_cfg.bins, seed)
    pretrain(encoder, fn1, pre_data, pre_cfg, init_rng(seed, 10))
    pretrained_state = {name: arr.copy() for name, arr in encoder.state_items()}

    cells = []
    for nt in nt_grid:
        labeled = prepare_labeled(labeled_pool[:nt], scale)
        for method in METHODS:
            enc, _, fn2 = build_models(model_cfg, scene_cfg, pre_cfg.bins,
                                       seed if method == "proposed" else seed + 7919)
            cfg = replace(down_cfg, pretrained=method == "proposed")
            if method == "proposed":
                enc.load_state(pretrained_state)
            result = downstream_train(enc, fn2, labeled, cfg,
                                      init_rng(seed, 20 + nt), val=val_data)
            cells.append(ExperimentCell(method, nt, seed, pre_cfg.bins,
                                        result.final_report, result.best_report,
                                        result.best_epoch))
            if progress is not None:
                progress(method, nt, seed, result.final_report.mean_positioning_error_m)
    return cells


def summarize_cells(cells: Sequence[ExperimentCell]):
    """Per-(method, N_T) mean and spread of positioning error over seeds."""
    keys = sorted({(c.method, c.n_labeled) for c in cells})
    rows = []
    for method, nt in keys:
        errs = np.array([c.report.mean_positioning_error_m for c in cells
                         if c.method == method and c.n_labeled == nt])
        rows.append({
            "method": method,
            "n_labeled": nt,
            "seeds": len(errs),
            "mean_positioning_error_m": float(errs.mean()),
            "std_positioning_error_m": float(errs.std()),
            "min_positioning_error_m": float(errs.min()),
            "max_positioning_error_m": float(errs.max()),
        })
    return rows
