"""Binary dataset files and CSV report emitters.

Dataset layout (little endian; documented in README):
  magic   b"CSIP"
  u32     format version (currently 1)
  32s     scene hash (SHA-256 of the scene's canonical text)
  u32     scene text length, then that many UTF-8 bytes (self-description)
  u8      split kind (0 pretrain, 1 labeled, 2 validation)
  u32,u32 antennas, subcarriers
  u64     record count
  records: i64 time index, u32 csi count V, u32 azimuth count V', u8 truth
           flag, V * (N_B*N_C) complex entries as interleaved re/im f64,
           V' azimuth f64, V * 2 truth (azimuth_deg, distance_m) f64 if
           the truth flag is set

CSV files quote nothing and format floats with repr-level precision, so a
re-run under the same configuration reproduces byte-identical files.
"""

from __future__ import annotations

import struct
from typing import Optional, Sequence

import numpy as np

from .config import scene_canonical_text, scene_hash
from .simulate import LabeledSample, SceneConfig, Snapshot

DATASET_MAGIC = b"CSIP"
DATASET_VERSION = 1

SPLIT_KINDS = {"pretrain": 0, "labeled": 1, "validation": 2}
SPLIT_NAMES = {v: k for k, v in SPLIT_KINDS.items()}


class DataFormatError(RuntimeError):
    """Malformed, truncated, or mismatched dataset file."""


def _as_records(split: Sequence) -> list[Snapshot]:
    records = []
    for item in split:
        if isinstance(item, Snapshot):
            records.append(item)
        elif isinstance(item, LabeledSample):
            records.append(Snapshot(item.time_index, [item.csi], np.empty(0),
                                    item.position.reshape(1, 2)))
        else:
            raise TypeError(f"cannot serialize {type(item).__name__}")
    return records


def save_dataset(path, split_kind: str, split: Sequence, scene: SceneConfig) -> None:
    records = _as_records(split)
    text = scene_canonical_text(scene).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(scene_hash(scene))
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        f.write(struct.pack("<B", SPLIT_KINDS[split_kind]))
        f.write(struct.pack("<II", scene.num_antennas, scene.num_subcarriers))
        f.write(struct.pack("<Q", len(records)))
        for rec in records:
            has_truth = rec.truth_positions is not None
            f.write(struct.pack("<qIIB", rec.time_index, len(rec.csi),
                                len(rec.detected_azimuths), has_truth))
            for h in rec.csi:
                interleaved = np.empty(h.size * 2)
                interleaved[0::2] = h.real.ravel()
                interleaved[1::2] = h.imag.ravel()
                f.write(interleaved.astype("<f8").tobytes())
            f.write(np.asarray(rec.detected_azimuths, dtype="<f8").tobytes())
            if has_truth:
                f.write(np.ascontiguousarray(rec.truth_positions, dtype="<f8").tobytes())


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(f"{path}: truncated payload while reading {what}")
    return data


def load_dataset(path, expect_scene: Optional[SceneConfig] = None):
    """Read a dataset file back as (split kind, records, scene text).

    With `expect_scene` set (strict mode) the stored scene hash must match
    that configuration's hash.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise DataFormatError(f"{path}: not a dataset file (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != DATASET_VERSION:
            raise DataFormatError(f"{path}: unsupported dataset version {version}")
        stored_hash = _read_exact(f, 32, path, "scene hash")
        (text_len,) = struct.unpack("<I", _read_exact(f, 4, path, "scene text length"))
        scene_text = _read_exact(f, text_len, path, "scene text").decode("utf-8")
        if expect_scene is not None and stored_hash != scene_hash(expect_scene):
            raise DataFormatError(
                f"{path}: dataset was generated under a different scene configuration")
        (kind_code,) = struct.unpack("<B", _read_exact(f, 1, path, "split kind"))
        if kind_code not in SPLIT_NAMES:
            raise DataFormatError(f"{path}: unknown split kind {kind_code}")
        nb, nc = struct.unpack("<II", _read_exact(f, 8, path, "matrix shape"))
        (count,) = struct.unpack("<Q", _read_exact(f, 8, path, "record count"))
        records = []
        for r in range(count):
            t, v, vprime, has_truth = struct.unpack(
                "<qIIB", _read_exact(f, 17, path, f"record {r} header"))
            if v == 0:
                raise DataFormatError(f"{path}: record {r} declares an empty CSI list")
            csi = []
            for _ in range(v):
                raw = np.frombuffer(
                    _read_exact(f, 16 * nb * nc, path, f"record {r} CSI"), dtype="<f8")
                csi.append((raw[0::2] + 1j * raw[1::2]).reshape(nb, nc))
            azimuths = np.frombuffer(
                _read_exact(f, 8 * vprime, path, f"record {r} azimuths"), dtype="<f8").copy()
            truth = None
            if has_truth:
                truth = np.frombuffer(
                    _read_exact(f, 16 * v, path, f"record {r} truth"),
                    dtype="<f8").reshape(v, 2).copy()
            records.append(Snapshot(t, csi, azimuths, truth))
        trailing = f.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes after {count} declared records")
    return SPLIT_NAMES[kind_code], records, scene_text


def records_to_labeled(records: Sequence[Snapshot]) -> list[LabeledSample]:
    samples = []
    for rec in records:
        if rec.truth_positions is None:
            raise DataFormatError(f"record at t={rec.time_index} carries no truth positions")
        for h, pos in zip(rec.csi, rec.truth_positions):
            samples.append(LabeledSample(rec.time_index, h, pos.copy()))
    return samples


# ---------------------------------------------------------------------------
# CSV emitters (fixed column schemas, deterministic formatting)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_loss_curve(path, curve) -> None:
    write_csv(path, ("step", "lr_encoder", "lr_head", "loss"),
              list(zip(curve.steps, curve.lr_encoder, curve.lr_head, curve.loss)))


def write_cdf(path, errors: np.ndarray) -> None:
    """Sorted per-sample errors with their empirical CDF."""
    ordered = np.sort(np.asarray(errors, dtype=float))
    n = len(ordered)
    rows = [(i + 1, e, (i + 1) / n) for i, e in enumerate(ordered)]
    write_csv(path, ("rank", "error", "cdf"), rows)


def write_eval_report(path, report, extra: Optional[dict] = None) -> None:
    rows = [("mae_azimuth_deg", report.mae_azimuth_deg),
            ("mae_distance_m", report.mae_distance_m),
            ("mean_positioning_error_m", report.mean_positioning_error_m),
            ("n_samples", len(report.azimuth_error_cdf))]
    for key, value in (extra or {}).items():
        rows.append((key, value))
    write_csv(path, ("metric", "value"), rows)


def write_val_curve(path, curve) -> None:
    write_csv(path, ("epoch", "mae_azimuth_deg", "mae_distance_m", "positioning_error_m"),
              list(zip(curve.epochs, curve.mae_azimuth_deg, curve.mae_distance_m,
                       curve.positioning_error_m)))


def write_experiment_cells(path, cells) -> None:
    rows = [(c.method, c.n_labeled, c.seed, c.bins,
             c.report.mae_azimuth_deg, c.report.mae_distance_m,
             c.report.mean_positioning_error_m,
             c.best_report.mean_positioning_error_m if c.best_report else "",
             c.best_epoch) for c in cells]
    write_csv(path, ("method", "n_labeled", "seed", "bins", "mae_azimuth_deg",
                     "mae_distance_m", "positioning_error_m",
                     "best_positioning_error_m", "best_epoch"), rows)


def write_experiment_summary(path, rows: Sequence[dict]) -> None:
    header = ("method", "n_labeled", "seeds", "mean_positioning_error_m",
              "std_positioning_error_m", "min_positioning_error_m",
              "max_positioning_error_m")
    write_csv(path, header, [[row[k] for k in header] for row in rows])
